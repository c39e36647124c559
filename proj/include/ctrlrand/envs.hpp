#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ctrlrand/errors.hpp"

namespace ctrlrand {

// Terminal reward g(spot, regime value, inventory).
using TerminalFn = std::function<double(double, int, double)>;

// Regimes are addressed by index 0..regime_count()-1 everywhere inside the
// library; regime_value() maps an index to its label (battery: -1, 0, +1).
class ThermalEnv {
public:
    double production_cost = 90.0;
    double cost_on = 5.0;   // c_{0,1}
    double cost_off = 5.0;  // c_{1,0}
    int initial = 1;
    double dt = 1.0;
    TerminalFn terminal;

    int regime_count() const { return 2; }
    int regime_value(int i) const { return i; }
    int regime_index(int value) const { return value; }
    int level_count() const { return 1; }
    double level_value(int) const { return 0.0; }
    int initial_regime() const { return initial; }
    int initial_level() const { return 0; }
    int idle_regime() const { return 0; }
    double step() const { return dt; }

    double running_reward(double spot, int regime) const { return regime == 1 ? spot - production_cost : 0.0; }
    double switch_cost(int from, int to) const {
        if (from == to) return 0.0;
        return to == 1 ? cost_on : cost_off;
    }
    bool admissible(int, int) const { return true; }
    int next_level(int level, int) const { return level; }
    double terminal_reward(double spot, int regime, int level) const {
        return terminal ? terminal(spot, regime_value(regime), level_value(level)) : 0.0;
    }

    void validate() const {
        if (!(cost_on >= 0.0 && cost_off >= 0.0)) throw ConfigError("env.switch_costs must be nonnegative");
        if (initial < 0 || initial > 1) throw ConfigError("env.initial_regime must be 0 or 1");
        if (!(dt > 0.0)) throw ConfigError("env.step must be positive");
    }
};

// Battery with regimes withdraw (-1), idle (0), inject (+1) stored at indices
// 0, 1, 2; inventory K = level * dt with level in 0..k_max.
class BatteryEnv {
public:
    // costs[i][j] = c_{i,j} by index.
    double costs[3][3] = {{0.0, 3.0, 5.0}, {3.0, 0.0, 3.0}, {5.0, 3.0, 0.0}};
    double capacity = 2.0;
    double initial_inventory = 2.0;
    int initial = 0;
    double dt = 1.0;
    TerminalFn terminal;

    int regime_count() const { return 3; }
    int regime_value(int i) const { return i - 1; }
    int regime_index(int value) const { return value + 1; }
    int k_max() const { return static_cast<int>(std::lround(capacity / dt)); }
    int level_count() const { return k_max() + 1; }
    double level_value(int k) const { return k * dt; }
    int initial_regime() const { return initial; }
    int initial_level() const { return static_cast<int>(std::lround(initial_inventory / dt)); }
    int idle_regime() const { return 1; }
    double step() const { return dt; }

    double running_reward(double spot, int regime) const { return -regime_value(regime) * spot; }
    double switch_cost(int from, int to) const { return costs[from][to]; }
    bool admissible(int regime, int level) const {
        const int a = regime_value(regime);
        return !((a < 0 && level == 0) || (a > 0 && level == k_max()));
    }
    int next_level(int level, int regime) const {
        const int k = level + regime_value(regime);
        return k < 0 ? 0 : (k > k_max() ? k_max() : k);
    }
    double terminal_reward(double spot, int regime, int level) const {
        return terminal ? terminal(spot, regime_value(regime), level_value(level)) : 0.0;
    }

    void validate() const {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                if (i == j && costs[i][j] != 0.0) throw ConfigError("env.switch_costs diagonal must be zero");
                if (i != j && !(costs[i][j] > 0.0)) throw ConfigError("env.switch_costs off-diagonal must be positive");
            }
        if (!(dt > 0.0)) throw ConfigError("env.step must be positive");
        const double km = capacity / dt;
        if (!(capacity > 0.0) || std::abs(km - std::round(km)) > 1e-9)
            throw ConfigError("env.capacity must be a positive multiple of env.step");
        const double k0 = initial_inventory / dt;
        if (initial_inventory < 0.0 || initial_inventory > capacity || std::abs(k0 - std::round(k0)) > 1e-9)
            throw ConfigError("env.initial_inventory must be a lattice level in [0, capacity]");
        if (initial < 0 || initial > 2) throw ConfigError("env.initial_regime must be -1, 0 or 1");
        if (!admissible(initial, initial_level())) throw ConfigError("env.initial_regime is not admissible at env.initial_inventory");
    }
};

struct EnvState {
    double time = 0.0;
    double spot = 0.0;
    int regime = 0;
    int level = 0;
    double reward = 0.0;  // cumulative R since the episode start
};

template <class Env>
std::uint32_t admissible_mask(const Env& env, int level) {
    std::uint32_t m = 0;
    for (int i = 0; i < env.regime_count(); ++i)
        if (env.admissible(i, level)) m |= 1u << i;
    return m;
}

template <class Env>
std::vector<int> admissible_actions(const Env& env, int level) {
    std::vector<int> out;
    for (int i = 0; i < env.regime_count(); ++i)
        if (env.admissible(i, level)) out.push_back(i);
    return out;
}

// Instantaneous regime change at state.time; the cost is booked into R.
template <class Env>
std::pair<EnvState, double> switch_regime(const Env& env, EnvState s, int new_regime) {
    if (new_regime < 0 || new_regime >= env.regime_count() || !env.admissible(new_regime, s.level))
        throw MaskViolation("regime " + std::to_string(new_regime) + " not admissible at level " + std::to_string(s.level));
    const double c = env.switch_cost(s.regime, new_regime);
    s.regime = new_regime;
    s.reward -= c;
    return {s, c};
}

// One reward step of length dt with left-endpoint reward. A held regime that
// has become inadmissible is replaced by idle first, at cost c_{a,idle}.
template <class Env>
EnvState accumulate(const Env& env, EnvState s, double dt, bool* forced = nullptr) {
    if (forced) *forced = false;
    if (!env.admissible(s.regime, s.level)) {
        const int idle = env.idle_regime();
        s.reward -= env.switch_cost(s.regime, idle);
        s.regime = idle;
        if (forced) *forced = true;
    }
    s.reward += env.running_reward(s.spot, s.regime) * dt;
    s.level = env.next_level(s.level, s.regime);
    s.time += dt;
    return s;
}

inline double observed_switch_cost(double reward_before, double reward_after) { return reward_before - reward_after; }

}  // namespace ctrlrand
