#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ctrlrand/envs.hpp"
#include "ctrlrand/errors.hpp"
#include "ctrlrand/learn.hpp"
#include "ctrlrand/market.hpp"
#include "ctrlrand/mlp.hpp"
#include "ctrlrand/pointproc.hpp"
#include "ctrlrand/random.hpp"

namespace ctrlrand {

struct DpConfig {
    int nodes = 200;
    double span_sd = 5.5;
    // Probability that an interior lattice date is an action date (p_samp).
    double decision_probability = 1.0;
    double leak_tolerance = 1e-6;

    void validate() const {
        if (nodes < 50) throw ConfigError("dp.nodes must be at least 50");
        if (!(span_sd > 0.0)) throw ConfigError("dp.span_sd must be positive");
        if (!(decision_probability >= 0.0 && decision_probability <= 1.0))
            throw ConfigError("dp decision probability must lie in [0,1]");
    }
    bool operator==(const DpConfig&) const = default;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846); }

// E[(X - a)^+] for X ~ N(mu, s^2).
inline double call_moment(double mu, double s, double a) {
    const double d = (mu - a) / s;
    return (mu - a) * normal_cdf(d) + s * normal_pdf(d);
}

// Expected values of the hat basis on equally spaced `nodes` (flat beyond the
// ends) under N(mu, s^2). Non-negative, sums to one.
inline void hat_weights(std::span<const double> nodes, double mu, double s, std::span<double> w) {
    const std::size_t m = nodes.size();
    if (m == 1) {
        w[0] = 1.0;
        return;
    }
    const double h = nodes[1] - nodes[0];
    thread_local std::vector<double> c;
    c.resize(m);
    if (s == 0.0) {
        for (std::size_t i = 0; i < m; ++i) c[i] = std::max(0.0, mu - nodes[i]);
    } else {
        for (std::size_t i = 0; i < m; ++i) c[i] = call_moment(mu, s, nodes[i]);
    }
    w[0] = 1.0 - (c[0] - c[1]) / h;
    for (std::size_t i = 1; i + 1 < m; ++i) w[i] = (c[i - 1] - 2.0 * c[i] + c[i + 1]) / h;
    w[m - 1] = (c[m - 2] - c[m - 1]) / h;
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        w[i] = std::max(0.0, w[i]);
        sum += w[i];
    }
    for (std::size_t i = 0; i < m; ++i) w[i] /= sum;
}

struct DpSolution {
    int dates = 0, regimes = 0, levels = 0;
    double dt = 1.0;
    double decision_probability = 1.0;
    int initial_regime = 0, initial_level = 0;
    std::vector<std::vector<double>> nodes;  // log-spot deviation nodes per date
    std::vector<std::vector<double>> spots;
    std::vector<std::vector<double>> value;   // per date: [(j * regimes + i) * levels + k]
    std::vector<std::vector<double>> action;  // per date: Q_n(j, a, k) = f(s_j, a) dt + E[V_{n+1}(., a, k')]
    std::vector<std::vector<int>> greedy;     // per date: best regime, -1 where no decision is taken
    std::vector<int> regime_values;
    std::vector<double> level_values;

    std::size_t idx(int j, int i, int k) const { return (static_cast<std::size_t>(j) * regimes + i) * levels + k; }
    double V(int n, int j, int i, int k) const { return value[n][idx(j, i, k)]; }
    double Q(int n, int j, int a, int k) const { return action[n][idx(j, a, k)]; }
    double initial_value() const { return V(0, 0, initial_regime, initial_level); }

    // Q_n(., a, k) linearly interpolated in the deviation x, flat outside.
    double Q_at(int n, double x, int a, int k) const {
        const auto& xs = nodes[n];
        if (xs.size() == 1) return Q(n, 0, a, k);
        if (x <= xs.front()) return Q(n, 0, a, k);
        if (x >= xs.back()) return Q(n, static_cast<int>(xs.size()) - 1, a, k);
        const double h = xs[1] - xs[0];
        const double u = (x - xs[0]) / h;
        int j = std::min(static_cast<int>(u), static_cast<int>(xs.size()) - 2);
        const double w = u - j;
        return (1.0 - w) * Q(n, j, a, k) + w * Q(n, j + 1, a, k);
    }

    // Columns: date, node, spot, regime, inventory, value, greedy_action
    // (regime labels; the action column is empty where no decision is taken).
    void write_csv(std::ostream& os) const {
        char buf[256];
        os << "date,node,spot,regime,inventory,value,greedy_action\n";
        for (int n = 0; n < dates; ++n)
            for (int j = 0; j < static_cast<int>(nodes[n].size()); ++j)
                for (int i = 0; i < regimes; ++i)
                    for (int k = 0; k < levels; ++k) {
                        const int g = greedy[n][idx(j, i, k)];
                        std::snprintf(buf, sizeof buf, "%d,%d,%.12g,%d,%.12g,%.12g,", n, j, spots[n][j], regime_values[i],
                                      level_values[k], V(n, j, i, k));
                        os << buf;
                        if (g >= 0) os << regime_values[g];
                        os << '\n';
                    }
    }
};

namespace detail {

template <class Env>
int best_switch(const Env& env, const DpSolution& sol, int n, int j, int i, int k, double* best_value) {
    int best = -1;
    double bv = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < sol.regimes; ++a) {
        if (!env.admissible(a, k)) continue;
        const double v = -env.switch_cost(i, a) + sol.Q(n, j, a, k);
        const bool better = v > bv || (v == bv && best != i && (a == i || env.switch_cost(i, a) < env.switch_cost(i, best)));
        if (best < 0 || better) {
            best = a;
            bv = v;
        }
    }
    *best_value = bv;
    return best;
}

template <class Env>
double hold_value(const Env& env, const DpSolution& sol, int n, int j, int i, int k) {
    if (env.admissible(i, k)) return sol.Q(n, j, i, k);
    const int idle = env.idle_regime();
    return -env.switch_cost(i, idle) + sol.Q(n, j, idle, k);
}

}  // namespace detail

// Backward induction on a per-date grid of the log-spot deviation
// X_t = sigma exp(-beta t) Y_t, an Ornstein-Uhlenbeck process; conditional
// expectations integrate the piecewise-linear interpolant of V_{n+1}
// exactly against the Gaussian transition.
template <class Env>
DpSolution dp_solve(const Env& env, const PriceModel& model, int dates, const DpConfig& cfg = {}) {
    env.validate();
    model.validate();
    cfg.validate();
    if (dates < 2) throw ConfigError("grid.dates must be at least 2");
    const double dt = model.horizon / (dates - 1);
    if (std::abs(dt - env.step()) > 1e-12) throw ConfigError("env.step must equal the grid step T/(N-1)");
    if (2.0 * normal_cdf(-cfg.span_sd) > cfg.leak_tolerance)
        throw ResolutionError("price grid span leaks more than the tolerated probability mass");

    DpSolution sol;
    sol.dates = dates;
    sol.regimes = env.regime_count();
    sol.levels = env.level_count();
    sol.dt = dt;
    sol.decision_probability = cfg.decision_probability;
    sol.initial_regime = env.initial_regime();
    sol.initial_level = env.initial_level();
    for (int i = 0; i < sol.regimes; ++i) sol.regime_values.push_back(env.regime_value(i));
    for (int k = 0; k < sol.levels; ++k) sol.level_values.push_back(env.level_value(k));

    const LatticeMarket mk(model, dates);
    for (int n = 0; n < dates; ++n) {
        const double sd = std::sqrt(model.log_variance(mk.time[n]));
        std::vector<double> xs;
        if (sd == 0.0) {
            xs.push_back(0.0);
        } else {
            const double a = cfg.span_sd * sd;
            for (int j = 0; j < cfg.nodes; ++j) xs.push_back(-a + 2.0 * a * j / (cfg.nodes - 1));
        }
        std::vector<double> ss;
        for (double x : xs) ss.push_back(model.spot_from_deviation(mk.time[n], x));
        sol.nodes.push_back(std::move(xs));
        sol.spots.push_back(std::move(ss));
    }
    sol.value.resize(dates);
    sol.action.resize(dates);
    sol.greedy.resize(dates);

    const int R = sol.regimes, K = sol.levels;
    const int last = dates - 1;
    {
        const int m = static_cast<int>(sol.nodes[last].size());
        sol.value[last].assign(static_cast<std::size_t>(m) * R * K, 0.0);
        sol.action[last].assign(static_cast<std::size_t>(m) * R * K, 0.0);
        sol.greedy[last].assign(static_cast<std::size_t>(m) * R * K, -1);
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < R; ++i)
                for (int k = 0; k < K; ++k) sol.value[last][sol.idx(j, i, k)] = env.terminal_reward(sol.spots[last][j], i, k);
    }
    const double rho = std::exp(-model.beta * dt);
    const double cond_sd = model.sigma * std::sqrt(-std::expm1(-2.0 * model.beta * dt) / (2.0 * model.beta));
    const double p = cfg.decision_probability;
    std::vector<double> w;
    std::vector<double> ev;
    for (int n = last - 1; n >= 0; --n) {
        const auto& xs = sol.nodes[n];
        const auto& xn = sol.nodes[n + 1];
        const int m = static_cast<int>(xs.size()), mn = static_cast<int>(xn.size());
        const std::size_t sz = static_cast<std::size_t>(m) * R * K;
        sol.value[n].assign(sz, 0.0);
        sol.action[n].assign(sz, 0.0);
        sol.greedy[n].assign(sz, -1);
        w.resize(mn);
        ev.resize(static_cast<std::size_t>(R) * K);
        const auto& vn = sol.value[n + 1];
        for (int j = 0; j < m; ++j) {
            hat_weights(xn, rho * xs[j], cond_sd, w);
            for (int a = 0; a < R; ++a)
                for (int k = 0; k < K; ++k) {
                    double e = 0.0;
                    for (int q = 0; q < mn; ++q) e += w[q] * vn[sol.idx(q, a, k)];
                    ev[a * K + k] = e;
                }
            const double s = sol.spots[n][j];
            for (int a = 0; a < R; ++a)
                for (int k = 0; k < K; ++k)
                    sol.action[n][sol.idx(j, a, k)] = env.running_reward(s, a) * dt + ev[a * K + env.next_level(k, a)];
        }
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < R; ++i)
                for (int k = 0; k < K; ++k) {
                    const double hold = detail::hold_value(env, sol, n, j, i, k);
                    double v = hold;
                    if (n >= 1 && p > 0.0) {
                        double best = 0.0;
                        sol.greedy[n][sol.idx(j, i, k)] = detail::best_switch(env, sol, n, j, i, k, &best);
                        v = p * best + (1.0 - p) * hold;
                    }
                    sol.value[n][sol.idx(j, i, k)] = v;
                }
    }
    return sol;
}

// Largest |V - Bellman(V)| over all nodes, recomputed from scratch.
template <class Env>
double bellman_residual(const Env& env, const PriceModel& model, const DpSolution& sol) {
    const double rho = std::exp(-model.beta * sol.dt);
    const double cond_sd = model.sigma * std::sqrt(-std::expm1(-2.0 * model.beta * sol.dt) / (2.0 * model.beta));
    double worst = 0.0;
    std::vector<double> w;
    for (int n = 0; n + 1 < sol.dates; ++n) {
        const auto& xs = sol.nodes[n];
        const auto& xn = sol.nodes[n + 1];
        w.resize(xn.size());
        for (int j = 0; j < static_cast<int>(xs.size()); ++j) {
            hat_weights(xn, rho * xs[j], cond_sd, w);
            auto q = [&](int a, int k) {
                double e = 0.0;
                for (std::size_t z = 0; z < xn.size(); ++z) e += w[z] * sol.V(n + 1, static_cast<int>(z), a, env.next_level(k, a));
                return env.running_reward(sol.spots[n][j], a) * sol.dt + e;
            };
            for (int i = 0; i < sol.regimes; ++i)
                for (int k = 0; k < sol.levels; ++k) {
                    const int idle = env.idle_regime();
                    const double hold = env.admissible(i, k) ? q(i, k) : -env.switch_cost(i, idle) + q(idle, k);
                    double v = hold;
                    if (n >= 1 && sol.decision_probability > 0.0) {
                        double best = -std::numeric_limits<double>::infinity();
                        for (int a = 0; a < sol.regimes; ++a)
                            if (env.admissible(a, k)) best = std::max(best, -env.switch_cost(i, a) + q(a, k));
                        v = sol.decision_probability * best + (1.0 - sol.decision_probability) * hold;
                    }
                    worst = std::max(worst, std::abs(v - sol.V(n, j, i, k)));
                }
        }
    }
    return worst;
}

// Greedy control read off the DP: argmax over admissible regimes of
// -c + Q_n interpolated at the current deviation.
template <class Env>
class DpControl {
public:
    DpControl(const Env& env, const PriceModel& model, const DpSolution& sol) : env_(&env), model_(&model), sol_(&sol) {}

    int operator()(const StatePoint& s, int from) const {
        const double f = sol_->nodes[s.date].size() == 1 ? 0.0 : 1.0;
        const double x = f * (std::log(s.spot / model_->initial_curve(s.time)) + 0.5 * model_->log_variance(s.time));
        int best = -1;
        double bv = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < sol_->regimes; ++a) {
            if (!env_->admissible(a, s.level)) continue;
            const double v = -env_->switch_cost(from, a) + sol_->Q_at(s.date, x, a, s.level);
            const bool better =
                v > bv || (v == bv && best != from && (a == from || env_->switch_cost(from, a) < env_->switch_cost(from, best)));
            if (best < 0 || better) {
                best = a;
                bv = v;
            }
        }
        return best;
    }

private:
    const Env* env_;
    const PriceModel* model_;
    const DpSolution* sol_;
};

// Monte Carlo value of the DP greedy policy on exact price paths. With a
// decision probability below one, action dates are thinned the same way.
template <class Env>
Estimate mc_value_of_dp_policy(const Env& env, const PriceModel& model, const DpSolution& sol, long n_paths, Rng& rng) {
    const DpControl<Env> control(env, model, sol);
    if (sol.decision_probability >= 1.0) return evaluate_control(control, env, model, sol.dates, n_paths, rng);
    const LatticeMarket mk(model, sol.dates);
    std::vector<double> vals(n_paths);
    std::vector<char> decide(sol.dates, 0);
    auto dist = [&](const StatePoint& s, int from, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        out[control(s, from)] = 1.0;
    };
    const GridScheme scheme = GridScheme::thinned(sol.dates, sol.decision_probability, model.horizon);
    for (long q = 0; q < n_paths; ++q) {
        std::fill(decide.begin(), decide.end(), 0);
        for (int k : sample_grid(scheme, rng).index) decide[k] = 1;
        vals[q] = simulate_lattice(env, mk, dist, 0, 0.0, env.initial_regime(), env.initial_level(), decide, rng);
    }
    return summarize(vals);
}

// ---------------------------------------------------------------------------
// Tiny randomised instances, small enough to enumerate every path.

enum class TinyFamily { General, Restricted };

// Decision dates d = 1..dates at times t_d = d, horizon dates + 1. Regimes are
// 0..marks-1 and double as their own values. At each date an i.i.d. price x
// is revealed, the action measure may place a point with mark e, then the
// period reward a (x - strike) accrues; switching costs cost * |e - a| and
// the terminal reward is terminal_weight * a_final * x_last.
//
// General family: base atoms carry mass `mass` on every mark, and the tilt is
// lambda(e) = cap * sigmoid(z_e). Restricted family: atoms of total mass
// `mass` (Lambda_d) with uniform mu, and mark density M * softmax(z).
struct TinySpec {
    int dates = 2;
    int marks = 2;
    std::vector<double> prices{80.0, 120.0};
    std::vector<double> price_probs{0.5, 0.5};
    int initial = 0;
    double strike = 100.0;
    double cost = 3.0;
    double terminal_weight = 0.5;
    TinyFamily family = TinyFamily::General;
    double mass = 0.3;
    double cap = 1.5;
    int hidden = 3;

    static constexpr long path_cap = 4096;

    double horizon() const { return dates + 1.0; }

    long path_count() const {
        long c = 1;
        for (int d = 0; d < dates; ++d) c *= static_cast<long>(prices.size()) * (marks + 1);
        return c;
    }

    void validate() const {
        if (dates < 1 || dates > 3) throw ConfigError("tiny.dates must be 1..3");
        if (marks < 2 || marks > 3) throw ConfigError("tiny.marks must be 2 or 3");
        if (prices.empty() || prices.size() > 3) throw ConfigError("tiny.prices must have 1..3 entries");
        if (price_probs.size() != prices.size()) throw ConfigError("tiny.price_probs must match tiny.prices");
        double s = 0.0;
        for (double q : price_probs) {
            if (!(q > 0.0)) throw ConfigError("tiny.price_probs must be positive");
            s += q;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ConfigError("tiny.price_probs must sum to one");
        if (initial < 0 || initial >= marks) throw ConfigError("tiny.initial must be a mark index");
        if (!(cost >= 0.0)) throw ConfigError("tiny.cost must be nonnegative");
        if (hidden <= 0) throw ConfigError("tiny.hidden must be positive");
        if (family == TinyFamily::General) {
            if (!(mass > 0.0 && cap > 0.0 && mass * marks * cap < 1.0))
                throw ConfigError("tiny.mass * tiny.marks * tiny.cap must lie in (0,1)");
        } else if (!(mass > 0.0 && mass <= 1.0)) {
            throw ConfigError("tiny.mass must lie in (0,1] for the restricted family");
        }
        if (path_count() > path_cap) throw ConfigError("tiny instance exceeds the enumeration cap");
    }
    bool operator==(const TinySpec&) const = default;
};

// Per-(date, regime) network with `marks` outputs on input x / strike.
class TinyPolicy {
public:
    TinyPolicy() = default;
    explicit TinyPolicy(const TinySpec& spec)
        : spec_(spec),
          bank_(MlpShape({1, spec.hidden, spec.marks}, spec.family == TinyFamily::General ? Head::Linear : Head::MaskedSoftmax),
                spec.dates + 1, spec.marks, 1) {}

    const TinySpec& spec() const { return spec_; }
    ParamBank& bank() { return bank_; }
    const ParamBank& bank() const { return bank_; }
    std::size_t parameter_count() const { return bank_.size(); }
    std::span<double> theta() { return bank_.params(); }

    // Tilt lambda(e) for the general family, lambda_bar(e) for the restricted one.
    void intensity(const StatePoint& s, int from, std::span<double> out) const {
        auto& ws = workspace();
        const double x = s.spot / spec_.strike;
        const auto y = mlp_forward(bank_.shape(), bank_.net(s.date, from, 0), {&x, 1}, ws);
        for (int e = 0; e < spec_.marks; ++e)
            out[e] = spec_.family == TinyFamily::General ? spec_.cap * sigmoid(y[e]) : spec_.marks * y[e];
    }

    // Outcome probabilities at an atom: out[e] for a point with mark e and
    // out[marks] for no point.
    void outcome_probs(const StatePoint& s, int from, std::span<double> out) const {
        double lam[8];
        intensity(s, from, {lam, static_cast<std::size_t>(spec_.marks)});
        const double per = spec_.family == TinyFamily::General ? spec_.mass : spec_.mass / spec_.marks;
        double jump = 0.0;
        for (int e = 0; e < spec_.marks; ++e) {
            out[e] = per * lam[e];
            jump += out[e];
        }
        out[spec_.marks] = std::max(0.0, 1.0 - jump);
    }

    // grad += weight * d log lambda(to) / d theta.
    void add_score(const StatePoint& s, int from, int to, double weight, std::span<double> grad) const {
        auto& ws = workspace();
        const double x = s.spot / spec_.strike;
        const std::size_t off = bank_.offset(s.date, from, 0);
        const double* p = bank_.params().data() + off;
        const auto y = mlp_forward(bank_.shape(), p, {&x, 1}, ws);
        double u[8] = {0};
        if (spec_.family == TinyFamily::General)
            u[to] = weight * (1.0 - sigmoid(y[to]));
        else
            u[to] = weight / y[to];
        mlp_backward(bank_.shape(), p, ws, {u, static_cast<std::size_t>(spec_.marks)}, grad.data() + off);
    }

    // grad += weight * d log P(no point) / d theta.
    void add_no_jump_score(const StatePoint& s, int from, double weight, std::span<double> grad) const {
        auto& ws = workspace();
        const double x = s.spot / spec_.strike;
        const std::size_t off = bank_.offset(s.date, from, 0);
        const double* p = bank_.params().data() + off;
        if (spec_.family == TinyFamily::Restricted) return;
        const auto y = mlp_forward(bank_.shape(), p, {&x, 1}, ws);
        double none = 1.0;
        for (int e = 0; e < spec_.marks; ++e) none -= spec_.mass * spec_.cap * sigmoid(y[e]);
        double u[8] = {0};
        for (int e = 0; e < spec_.marks; ++e) {
            const double sg = sigmoid(y[e]);
            u[e] = -weight * spec_.mass * spec_.cap * sg * (1.0 - sg) / none;
        }
        mlp_backward(bank_.shape(), p, ws, {u, static_cast<std::size_t>(spec_.marks)}, grad.data() + off);
    }

    Compensator base_compensator() const {
        Compensator c;
        c.horizon = spec_.horizon();
        c.marks = spec_.marks;
        const double per = spec_.family == TinyFamily::General ? spec_.mass : spec_.mass / spec_.marks;
        for (int d = 1; d <= spec_.dates; ++d) c.atoms.push_back({static_cast<double>(d), std::vector<double>(spec_.marks, per)});
        return c;
    }

private:
    static MlpWorkspace& workspace() {
        static thread_local MlpWorkspace ws;
        return ws;
    }
    TinySpec spec_;
    ParamBank bank_;
};

struct TinyPath {
    std::vector<int> price;    // price index per date
    std::vector<int> outcome;  // mark per date, or -1 for no point
    double probability = 0.0;
    double reward = 0.0;       // running rewards net of costs plus terminal
};

namespace detail {

inline double tiny_reward(const TinySpec& sp, const std::vector<int>& price, const std::vector<int>& outcome) {
    int a = sp.initial;
    double r = 0.0;
    for (int d = 0; d < sp.dates; ++d) {
        const double x = sp.prices[price[d]];
        if (outcome[d] >= 0) {
            r -= sp.cost * std::abs(outcome[d] - a);
            a = outcome[d];
        }
        r += a * (x - sp.strike);
        if (d + 1 == sp.dates) r += sp.terminal_weight * a * x;
    }
    return r;
}

template <class Probs>
void tiny_enumerate(const TinySpec& sp, Probs&& probs, std::vector<TinyPath>& out) {
    TinyPath cur;
    cur.price.assign(sp.dates, 0);
    cur.outcome.assign(sp.dates, -1);
    std::function<void(int, int, double)> rec = [&](int d, int regime, double prob) {
        if (d == sp.dates) {
            cur.probability = prob;
            cur.reward = tiny_reward(sp, cur.price, cur.outcome);
            out.push_back(cur);
            return;
        }
        for (int xi = 0; xi < static_cast<int>(sp.prices.size()); ++xi) {
            double po[8];
            probs(StatePoint{d + 1, d + 1.0, sp.prices[xi], 0}, regime, std::span<double>(po, sp.marks + 1));
            cur.price[d] = xi;
            for (int o = 0; o <= sp.marks; ++o) {
                const double q = sp.price_probs[xi] * po[o];
                if (q == 0.0) continue;
                cur.outcome[d] = o == sp.marks ? -1 : o;
                rec(d + 1, o == sp.marks ? regime : o, prob * q);
            }
            cur.outcome[d] = -1;
        }
    };
    rec(0, sp.initial, 1.0);
}

}  // namespace detail

// All paths of the tiny instance with their probabilities under P^theta.
inline std::vector<TinyPath> enumerate_paths(const TinyPolicy& pol) {
    pol.spec().validate();
    std::vector<TinyPath> out;
    detail::tiny_enumerate(pol.spec(), [&](const StatePoint& s, int from, std::span<double> o) { pol.outcome_probs(s, from, o); }, out);
    return out;
}

// The same paths under the base measure (tilt identically one).
inline std::vector<TinyPath> enumerate_base_paths(const TinySpec& sp) {
    sp.validate();
    std::vector<TinyPath> out;
    const double per = sp.family == TinyFamily::General ? sp.mass : sp.mass / sp.marks;
    detail::tiny_enumerate(sp,
                           [&](const StatePoint&, int, std::span<double> o) {
                               for (int e = 0; e < sp.marks; ++e) o[e] = per;
                               o[sp.marks] = std::max(0.0, 1.0 - per * sp.marks);
                           },
                           out);
    return out;
}

inline MarkedPointPath tiny_marked_path(const TinySpec& sp, const TinyPath& p) {
    MarkedPointPath m;
    m.initial_mark = sp.initial;
    for (int d = 0; d < sp.dates; ++d)
        if (p.outcome[d] >= 0) m.points.push_back({d + 1.0, p.outcome[d]});
    return m;
}

// log Z of a path for the policy's tilt, through the generic density.
inline double tiny_log_density(const TinyPolicy& pol, const TinyPath& p) {
    const auto& sp = pol.spec();
    const Compensator comp = pol.base_compensator();
    auto tilt = [&](double t, int e, int regime) {
        const int d = static_cast<int>(std::lround(t));
        double lam[8];
        pol.intensity(StatePoint{d, t, sp.prices[p.price[d - 1]], 0}, regime, {lam, static_cast<std::size_t>(sp.marks)});
        return lam[e];
    };
    return girsanov_log_density(tiny_marked_path(sp, p), comp, tilt);
}

// Value-to-go W(d, x, a) just after the action at date d in regime a.
class TinyValue {
public:
    explicit TinyValue(const TinyPolicy& pol) : sp_(pol.spec()) {
        const int D = sp_.dates, P = static_cast<int>(sp_.prices.size()), M = sp_.marks;
        w_.assign(static_cast<std::size_t>(D + 2) * P * M, 0.0);
        pre_.assign(static_cast<std::size_t>(D + 2) * P * M, 0.0);
        for (int d = D; d >= 1; --d) {
            for (int xi = 0; xi < P; ++xi)
                for (int a = 0; a < M; ++a) {
                    const double x = sp_.prices[xi];
                    double v = a * (x - sp_.strike);
                    if (d == D)
                        v += sp_.terminal_weight * a * x;
                    else
                        for (int xn = 0; xn < P; ++xn) v += sp_.price_probs[xn] * pre(d + 1, xn, a);
                    at(w_, d, xi, a) = v;
                }
            for (int xi = 0; xi < P; ++xi)
                for (int a = 0; a < M; ++a) {
                    double po[8];
                    pol.outcome_probs(StatePoint{d, static_cast<double>(d), sp_.prices[xi], 0}, a, {po, static_cast<std::size_t>(M + 1)});
                    double v = po[M] * W(d, xi, a);
                    for (int e = 0; e < M; ++e) v += po[e] * (-sp_.cost * std::abs(e - a) + W(d, xi, e));
                    at(pre_, d, xi, a) = v;
                }
        }
        j_ = 0.0;
        for (int xi = 0; xi < P; ++xi) j_ += sp_.price_probs[xi] * pre(1, xi, sp_.initial);
    }

    double W(int d, int xi, int a) const { return w_[index(d, xi, a)]; }
    double pre(int d, int xi, int a) const { return pre_[index(d, xi, a)]; }
    double J() const { return j_; }

    int price_index(double x) const {
        for (int i = 0; i < static_cast<int>(sp_.prices.size()); ++i)
            if (sp_.prices[i] == x) return i;
        throw Error("price outside the tiny support");
    }

    // Critic interface over the exact value, for the learn estimators.
    std::size_t parameter_count() const { return 0; }
    double value(const StatePoint& s, int a) const { return W(s.date, price_index(s.spot), a); }
    void add_gradient(const StatePoint&, int, double, std::span<double>) const {}

private:
    std::size_t index(int d, int xi, int a) const {
        return (static_cast<std::size_t>(d) * sp_.prices.size() + xi) * sp_.marks + a;
    }
    double& at(std::vector<double>& v, int d, int xi, int a) { return v[index(d, xi, a)]; }
    TinySpec sp_;
    std::vector<double> w_, pre_;
    double j_ = 0.0;
};

// Paths as weighted trajectories in the learn module's bookkeeping.
inline std::vector<EpisodeTrajectory> enumerated_trajectories(const TinySpec& sp, const std::vector<TinyPath>& paths) {
    std::vector<EpisodeTrajectory> out;
    for (const auto& p : paths) {
        EpisodeTrajectory tr;
        tr.initial = {0, 0.0, sp.strike, 0};
        tr.initial_regime = sp.initial;
        tr.weight = p.probability;
        int a = sp.initial;
        double r = 0.0;
        for (int d = 0; d < sp.dates; ++d) {
            const double x = sp.prices[p.price[d]];
            if (p.outcome[d] >= 0) {
                const double before = r;
                r -= sp.cost * std::abs(p.outcome[d] - a);
                tr.points.push_back({StatePoint{d + 1, d + 1.0, x, 0}, a, p.outcome[d], before, r});
                a = p.outcome[d];
            }
            r += a * (x - sp.strike);
        }
        tr.final_reward = r;
        tr.terminal_reward = sp.terminal_weight * a * sp.prices[p.price[sp.dates - 1]];
        out.push_back(std::move(tr));
    }
    return out;
}

struct TinyReport {
    double J = 0.0;
    double mean_density = 0.0;                // E[Z] under the base measure
    std::vector<double> grad_score;           // score form with exact W
    std::vector<double> grad_likelihood;      // E[reward * d log P(path)]
    std::vector<double> grad_fd;              // central differences of J
    std::vector<double> score_identity;       // E[sum over points of d log lambda_bar] (restricted) or E[d log P]
};

inline double tiny_J(const TinyPolicy& pol) { return TinyValue(pol).J(); }

inline std::vector<double> tiny_fd_gradient(TinyPolicy pol, double h = 1e-5) {
    auto th = pol.theta();
    std::vector<double> g(th.size());
    for (std::size_t q = 0; q < th.size(); ++q) {
        const double keep = th[q];
        th[q] = keep + h;
        const double up = tiny_J(pol);
        th[q] = keep - h;
        const double dn = tiny_J(pol);
        th[q] = keep;
        g[q] = (up - dn) / (2.0 * h);
    }
    return g;
}

inline TinyReport enumerate_tiny_instance(const TinyPolicy& pol, double fd_step = 1e-5) {
    const auto& sp = pol.spec();
    sp.validate();
    TinyReport rep;
    const TinyValue val(pol);
    rep.J = val.J();

    const auto base = enumerate_base_paths(sp);
    for (const auto& p : base) rep.mean_density += p.probability * std::exp(tiny_log_density(pol, p));

    const auto paths = enumerate_paths(pol);
    const auto trajs = enumerated_trajectories(sp, paths);
    const std::size_t n = pol.parameter_count();
    rep.grad_score.assign(n, 0.0);
    policy_gradient(std::span<const EpisodeTrajectory>(trajs), val, pol, rep.grad_score);

    rep.grad_likelihood.assign(n, 0.0);
    rep.score_identity.assign(n, 0.0);
    for (const auto& p : paths) {
        int a = sp.initial;
        for (int d = 0; d < sp.dates; ++d) {
            const StatePoint s{d + 1, d + 1.0, sp.prices[p.price[d]], 0};
            if (p.outcome[d] >= 0) {
                pol.add_score(s, a, p.outcome[d], p.probability * p.reward, rep.grad_likelihood);
                pol.add_score(s, a, p.outcome[d], p.probability, rep.score_identity);
                a = p.outcome[d];
            } else {
                pol.add_no_jump_score(s, a, p.probability * p.reward, rep.grad_likelihood);
                pol.add_no_jump_score(s, a, p.probability, rep.score_identity);
            }
        }
    }
    rep.grad_fd = tiny_fd_gradient(pol, fd_step);
    return rep;
}

// One path drawn from P^theta through the tilted point-process sampler.
inline TinyPath sample_tiny_path(const TinyPolicy& pol, Rng& rng) {
    const auto& sp = pol.spec();
    TinyPath p;
    p.price.resize(sp.dates);
    p.outcome.assign(sp.dates, -1);
    for (int d = 0; d < sp.dates; ++d) p.price[d] = rng.categorical(sp.price_probs);
    auto tilt = [&](double t, int e, int regime) {
        const int d = static_cast<int>(std::lround(t));
        double lam[8];
        pol.intensity(StatePoint{d, t, sp.prices[p.price[d - 1]], 0}, regime, {lam, static_cast<std::size_t>(sp.marks)});
        return lam[e];
    };
    const auto mpp = sample_tilted(pol.base_compensator(), sp.initial, tilt, rng);
    for (const auto& pt : mpp.points) p.outcome[static_cast<int>(std::lround(pt.time)) - 1] = pt.mark;
    p.reward = detail::tiny_reward(sp, p.price, p.outcome);
    p.probability = 0.0;
    return p;
}

}  // namespace ctrlrand
