#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctrlrand/envs.hpp"
#include "ctrlrand/errors.hpp"
#include "ctrlrand/learn.hpp"
#include "ctrlrand/market.hpp"
#include "ctrlrand/oracle.hpp"
#include "ctrlrand/pointproc.hpp"

namespace ctrlrand {

enum class EnvKind { Thermal, Battery, Tiny };

// Full description of one run. Text form: one `key = value` per line with
// dotted section prefixes, `#` starts a comment, lists are comma separated.
// Keys that do not apply to the selected env.kind are rejected.
struct ExperimentConfig {
    EnvKind env = EnvKind::Thermal;
    ThermalEnv thermal;
    BatteryEnv battery;
    TinySpec tiny;
    PriceModel price;
    GridScheme grid = GridScheme::deterministic(31, 30.0);
    LearnConfig learn;
    DpConfig dp;
    long eval_paths = 100000;

    static ExperimentConfig parse(std::istream& is);
    static ExperimentConfig parse_string(const std::string& s) {
        std::istringstream is(s);
        return parse(is);
    }
    static ExperimentConfig parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read config file '" + path + "'");
        return parse(f);
    }
    std::string serialize() const;
    void validate() const;

    bool operator==(const ExperimentConfig& o) const { return serialize() == o.serialize(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw 0;
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw 0;
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size() || v.front() == '-') throw 0;
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
    return out;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& s : split_list(v)) out.push_back(to_double(key, s));
    return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_floating_point_v<T>)
            s += fmt_double(xs[i]);
        else
            s += std::to_string(xs[i]);
    }
    return s;
}

inline const char* env_kind_name(EnvKind k) {
    switch (k) {
        case EnvKind::Thermal: return "thermal";
        case EnvKind::Battery: return "battery";
        case EnvKind::Tiny: return "tiny";
    }
    return "?";
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::parse(std::istream& is) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::map<std::string, int> seen;
    int lineno = 0;
    for (std::string line; std::getline(is, line);) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (seen[key]++) throw ConfigError(key + ": duplicate key");
        entries.push_back({key, val});
    }

    ExperimentConfig c;
    for (const auto& [k, v] : entries)
        if (k == "env.kind") {
            if (v == "thermal")
                c.env = EnvKind::Thermal;
            else if (v == "battery")
                c.env = EnvKind::Battery;
            else if (v == "tiny")
                c.env = EnvKind::Tiny;
            else
                throw ConfigError("env.kind: expected thermal, battery or tiny, got '" + v + "'");
        }
    bool sched = false;
    IntensitySchedule sc;
    using namespace detail;
    for (const auto& [k, v] : entries) {
        const bool th = c.env == EnvKind::Thermal, ba = c.env == EnvKind::Battery, ti = c.env == EnvKind::Tiny;
        if (k == "env.kind") continue;
        if (k == "env.production_cost" && th) {
            c.thermal.production_cost = to_double(k, v);
        } else if (k == "env.switch_costs" && (th || ba)) {
            const auto xs = to_doubles(k, v);
            if (th) {
                if (xs.size() != 4) throw ConfigError(k + ": thermal needs 4 entries (2x2 row-major)");
                if (xs[0] != 0.0 || xs[3] != 0.0) throw ConfigError(k + ": diagonal must be zero");
                c.thermal.cost_on = xs[1];
                c.thermal.cost_off = xs[2];
            } else {
                if (xs.size() != 9) throw ConfigError(k + ": battery needs 9 entries (3x3 row-major)");
                for (int i = 0; i < 9; ++i) c.battery.costs[i / 3][i % 3] = xs[i];
            }
        } else if (k == "env.initial_regime" && (th || ba)) {
            const long long r = to_int(k, v);
            if (th) {
                if (r < 0 || r > 1) throw ConfigError(k + ": thermal regimes are 0 and 1");
                c.thermal.initial = static_cast<int>(r);
            } else {
                if (r < -1 || r > 1) throw ConfigError(k + ": battery regimes are -1, 0 and 1");
                c.battery.initial = static_cast<int>(r) + 1;
            }
        } else if (k == "env.capacity" && ba) {
            c.battery.capacity = to_double(k, v);
        } else if (k == "env.initial_inventory" && ba) {
            c.battery.initial_inventory = to_double(k, v);
        } else if (k == "price.beta") {
            c.price.beta = to_double(k, v);
        } else if (k == "price.sigma") {
            c.price.sigma = to_double(k, v);
        } else if (k == "price.horizon") {
            c.price.horizon = to_double(k, v);
        } else if (k == "price.curve") {
            if (v == "seasonal")
                c.price.curve = CurveShape::Seasonal;
            else if (v == "floored")
                c.price.curve = CurveShape::Floored;
            else
                throw ConfigError(k + ": expected seasonal or floored, got '" + v + "'");
        } else if (k == "price.curve_level") {
            c.price.curve_level = to_double(k, v);
        } else if (k == "price.curve_amplitude") {
            c.price.curve_amplitude = to_double(k, v);
        } else if (k == "price.curve_period") {
            c.price.curve_period = to_double(k, v);
        } else if (k == "grid.kind" && !ti) {
            if (v == "deterministic")
                c.grid.kind = GridKind::Deterministic;
            else if (v == "thinned")
                c.grid.kind = GridKind::Thinned;
            else if (v == "poisson")
                c.grid.kind = GridKind::Poisson;
            else
                throw ConfigError(k + ": expected deterministic, thinned or poisson, got '" + v + "'");
        } else if (k == "grid.dates" && !ti) {
            c.grid.dates = static_cast<int>(to_int(k, v));
        } else if (k == "grid.p_samp" && !ti) {
            c.grid.p_samp = to_double(k, v);
        } else if (k == "grid.rate" && !ti) {
            c.grid.rate = to_double(k, v);
        } else if (k == "schedule.enabled" && !ti) {
            sched = to_bool(k, v);
        } else if (k == "schedule.discrete_start" && !ti) {
            sc.discrete_start = to_double(k, v);
        } else if (k == "schedule.discrete_end" && !ti) {
            sc.discrete_end = to_double(k, v);
        } else if (k == "schedule.continuous_start" && !ti) {
            sc.continuous_start = to_double(k, v);
        } else if (k == "schedule.continuous_end" && !ti) {
            sc.continuous_end = to_double(k, v);
        } else if (k == "schedule.ramp" && !ti) {
            sc.ramp = to_int(k, v);
        } else if (k == "net.hidden") {
            c.learn.hidden.clear();
            for (const auto& s : split_list(v)) c.learn.hidden.push_back(static_cast<int>(to_int(k, s)));
        } else if (k == "net.critic_scale" && !ti) {
            c.learn.critic_scale = to_double(k, v);
        } else if (k == "learn.mode" && !ti) {
            if (v == "local")
                c.learn.mode = GradientMode::Local;
            else if (v == "episodic")
                c.learn.mode = GradientMode::Episodic;
            else
                throw ConfigError(k + ": expected local or episodic, got '" + v + "'");
        } else if (k == "learn.batch" && !ti) {
            c.learn.batch = static_cast<int>(to_int(k, v));
        } else if (k == "learn.iterations" && !ti) {
            c.learn.iterations = to_int(k, v);
        } else if (k == "learn.lr_theta" && !ti) {
            c.learn.lr_theta = to_double(k, v);
        } else if (k == "learn.lr_kappa" && !ti) {
            c.learn.lr_kappa = to_double(k, v);
        } else if (k == "learn.rate_decay" && !ti) {
            c.learn.rate_decay = to_double(k, v);
        } else if (k == "learn.critic_starts" && !ti) {
            c.learn.critic_starts = static_cast<int>(to_int(k, v));
        } else if (k == "learn.anchor_initial" && !ti) {
            c.learn.anchor_initial = to_bool(k, v);
        } else if (k == "run.seed") {
            c.learn.seed = to_u64(k, v);
        } else if (k == "run.threads") {
            c.learn.threads = static_cast<int>(to_int(k, v));
        } else if (k == "run.chunk" && !ti) {
            c.learn.chunk = static_cast<int>(to_int(k, v));
        } else if (k == "dp.nodes" && !ti) {
            c.dp.nodes = static_cast<int>(to_int(k, v));
        } else if (k == "dp.span_sd" && !ti) {
            c.dp.span_sd = to_double(k, v);
        } else if (k == "eval.paths" && !ti) {
            c.eval_paths = to_int(k, v);
        } else if (k == "tiny.dates" && ti) {
            c.tiny.dates = static_cast<int>(to_int(k, v));
        } else if (k == "tiny.marks" && ti) {
            c.tiny.marks = static_cast<int>(to_int(k, v));
        } else if (k == "tiny.prices" && ti) {
            c.tiny.prices = to_doubles(k, v);
        } else if (k == "tiny.price_probs" && ti) {
            c.tiny.price_probs = to_doubles(k, v);
        } else if (k == "tiny.initial" && ti) {
            c.tiny.initial = static_cast<int>(to_int(k, v));
        } else if (k == "tiny.strike" && ti) {
            c.tiny.strike = to_double(k, v);
        } else if (k == "tiny.cost" && ti) {
            c.tiny.cost = to_double(k, v);
        } else if (k == "tiny.terminal_weight" && ti) {
            c.tiny.terminal_weight = to_double(k, v);
        } else if (k == "tiny.family" && ti) {
            if (v == "general")
                c.tiny.family = TinyFamily::General;
            else if (v == "restricted")
                c.tiny.family = TinyFamily::Restricted;
            else
                throw ConfigError(k + ": expected general or restricted, got '" + v + "'");
        } else if (k == "tiny.mass" && ti) {
            c.tiny.mass = to_double(k, v);
        } else if (k == "tiny.cap" && ti) {
            c.tiny.cap = to_double(k, v);
        } else if (k == "tiny.hidden" && ti) {
            c.tiny.hidden = static_cast<int>(to_int(k, v));
        } else {
            throw ConfigError(k + ": unknown key for env.kind = " + env_kind_name(c.env));
        }
    }
    if (sched) c.learn.schedule = sc;
    c.grid.horizon = c.price.horizon;
    c.dp.decision_probability = c.grid.kind == GridKind::Thinned ? c.grid.p_samp : 1.0;
    c.thermal.dt = c.battery.dt = c.grid.kind == GridKind::Poisson ? 1.0 : c.price.horizon / std::max(1, c.grid.dates - 1);
    c.validate();
    return c;
}

inline std::string ExperimentConfig::serialize() const {
    using namespace detail;
    std::ostringstream os;
    auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
    auto kd = [&](const std::string& k, double v) { kv(k, fmt_double(v)); };
    kv("env.kind", env_kind_name(env));
    if (env == EnvKind::Thermal) {
        kd("env.production_cost", thermal.production_cost);
        kv("env.switch_costs", join(std::vector<double>{0.0, thermal.cost_on, thermal.cost_off, 0.0}));
        kv("env.initial_regime", std::to_string(thermal.initial));
    } else if (env == EnvKind::Battery) {
        std::vector<double> xs;
        for (int i = 0; i < 9; ++i) xs.push_back(battery.costs[i / 3][i % 3]);
        kv("env.switch_costs", join(xs));
        kv("env.initial_regime", std::to_string(battery.initial - 1));
        kd("env.capacity", battery.capacity);
        kd("env.initial_inventory", battery.initial_inventory);
    }
    kd("price.beta", price.beta);
    kd("price.sigma", price.sigma);
    kd("price.horizon", price.horizon);
    kv("price.curve", price.curve == CurveShape::Seasonal ? "seasonal" : "floored");
    kd("price.curve_level", price.curve_level);
    kd("price.curve_amplitude", price.curve_amplitude);
    kd("price.curve_period", price.curve_period);
    if (env == EnvKind::Tiny) {
        kv("net.hidden", join(learn.hidden));
        kv("run.seed", std::to_string(learn.seed));
        kv("run.threads", std::to_string(learn.threads));
        kv("tiny.dates", std::to_string(tiny.dates));
        kv("tiny.marks", std::to_string(tiny.marks));
        kv("tiny.prices", join(tiny.prices));
        kv("tiny.price_probs", join(tiny.price_probs));
        kv("tiny.initial", std::to_string(tiny.initial));
        kd("tiny.strike", tiny.strike);
        kd("tiny.cost", tiny.cost);
        kd("tiny.terminal_weight", tiny.terminal_weight);
        kv("tiny.family", tiny.family == TinyFamily::General ? "general" : "restricted");
        kd("tiny.mass", tiny.mass);
        kd("tiny.cap", tiny.cap);
        kv("tiny.hidden", std::to_string(tiny.hidden));
        return os.str();
    }
    kv("grid.kind", grid.kind == GridKind::Deterministic ? "deterministic" : grid.kind == GridKind::Thinned ? "thinned" : "poisson");
    kv("grid.dates", std::to_string(grid.dates));
    kd("grid.p_samp", grid.p_samp);
    kd("grid.rate", grid.rate);
    kv("schedule.enabled", learn.schedule ? "true" : "false");
    if (learn.schedule) {
        kd("schedule.discrete_start", learn.schedule->discrete_start);
        kd("schedule.discrete_end", learn.schedule->discrete_end);
        kd("schedule.continuous_start", learn.schedule->continuous_start);
        kd("schedule.continuous_end", learn.schedule->continuous_end);
        kv("schedule.ramp", std::to_string(learn.schedule->ramp));
    }
    kv("net.hidden", join(learn.hidden));
    kd("net.critic_scale", learn.critic_scale);
    kv("learn.mode", learn.mode == GradientMode::Local ? "local" : "episodic");
    kv("learn.batch", std::to_string(learn.batch));
    kv("learn.iterations", std::to_string(learn.iterations));
    kd("learn.lr_theta", learn.lr_theta);
    kd("learn.lr_kappa", learn.lr_kappa);
    kd("learn.rate_decay", learn.rate_decay);
    kv("learn.critic_starts", std::to_string(learn.critic_starts));
    kv("learn.anchor_initial", learn.anchor_initial ? "true" : "false");
    kv("run.seed", std::to_string(learn.seed));
    kv("run.threads", std::to_string(learn.threads));
    kv("run.chunk", std::to_string(learn.chunk));
    kv("dp.nodes", std::to_string(dp.nodes));
    kd("dp.span_sd", dp.span_sd);
    kv("eval.paths", std::to_string(eval_paths));
    return os.str();
}

inline void ExperimentConfig::validate() const {
    price.validate();
    if (learn.threads <= 0) throw ConfigError("run.threads must be positive");
    for (int h : learn.hidden)
        if (h <= 0) throw ConfigError("net.hidden widths must be positive");
    if (env == EnvKind::Tiny) {
        tiny.validate();
        return;
    }
    grid.validate();
    learn.validate();
    dp.validate();
    if (eval_paths <= 0) throw ConfigError("eval.paths must be positive");
    if (env == EnvKind::Thermal) thermal.validate();
    if (env == EnvKind::Battery) {
        battery.validate();
        if (grid.kind == GridKind::Poisson) throw ConfigError("grid.kind: poisson grids need an environment without inventory");
        if (learn.schedule && learn.schedule->continuous_end > 0.0)
            throw ConfigError("schedule.continuous_end: Poisson action times need an environment without inventory");
    }
    if (grid.kind == GridKind::Poisson) throw ConfigError("grid.kind: poisson runs through schedule.continuous_* on a lattice");
    if (learn.mode == GradientMode::Local && learn.schedule && learn.schedule->continuous_end > 0.0)
        throw ConfigError("learn.mode: local gradients need lattice grids (schedule.continuous_end = 0)");
}

}  // namespace ctrlrand
