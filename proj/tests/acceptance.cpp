#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ctrlrand/ctrlrand.hpp"
#include "tiny_helpers.hpp"

using namespace ctrlrand;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path configs;
    fs::path out;
    bool quiet = false;
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::vector<double>> read_numeric_csv(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw Error("cannot read '" + p.string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) row.push_back(cell.empty() ? NAN : std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

int run_cli(const Context& cx, const std::string& sub, const fs::path& cfg, const fs::path& out,
            std::optional<std::uint64_t> seed = {}) {
    RunOptions o;
    o.config_path = cfg.string();
    o.out_dir = out.string();
    o.seed = seed;
    std::ostringstream sink;
    const int rc = run(sub, o, cx.quiet ? sink : std::cout, std::cerr);
    if (rc != 0) throw Error(sub + " on " + cfg.string() + " exited with status " + std::to_string(rc));
    return rc;
}

// Metrics columns.
constexpr int kGain = 2, kGainSe = 3;

double tail_mean(const std::vector<std::vector<double>>& m, int col, std::size_t k) {
    k = std::min(k, m.size());
    double s = 0.0;
    for (std::size_t i = m.size() - k; i < m.size(); ++i) s += m[i][col];
    return s / static_cast<double>(k);
}

TinySpec shipped_tiny(const Context& cx) { return ExperimentConfig::parse_file((cx.configs / "tiny_enum.cfg").string()).tiny; }

Verdict criterion1(const Context& cx) {
    const TinySpec sp = shipped_tiny(cx);
    const TinyPolicy pol = testkit::random_tiny(sp, stream_seed(1, kReweightStream));
    double mean_one = 0.0;
    for (const auto& p : enumerate_base_paths(sp)) mean_one += p.probability * std::exp(tiny_log_density(pol, p));
    const double exact_err = std::abs(mean_one - 1.0);

    // Events {outcome at date d = o}; o = marks stands for "no point".
    const int n_ev = sp.dates * (sp.marks + 1);
    auto event = [&](const TinyPath& p, int d, int o) { return p.outcome[d] == (o == sp.marks ? -1 : o); };
    const long n = 100000;
    std::vector<double> rw(n_ev), rw2(n_ev), ts(n_ev);
    double z1 = 0.0, z2 = 0.0;
    Rng rb(stream_seed(1, kReweightStream, 1)), rt(stream_seed(1, kReweightStream, 2));
    const Compensator comp = pol.base_compensator();
    for (long q = 0; q < n; ++q) {
        TinyPath b;
        b.price.resize(sp.dates);
        b.outcome.assign(sp.dates, -1);
        for (int d = 0; d < sp.dates; ++d) b.price[d] = rb.categorical(sp.price_probs);
        const auto mpp = sample_tilted(comp, sp.initial, [](double, int, int) { return 1.0; }, rb);
        for (const auto& pt : mpp.points) b.outcome[static_cast<int>(std::lround(pt.time)) - 1] = pt.mark;
        const double z = std::exp(tiny_log_density(pol, b));
        z1 += z;
        z2 += z * z;
        const TinyPath t = sample_tiny_path(pol, rt);
        for (int d = 0; d < sp.dates; ++d)
            for (int o = 0; o <= sp.marks; ++o) {
                const int e = d * (sp.marks + 1) + o;
                if (event(b, d, o)) {
                    rw[e] += z;
                    rw2[e] += z * z;
                }
                if (event(t, d, o)) ts[e] += 1.0;
            }
    }
    double worst_ratio = 0.0;
    for (int e = 0; e < n_ev; ++e) {
        const double a = rw[e] / n, va = (rw2[e] / n - a * a) / n;
        const double b = ts[e] / n, vb = b * (1.0 - b) / n;
        const double se = std::sqrt(va + vb);
        worst_ratio = std::max(worst_ratio, se > 0 ? std::abs(a - b) / se : (a == b ? 0.0 : INFINITY));
    }
    const double zm = z1 / n, zse = std::sqrt((z2 / n - zm * zm) / n);
    const double z_ratio = std::abs(zm - 1.0) / zse;
    const bool ok = exact_err <= 1e-12 && worst_ratio <= 3.0 && z_ratio <= 3.0;
    return {ok, "exact |E[Z]-1|=" + fmt("%.3g", exact_err) + " (tol 1e-12), max event gap=" + fmt("%.3f", worst_ratio) +
                    " SE over " + std::to_string(n_ev) + " events, MC E[Z]=" + fmt("%.5f", zm) + " (" + fmt("%.2f", z_ratio) +
                    " SE), paths=" + std::to_string(n)};
}

Verdict criterion2(const Context& cx) {
    TinySpec sp = shipped_tiny(cx);
    const EnumcheckResult g = enumcheck(sp, 1, 20);
    sp.family = sp.family == TinyFamily::General ? TinyFamily::Restricted : TinyFamily::General;
    sp.mass = sp.family == TinyFamily::General ? 0.25 : 0.8;
    const EnumcheckResult h = enumcheck(sp, 2, 20);
    const double worst = std::max(g.grad_fd_error, h.grad_fd_error);
    return {worst <= 1e-8, "max |score grad - FD grad|=" + fmt("%.3g", worst) + " (tol 1e-8) over " +
                               std::to_string(g.draws + h.draws) + " theta draws, both families"};
}

Verdict criterion3(const Context& cx) {
    double worst = 0.0;
    int cells = 0;
    TinySpec sp = shipped_tiny(cx);
    for (int s = 0; s < 10; ++s) {
        sp.family = s % 2 ? TinyFamily::Restricted : TinyFamily::General;
        sp.mass = s % 2 ? 0.8 : 0.25;
        const auto [err, c] = testkit::tabular_ml_error(testkit::random_tiny(sp, stream_seed(3, s)));
        worst = std::max(worst, err);
        cells += c;
    }
    return {worst <= 1e-8 && cells > 0,
            "max |ML minimiser - E[.]|=" + fmt("%.3g", worst) + " (tol 1e-8) over " + std::to_string(cells) + " cells"};
}

Verdict criterion4(const Context&) {
    const auto cases = gradcheck_random_nets(100, 1);
    double worst = 0.0;
    for (const auto& c : cases) worst = std::max(worst, c.max_rel_error);
    return {worst <= 1e-4 && cases.size() == 100,
            "max relative error=" + fmt("%.3g", worst) + " (tol 1e-4) over " + std::to_string(cases.size()) + " nets"};
}

constexpr double kBatteryReference = 264.3;

Verdict criterion5(const Context& cx) {
    const fs::path dir = cx.out / "c5";
    run_cli(cx, "dp", cx.configs / "battery_sec43.cfg", dir);
    const double v = read_numeric_csv(dir / "dp_value.csv").at(0).at(0);
    const double rel = (v - kBatteryReference) / kBatteryReference;
    return {std::abs(rel) <= 0.03, "dp value=" + fmt("%.3f", v) + " vs 264.3, relative gap=" + fmt("%+.2f%%", 100 * rel) +
                                       " (tol 3%)"};
}

// Trains a desk config, evaluates its greedy control, and checks the gain
// against the DP value on the same config.
template <class Env>
Verdict train_vs_dp(const Context& cx, const std::string& cfg_name, const std::string& tag, bool agreement) {
    const fs::path cfg_path = cx.configs / (cfg_name + ".cfg");
    const fs::path dir = cx.out / tag;
    run_cli(cx, "dp", cfg_path, dir);
    run_cli(cx, "train", cfg_path, dir);
    run_cli(cx, "evaluate", cfg_path, dir);
    const double dp = read_numeric_csv(dir / "dp_value.csv").at(0).at(0);
    const auto m = read_numeric_csv(dir / "metrics.csv");
    const auto ev = read_numeric_csv(dir / "evaluate.csv").at(0);
    if (m.empty()) return {false, "no training iterations"};
    const double gain = tail_mean(m, kGain, 10);
    double worst_excess = -INFINITY;
    for (const auto& r : m) worst_excess = std::max(worst_excess, (r[kGain] - dp) / r[kGainSe]);
    const double ev_excess = (ev[0] - dp) / ev[1];
    const double rel = (gain - dp) / dp;
    const bool ok = std::abs(rel) <= 0.10 && worst_excess <= 3.0 && ev_excess <= 3.0;
    std::string d = "dp=" + fmt("%.2f", dp) + " final gain=" + fmt("%.2f", gain) + " (" + fmt("%+.2f%%", 100 * rel) +
                    ", tol 10%), max training excess over dp=" + fmt("%.2f", worst_excess) + " SE, greedy evaluate=" +
                    fmt("%.2f", ev[0]) + " +- " + fmt("%.2f", ev[1]) + " (" + fmt("%+.2f", ev_excess) + " SE vs dp), iterations=" +
                    std::to_string(m.size());
    if (agreement) {
        const ExperimentConfig c = ExperimentConfig::parse_file(cfg_path.string());
        const Env& env = [&]() -> const Env& {
            if constexpr (std::is_same_v<Env, BatteryEnv>)
                return c.battery;
            else
                return c.thermal;
        }();
        const DpSolution sol = dp_solve(env, c.price, c.grid.dates, c.dp);
        SwitchingPolicy<Env> policy(env, c.learn.hidden, c.grid.dates, c.price.initial_curve(0.0));
        std::ifstream f(dir / "policy.ckpt");
        policy.bank() = ParamBank::load(f);
        const GreedyControl<Env> greedy(policy);
        const DpControl<Env> oracle(env, c.price, sol);
        const int n = std::min(25, c.grid.dates - 2);
        const double t = n * env.step();
        const double sd = std::sqrt(c.price.log_variance(t));
        long same = 0, total = 0;
        for (int q = -40; q <= 40; ++q) {
            const double x = q / 20.0 * sd;
            const double spot = c.price.initial_curve(t) * std::exp(x - 0.5 * c.price.log_variance(t));
            for (int i = 0; i < env.regime_count(); ++i)
                for (int k = 0; k < env.level_count(); ++k) {
                    const StatePoint s{n, t, spot, k};
                    if (!env.admissible(i, k) && env.level_count() > 1) continue;
                    same += greedy(s, i) == oracle(s, i);
                    ++total;
                }
        }
        d += ", greedy/dp action agreement at date " + std::to_string(n) + "=" + fmt("%.1f%%", 100.0 * same / total) +
             " (+-2 sd, informational)";
    }
    return {ok, d};
}

Verdict criterion8(const Context& cx) {
    const ExperimentConfig base = ExperimentConfig::parse_file((cx.configs / "thermal_desk.cfg").string());
    const double ps[] = {1.0, 0.81, 0.64};
    std::vector<double> vals, dps;
    std::string d;
    for (double p : ps) {
        ExperimentConfig c = base;
        if (p < 1.0) {
            c.grid.kind = GridKind::Thinned;
            c.grid.p_samp = p;
        }
        c.dp.decision_probability = p;
        const fs::path dir = cx.out / ("c8_p" + fmt("%.2f", p));
        fs::create_directories(dir);
        {
            std::ofstream f(dir / "ablation.cfg", std::ios::binary);
            f << c.serialize();
        }
        double s = 0.0;
        for (std::uint64_t seed : {1, 2, 3}) {
            const fs::path sd = dir / ("seed" + std::to_string(seed));
            run_cli(cx, "train", dir / "ablation.cfg", sd, seed);
            s += tail_mean(read_numeric_csv(sd / "metrics.csv"), kGain, 50);
        }
        run_cli(cx, "dp", dir / "ablation.cfg", dir);
        vals.push_back(s / 3.0);
        dps.push_back(read_numeric_csv(dir / "dp_value.csv").at(0).at(0));
        d += (d.empty() ? "" : ", ") + std::string("p=") + fmt("%.2f", p) + ": gain " + fmt("%.2f", vals.back()) + " (dp " +
             fmt("%.2f", dps.back()) + ")";
    }
    const bool ok = vals[1] <= vals[0] && vals[2] <= vals[1];
    return {ok, d + "; mean of last 50 iterations over 3 seeds, must be nonincreasing"};
}

Verdict criterion9(const Context& cx) {
    const ExperimentConfig base = ExperimentConfig::parse_file((cx.configs / "battery_desk.cfg").string());
    ExperimentConfig c = base;
    c.learn.iterations = 20;
    c.learn.batch = 500;
    c.learn.threads = 2;
    c.eval_paths = 20000;
    const fs::path dir = cx.out / "c9";
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "repro.cfg", std::ios::binary);
        f << c.serialize();
    }
    for (const char* run_dir : {"a", "b"}) {
        for (const char* sub : {"train", "dp", "evaluate", "gradcheck"}) run_cli(cx, sub, dir / "repro.cfg", dir / run_dir);
        run_cli(cx, "enumcheck", cx.configs / "tiny_enum.cfg", dir / run_dir);
    }
    int compared = 0;
    std::string diff;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        const auto name = e.path().filename();
        ++compared;
        if (slurp(e.path()) != slurp(dir / "b" / name)) diff += " " + name.string();
    }
    return {diff.empty() && compared >= 8,
            std::to_string(compared) + " artifacts compared" + (diff.empty() ? ", all byte-identical" : ", differing:" + diff)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    int criterion = 0;
    Context cx;
    std::string configs = std::string(CTRLRAND_SOURCE_DIR) + "/configs", out = "acceptance_out";
    app.add_option("--criterion", criterion, "criterion number 1-9")->required()->check(CLI::Range(1, 9));
    app.add_option("--configs", configs, "directory with the shipped configs");
    app.add_option("--out", out, "scratch directory for artifacts");
    app.add_flag("--quiet", cx.quiet, "suppress subcommand output");
    CLI11_PARSE(app, argc, argv);
    cx.configs = configs;
    cx.out = out;
    Verdict v;
    try {
        switch (criterion) {
            case 1: v = criterion1(cx); break;
            case 2: v = criterion2(cx); break;
            case 3: v = criterion3(cx); break;
            case 4: v = criterion4(cx); break;
            case 5: v = criterion5(cx); break;
            case 6: v = train_vs_dp<BatteryEnv>(cx, "battery_desk", "c6", true); break;
            case 7: v = train_vs_dp<ThermalEnv>(cx, "thermal_desk", "c7", true); break;
            case 8: v = criterion8(cx); break;
            case 9: v = criterion9(cx); break;
        }
    } catch (const std::exception& e) {
        v = {false, std::string("error: ") + e.what()};
    }
    std::cout << "criterion " << criterion << ' ' << (v.pass ? "PASS" : "FAIL") << ' ' << v.detail << std::endl;
    return v.pass ? 0 : 1;
}
