#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ctrlrand/config.hpp"
#include "ctrlrand/csv.hpp"
#include "ctrlrand/gradcheck.hpp"
#include "ctrlrand/learn.hpp"
#include "ctrlrand/oracle.hpp"

namespace ctrlrand {

struct RunOptions {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool wallclock = false;
};

// Stream tags for the per-subcommand random streams.
enum CliStream : std::uint64_t { kEvaluateStream = 4, kEnumStream = 5, kGradcheckStream = 6, kReweightStream = 7 };

struct EnumcheckResult {
    double mean_one_error = 0.0;
    double grad_fd_error = 0.0;
    double score_identity_error = 0.0;
    int draws = 0;
};

inline constexpr double kMeanOneTolerance = 1e-12;
inline constexpr double kGradFdTolerance = 1e-8;
inline constexpr double kGradcheckTolerance = 1e-4;

// `draws` random parameter vectors for the tiny instance; errors are maxima
// over draws and components.
inline EnumcheckResult enumcheck(const TinySpec& spec, std::uint64_t seed, int draws = 20) {
    EnumcheckResult r;
    r.draws = draws;
    for (int d = 0; d < draws; ++d) {
        TinyPolicy pol(spec);
        Rng rng(stream_seed(seed, kEnumStream, static_cast<std::uint64_t>(d)));
        pol.bank().init_xavier(rng);
        for (double& p : pol.theta()) p += 0.5 * rng.normal();
        const TinyReport rep = enumerate_tiny_instance(pol);
        r.mean_one_error = std::max(r.mean_one_error, std::abs(rep.mean_density - 1.0));
        for (std::size_t q = 0; q < rep.grad_fd.size(); ++q) {
            r.grad_fd_error = std::max(r.grad_fd_error, std::abs(rep.grad_score[q] - rep.grad_fd[q]));
            r.score_identity_error = std::max(r.score_identity_error, std::abs(rep.score_identity[q]));
        }
    }
    return r;
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write '" + p.string() + "'");
    f << s;
}

inline ParamBank read_bank(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw Error("cannot read checkpoint '" + p.string() + "'");
    return ParamBank::load(f);
}

template <class Fn>
decltype(auto) with_env(ExperimentConfig& c, Fn&& fn) {
    if (c.env == EnvKind::Thermal) return fn(c.thermal);
    if (c.env == EnvKind::Battery) return fn(c.battery);
    throw ConfigError("env.kind: this subcommand needs thermal or battery");
}

}  // namespace detail

// Runs one subcommand; returns the process exit status. Errors are reported
// on `err` and mapped to status 1 (2 for configuration problems).
inline int run(const std::string& sub, const RunOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    namespace fs = std::filesystem;
    try {
        ExperimentConfig cfg = ExperimentConfig::parse_file(opt.config_path);
        if (opt.seed) cfg.learn.seed = *opt.seed;
        if (opt.threads) cfg.learn.threads = *opt.threads;
        cfg.validate();
        const fs::path dir(opt.out_dir);
        fs::create_directories(dir);

        if (sub == "gradcheck") {
            const auto cases = gradcheck_random_nets(100, cfg.learn.seed);
            std::ofstream f(dir / "gradcheck.csv", std::ios::binary);
            f << "case,head,widths,max_rel_error\n";
            double worst = 0.0;
            for (std::size_t c = 0; c < cases.size(); ++c) {
                std::string w;
                for (std::size_t l = 0; l < cases[c].widths.size(); ++l) w += (l ? "-" : "") + std::to_string(cases[c].widths[l]);
                write_csv_row(f, {std::to_string(c), head_name(cases[c].head), w, csv_number(cases[c].max_rel_error)});
                worst = std::max(worst, cases[c].max_rel_error);
            }
            const bool ok = worst <= kGradcheckTolerance;
            out << "gradcheck " << (ok ? "PASS" : "FAIL") << " max_rel_error=" << csv_number(worst) << " cases=" << cases.size()
                << "\n";
            return ok ? 0 : 1;
        }

        if (sub == "enumcheck") {
            if (cfg.env != EnvKind::Tiny) throw ConfigError("env.kind: enumcheck needs env.kind = tiny");
            const EnumcheckResult r = enumcheck(cfg.tiny, cfg.learn.seed);
            const bool m1 = r.mean_one_error <= kMeanOneTolerance, g1 = r.grad_fd_error <= kGradFdTolerance;
            std::ofstream f(dir / "enumcheck.csv", std::ios::binary);
            f << "check,max_error,tolerance,draws\n";
            write_csv_row(f, {"mean_one", csv_number(r.mean_one_error), csv_number(kMeanOneTolerance), std::to_string(r.draws)});
            write_csv_row(f, {"grad_fd", csv_number(r.grad_fd_error), csv_number(kGradFdTolerance), std::to_string(r.draws)});
            out << "mean_one " << (m1 ? "PASS" : "FAIL") << " max_error=" << csv_number(r.mean_one_error) << "\n";
            out << "grad_fd " << (g1 ? "PASS" : "FAIL") << " max_error=" << csv_number(r.grad_fd_error) << "\n";
            return m1 && g1 ? 0 : 1;
        }

        const int dates = cfg.grid.dates;
        return detail::with_env(cfg, [&](const auto& env) -> int {
            using Env = std::decay_t<decltype(env)>;
            if (sub == "train") {
                std::ofstream f(dir / "metrics.csv", std::ios::binary);
                write_metrics_header(f);
                auto res = train(env, cfg.price, cfg.grid, cfg.learn, [&](const IterationMetrics& m) {
                    write_metrics_row(f, m, opt.wallclock);
                    if (m.iteration % 100 == 0) f.flush();
                });
                std::ostringstream p, c;
                res.policy.bank().save(p);
                res.critic.bank().save(c);
                detail::write_text(dir / "policy.ckpt", p.str());
                detail::write_text(dir / "critic.ckpt", c.str());
                detail::write_text(dir / "config.cfg", cfg.serialize());
                if (!res.metrics.empty()) {
                    const auto& m = res.metrics.back();
                    out << "train iterations=" << res.metrics.size() << " function_value=" << csv_number(m.function_value)
                        << " gain_expectation=" << csv_number(m.gain_expectation) << "\n";
                } else {
                    out << "train iterations=0\n";
                }
                return 0;
            }
            if (sub == "dp") {
                const DpSolution sol = dp_solve(env, cfg.price, dates, cfg.dp);
                std::ofstream v(dir / "dp_value.csv", std::ios::binary);
                v << "value,nodes,span_sd,dates\n";
                write_csv_row(v, {csv_number(sol.initial_value()), std::to_string(cfg.dp.nodes), csv_number(cfg.dp.span_sd),
                                  std::to_string(dates)});
                std::ofstream pol(dir / "dp_policy.csv", std::ios::binary);
                sol.write_csv(pol);
                out << "dp value=" << csv_number(sol.initial_value()) << "\n";
                return 0;
            }
            if (sub == "evaluate") {
                SwitchingPolicy<Env> policy(env, cfg.learn.hidden, dates, cfg.price.initial_curve(0.0));
                ParamBank bank = detail::read_bank(dir / "policy.ckpt");
                if (!(bank.shape() == policy.bank().shape()) || bank.size() != policy.bank().size())
                    throw ShapeError("policy.ckpt does not match the configured network");
                policy.bank() = std::move(bank);
                Rng rng(stream_seed(cfg.learn.seed, kEvaluateStream));
                const Estimate e = evaluate_control(GreedyControl<Env>(policy), env, cfg.price, dates, cfg.eval_paths, rng);
                std::ofstream f(dir / "evaluate.csv", std::ios::binary);
                f << "value,se,paths\n";
                write_csv_row(f, {csv_number(e.mean), csv_number(e.se), std::to_string(e.n)});
                out << "evaluate value=" << csv_number(e.mean) << " se=" << csv_number(e.se) << "\n";
                return 0;
            }
            throw ConfigError("unknown subcommand '" + sub + "' (train | dp | evaluate | gradcheck | enumcheck)");
        });
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace ctrlrand
