#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "ctrlrand/learn.hpp"
#include "ctrlrand/oracle.hpp"

using namespace ctrlrand;

namespace {

double deterministic_curve_sum(const PriceModel& m, double production_cost) {
    double s = 0.0;
    for (int n = 0; n < 30; ++n) s += (m.initial_curve(n) - production_cost) * 1.0;
    return s;
}

}  // namespace

TEST(HatWeights, MatchBruteForceIntegration) {
    std::vector<double> nodes;
    for (int j = 0; j < 11; ++j) nodes.push_back(-1.0 + 0.2 * j);
    for (double mu : {-1.3, -0.2, 0.05, 0.9}) {
        const double s = 0.17;
        std::vector<double> w(nodes.size());
        hat_weights(nodes, mu, s, w);
        double sum = 0.0;
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            // Midpoint rule over +-12 sd of the hat function times the density.
            double ref = 0.0;
            const int steps = 200000;
            const double a = mu - 12 * s, h = 24 * s / steps;
            for (int i = 0; i < steps; ++i) {
                const double x = a + (i + 0.5) * h;
                double hat;
                if (j == 0 && x <= nodes[0])
                    hat = 1.0;
                else if (j + 1 == nodes.size() && x >= nodes.back())
                    hat = 1.0;
                else
                    hat = std::max(0.0, 1.0 - std::abs(x - nodes[j]) / 0.2);
                ref += hat * std::exp(-0.5 * (x - mu) * (x - mu) / (s * s)) / (s * std::sqrt(2 * M_PI)) * h;
            }
            EXPECT_NEAR(w[j], ref, 1e-9) << "mu=" << mu << " j=" << j;
            EXPECT_GE(w[j], 0.0);
            sum += w[j];
        }
        EXPECT_NEAR(sum, 1.0, 1e-10);
    }
}

TEST(Dp, ThermalDeterministicFreeSwitchingClosedForm) {
    ThermalEnv env;
    env.production_cost = 0.0;
    env.cost_on = env.cost_off = 0.0;
    PriceModel m;
    m.sigma = 0.0;
    const auto sol = dp_solve(env, m, 31);
    EXPECT_NEAR(sol.initial_value(), deterministic_curve_sum(m, 0.0), 1e-9);
}

TEST(Dp, ThermalDeterministicBruteForce) {
    // Exhaustive search over on/off sequences for a short horizon.
    ThermalEnv env;
    PriceModel m;
    m.sigma = 0.0;
    m.horizon = 10.0;
    m.curve_period = 10.0;
    const auto sol = dp_solve(env, m, 11);
    double best = -1e18;
    for (int mask = 0; mask < (1 << 9); ++mask) {
        int a = 1;
        double r = 0.0;
        for (int n = 0; n < 10; ++n) {
            if (n >= 1) {
                const int b = mask >> (n - 1) & 1;
                if (b != a) r -= 5.0;
                a = b;
            }
            r += a * (m.initial_curve(n) - 90.0);
        }
        best = std::max(best, r);
    }
    EXPECT_NEAR(sol.initial_value(), best, 1e-9);
}

TEST(Dp, MonotoneInSwitchingCostsAndCapacity) {
    PriceModel m;
    DpConfig cfg;
    cfg.nodes = 100;
    BatteryEnv b;
    const double base = dp_solve(b, m, 31, cfg).initial_value();
    BatteryEnv c1 = b;
    c1.costs[0][2] = c1.costs[2][0] = 8.0;
    EXPECT_LE(dp_solve(c1, m, 31, cfg).initial_value(), base + 1e-9);
    BatteryEnv c2 = b;
    c2.costs[1][0] = c2.costs[1][2] = 4.0;
    EXPECT_LE(dp_solve(c2, m, 31, cfg).initial_value(), base + 1e-9);
    BatteryEnv k3 = b;
    k3.capacity = 3.0;
    EXPECT_GE(dp_solve(k3, m, 31, cfg).initial_value(), base - 1e-9);
    BatteryEnv k4 = b;
    k4.capacity = 4.0;
    EXPECT_GE(dp_solve(k4, m, 31, cfg).initial_value(), dp_solve(k3, m, 31, cfg).initial_value() - 1e-9);
    ThermalEnv t;
    const double tb = dp_solve(t, m, 31, cfg).initial_value();
    ThermalEnv t1 = t;
    t1.cost_on = 9.0;
    EXPECT_LE(dp_solve(t1, m, 31, cfg).initial_value(), tb + 1e-9);
    ThermalEnv t2 = t;
    t2.cost_off = 9.0;
    EXPECT_LE(dp_solve(t2, m, 31, cfg).initial_value(), tb + 1e-9);
}

TEST(Dp, BellmanResidualAndTerminalZero) {
    PriceModel m;
    BatteryEnv b;
    const auto sol = dp_solve(b, m, 31);
    EXPECT_LE(bellman_residual(b, m, sol), 1e-10);
    for (double v : sol.value.back()) EXPECT_EQ(v, 0.0);
    ThermalEnv t;
    DpConfig thinned;
    thinned.decision_probability = 0.64;
    const auto st = dp_solve(t, m, 31, thinned);
    EXPECT_LE(bellman_residual(t, m, st), 1e-10);
}

TEST(Dp, ResolutionConvergence) {
    PriceModel m;
    BatteryEnv b;
    DpConfig c200, c400;
    c400.nodes = 400;
    const double v200 = dp_solve(b, m, 31, c200).initial_value();
    const double v400 = dp_solve(b, m, 31, c400).initial_value();
    EXPECT_LE(std::abs(v200 - v400) / std::abs(v400), 0.002);
    ThermalEnv t;
    const double w200 = dp_solve(t, m, 31, c200).initial_value();
    const double w400 = dp_solve(t, m, 31, c400).initial_value();
    EXPECT_LE(std::abs(w200 - w400) / std::abs(w400), 0.002);
}

TEST(Dp, ErrorsSignalled) {
    PriceModel m;
    BatteryEnv b;
    DpConfig narrow;
    narrow.span_sd = 3.0;
    EXPECT_THROW(dp_solve(b, m, 31, narrow), ResolutionError);
    DpConfig coarse;
    coarse.nodes = 20;
    EXPECT_THROW(dp_solve(b, m, 31, coarse), ConfigError);
    EXPECT_THROW(dp_solve(b, m, 16, DpConfig{}), ConfigError);  // step 2 vs env step 1
}

TEST(Dp, ThinnedDecisionsLowerValue) {
    PriceModel m;
    ThermalEnv t;
    double prev = 1e18;
    for (double p : {1.0, 0.81, 0.64, 0.3}) {
        DpConfig c;
        c.decision_probability = p;
        const double v = dp_solve(t, m, 31, c).initial_value();
        EXPECT_LE(v, prev + 1e-9);
        prev = v;
    }
}

TEST(Dp, CsvExport) {
    PriceModel m;
    BatteryEnv b;
    DpConfig c;
    c.nodes = 50;
    const auto sol = dp_solve(b, m, 31, c);
    std::ostringstream os;
    sol.write_csv(os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "date,node,spot,regime,inventory,value,greedy_action");
    long rows = 0;
    while (std::getline(is, line)) ++rows;
    // Date 0 has a single node; other dates 50 nodes; 3 regimes x 3 levels.
    EXPECT_EQ(rows, (1 + 30 * 50) * 9);
}

TEST(DpPolicy, DeterministicMonteCarloMatchesDp) {
    PriceModel m;
    m.sigma = 0.0;
    for (int which = 0; which < 2; ++which) {
        Rng r(1);
        if (which == 0) {
            ThermalEnv t;
            const auto sol = dp_solve(t, m, 31);
            EXPECT_NEAR(mc_value_of_dp_policy(t, m, sol, 10, r).mean, sol.initial_value(), 1e-9);
            const DpControl<ThermalEnv> ctl(t, m, sol);
            EXPECT_NEAR(evaluate_control(ctl, t, m, 31, 5, r).mean, sol.initial_value(), 1e-9);
        } else {
            BatteryEnv b;
            const auto sol = dp_solve(b, m, 31);
            EXPECT_NEAR(mc_value_of_dp_policy(b, m, sol, 10, r).mean, sol.initial_value(), 1e-9);
        }
    }
}

TEST(DpPolicy, BatteryMonteCarloWithinThreeStandardErrors) {
    PriceModel m;
    BatteryEnv b;
    const auto sol = dp_solve(b, m, 31);
    Rng r(2);
    const auto e = mc_value_of_dp_policy(b, m, sol, 100000, r);
    EXPECT_NEAR(e.mean, sol.initial_value(), 3 * e.se);
}

TEST(DpPolicy, ThinnedMonteCarloWithinThreeStandardErrors) {
    PriceModel m;
    ThermalEnv t;
    DpConfig c;
    c.decision_probability = 0.64;
    const auto sol = dp_solve(t, m, 31, c);
    Rng r(3);
    const auto e = mc_value_of_dp_policy(t, m, sol, 100000, r);
    EXPECT_NEAR(e.mean, sol.initial_value(), 3 * e.se);
}

TEST(DpPolicy, FeasibleControlsBelowDp) {
    PriceModel m;
    ThermalEnv t;
    const double v = dp_solve(t, m, 31).initial_value();
    Rng r(4);
    const auto on = evaluate_control([](const StatePoint&, int) { return 1; }, t, m, 31, 20000, r);
    EXPECT_LE(on.mean, v + 3 * on.se);
    const auto thresh = evaluate_control([](const StatePoint& s, int) { return s.spot > 90.0 ? 1 : 0; }, t, m, 31, 20000, r);
    EXPECT_LE(thresh.mean, v + 3 * thresh.se);
    BatteryEnv b;
    const double vb = dp_solve(b, m, 31).initial_value();
    auto band = [&](const StatePoint& s, int from) {
        const double f = m.initial_curve(s.time);
        int a = s.spot > 1.1 * f ? 0 : (s.spot < 0.9 * f ? 2 : 1);
        if (!b.admissible(a, s.level)) a = 1;
        (void)from;
        return a;
    };
    const auto e = evaluate_control(band, b, m, 31, 20000, r);
    EXPECT_LE(e.mean, vb + 3 * e.se);
}

TEST(Tiny, MeanOneAndGradientOnSeveralSpecs) {
    for (int dates : {1, 2, 3})
        for (TinyFamily fam : {TinyFamily::General, TinyFamily::Restricted}) {
            TinySpec sp;
            sp.dates = dates;
            sp.family = fam;
            sp.mass = fam == TinyFamily::General ? 0.25 : 0.7;
            if (dates == 3) {
                sp.prices = {80.0, 100.0, 120.0};
                sp.price_probs = {0.3, 0.4, 0.3};
            }
            TinyPolicy pol(sp);
            Rng r(stream_seed(5, dates, static_cast<int>(fam)));
            pol.bank().init_xavier(r);
            for (double& p : pol.theta()) p += 0.5 * r.normal();
            const auto rep = enumerate_tiny_instance(pol);
            EXPECT_NEAR(rep.mean_density, 1.0, 1e-12);
            double total = 0.0;
            for (const auto& p : enumerate_paths(pol)) total += p.probability;
            EXPECT_NEAR(total, 1.0, 1e-12);
            for (std::size_t q = 0; q < rep.grad_fd.size(); ++q) {
                EXPECT_NEAR(rep.grad_score[q], rep.grad_fd[q], 1e-8);
                EXPECT_NEAR(rep.score_identity[q], 0.0, 1e-12);
            }
        }
}

TEST(Tiny, ThreeMarks) {
    TinySpec sp;
    sp.marks = 3;
    sp.mass = 0.2;
    sp.cap = 1.5;
    TinyPolicy pol(sp);
    Rng r(6);
    pol.bank().init_xavier(r);
    const auto rep = enumerate_tiny_instance(pol);
    EXPECT_NEAR(rep.mean_density, 1.0, 1e-12);
    for (std::size_t q = 0; q < rep.grad_fd.size(); ++q) EXPECT_NEAR(rep.grad_score[q], rep.grad_fd[q], 1e-8);
}

TEST(Tiny, SymmetricInstanceHasZeroGradient) {
    // Zero rewards and costs: J does not depend on theta at all.
    TinySpec sp;
    sp.family = TinyFamily::Restricted;
    sp.cost = 0.0;
    sp.strike = 100.0;
    sp.prices = {100.0};
    sp.price_probs = {1.0};
    sp.terminal_weight = 0.0;
    TinyPolicy pol(sp);
    const auto rep = enumerate_tiny_instance(pol);
    for (double g : rep.grad_score) EXPECT_EQ(g, 0.0);
    for (double g : rep.grad_fd) EXPECT_EQ(g, 0.0);
}

TEST(Tiny, ExactJMatchesPathSum) {
    TinySpec sp;
    TinyPolicy pol(sp);
    Rng r(7);
    pol.bank().init_xavier(r);
    double j = 0.0;
    for (const auto& p : enumerate_paths(pol)) j += p.probability * p.reward;
    EXPECT_NEAR(tiny_J(pol), j, 1e-12);
}

TEST(Tiny, SpecValidation) {
    TinySpec sp;
    sp.mass = 0.4;
    sp.cap = 1.5;  // 0.4 * 2 * 1.5 >= 1
    EXPECT_THROW(sp.validate(), ConfigError);
    sp = TinySpec{};
    sp.dates = 4;
    EXPECT_THROW(sp.validate(), ConfigError);
    sp = TinySpec{};
    sp.price_probs = {0.5, 0.6};
    EXPECT_THROW(sp.validate(), ConfigError);
}
