#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "ctrlrand/envs.hpp"
#include "ctrlrand/errors.hpp"
#include "ctrlrand/market.hpp"
#include "ctrlrand/mlp.hpp"
#include "ctrlrand/pointproc.hpp"
#include "ctrlrand/random.hpp"

namespace ctrlrand {

// Observation at a decision or critic point. `date` is the network bucket.
struct StatePoint {
    int date = 0;
    double time = 0.0;
    double spot = 0.0;
    int level = 0;
};

// One draw of the action measure: regime `from` held just before, `to` after.
// The price and inventory do not jump, so a single StatePoint serves both
// x_{n-} and x_n.
struct JumpPoint {
    StatePoint state;
    int from = 0;
    int to = 0;
    double reward_before = 0.0;  // r_{n-}
    double reward_after = 0.0;   // r_n
};

struct EpisodeTrajectory {
    StatePoint initial;
    int initial_regime = 0;
    std::vector<JumpPoint> points;
    double final_reward = 0.0;     // r_{N+1}
    double terminal_reward = 0.0;  // G_T
    double weight = 1.0;

    double total() const { return final_reward + terminal_reward; }
    int switches() const {
        return static_cast<int>(std::count_if(points.begin(), points.end(), [](const JumpPoint& p) { return p.from != p.to; }));
    }
};

template <class P>
concept PolicyFamily = requires(const P& p, const StatePoint& s, int a, double w, std::span<double> g) {
    { p.parameter_count() } -> std::convertible_to<std::size_t>;
    p.add_score(s, a, a, w, g);
};

template <class C>
concept Critic = requires(const C& c, const StatePoint& s, int a, double w, std::span<double> g) {
    { c.parameter_count() } -> std::convertible_to<std::size_t>;
    { c.value(s, a) } -> std::convertible_to<double>;
    c.add_gradient(s, a, w, g);
};

// Policy bank: sigmoid switch probability for two regimes, masked softmax
// over regimes otherwise. Input is spot / spot_scale.
template <class Env>
class SwitchingPolicy {
public:
    static constexpr double clamp_lo = 1e-6;

    SwitchingPolicy() = default;
    SwitchingPolicy(const Env& env, const std::vector<int>& hidden, int dates, double spot_scale)
        : env_(&env), spot_scale_(spot_scale) {
        std::vector<int> widths{1};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        const bool two = env.regime_count() == 2;
        widths.push_back(two ? 1 : env.regime_count());
        bank_ = ParamBank(MlpShape(widths, two ? Head::Sigmoid : Head::MaskedSoftmax), dates, env.regime_count(),
                          env.level_count());
    }

    ParamBank& bank() { return bank_; }
    const ParamBank& bank() const { return bank_; }
    std::size_t parameter_count() const { return bank_.size(); }
    double spot_scale() const { return spot_scale_; }
    const Env& env() const { return *env_; }

    // Tilted mark distribution lambda_bar * mu over regime indices.
    void distribution(const StatePoint& s, int from, std::span<double> out) const {
        auto& ws = workspace();
        const double x = s.spot / spot_scale_;
        const double* p = bank_.net(s.date, from, s.level);
        if (env_->regime_count() == 2) {
            const int other = 1 - from;
            out[from] = 1.0;
            out[other] = 0.0;
            if (!env_->admissible(other, s.level)) return;
            if (!env_->admissible(from, s.level)) {
                out[from] = 0.0;
                out[other] = 1.0;
                return;
            }
            const double y = mlp_forward(bank_.shape(), p, {&x, 1}, ws)[0];
            const double q = std::clamp(y, clamp_lo, 1.0 - clamp_lo);
            out[other] = q;
            out[from] = 1.0 - q;
            return;
        }
        const auto y = mlp_forward(bank_.shape(), p, {&x, 1}, ws, admissible_mask(*env_, s.level));
        std::copy(y.begin(), y.end(), out.begin());
    }

    // grad += weight * d log p(to | s, from) / d theta.
    void add_score(const StatePoint& s, int from, int to, double weight, std::span<double> grad) const {
        if (weight == 0.0) return;
        auto& ws = workspace();
        const double x = s.spot / spot_scale_;
        const std::size_t off = bank_.offset(s.date, from, s.level);
        const double* p = bank_.params().data() + off;
        double* g = grad.data() + off;
        if (env_->regime_count() == 2) {
            if (!env_->admissible(1 - from, s.level) || !env_->admissible(from, s.level)) return;
            const double y = mlp_forward(bank_.shape(), p, {&x, 1}, ws)[0];
            if (y < clamp_lo || y > 1.0 - clamp_lo) return;
            const double u = to != from ? weight / y : -weight / (1.0 - y);
            mlp_backward(bank_.shape(), p, ws, {&u, 1}, g);
            return;
        }
        const std::uint32_t mask = admissible_mask(*env_, s.level);
        if (!(mask >> to & 1u)) throw MaskViolation("score requested for a masked regime");
        const auto y = mlp_forward(bank_.shape(), p, {&x, 1}, ws, mask);
        double u[32];
        const int n = env_->regime_count();
        for (int o = 0; o < n; ++o) u[o] = 0.0;
        u[to] = weight / y[to];
        mlp_backward(bank_.shape(), p, ws, {u, static_cast<std::size_t>(n)}, g);
    }

private:
    static MlpWorkspace& workspace() {
        static thread_local MlpWorkspace ws;
        return ws;
    }
    const Env* env_ = nullptr;
    double spot_scale_ = 1.0;
    ParamBank bank_;
};

// Critic bank J^kappa(n, i, k)(spot) = scale * net(spot / spot_scale); the
// last date (T) is identically zero.
template <class Env>
class CriticBank {
public:
    CriticBank() = default;
    CriticBank(const Env& env, const std::vector<int>& hidden, int dates, double spot_scale, double output_scale)
        : spot_scale_(spot_scale), output_scale_(output_scale) {
        std::vector<int> widths{1};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(1);
        bank_ = ParamBank(MlpShape(widths, Head::Linear), dates, env.regime_count(), env.level_count());
    }

    ParamBank& bank() { return bank_; }
    const ParamBank& bank() const { return bank_; }
    std::size_t parameter_count() const { return bank_.size(); }
    double output_scale() const { return output_scale_; }

    double value(const StatePoint& s, int regime) const {
        if (s.date >= bank_.dates() - 1) return 0.0;
        auto& ws = workspace();
        const double x = s.spot / spot_scale_;
        return output_scale_ * mlp_forward(bank_.shape(), bank_.net(s.date, regime, s.level), {&x, 1}, ws)[0];
    }

    void add_gradient(const StatePoint& s, int regime, double weight, std::span<double> grad) const {
        if (s.date >= bank_.dates() - 1 || weight == 0.0) return;
        auto& ws = workspace();
        const double x = s.spot / spot_scale_;
        const std::size_t off = bank_.offset(s.date, regime, s.level);
        const double* p = bank_.params().data() + off;
        mlp_forward(bank_.shape(), p, {&x, 1}, ws);
        const double u = weight * output_scale_;
        mlp_backward(bank_.shape(), p, ws, {&u, 1}, grad.data() + off);
    }

private:
    static MlpWorkspace& workspace() {
        static thread_local MlpWorkspace ws;
        return ws;
    }
    double spot_scale_ = 1.0;
    double output_scale_ = 1.0;
    ParamBank bank_;
};

// Martingale-loss terms of one trajectory at its regime changes:
// grad += scale * (r_n + J(tau_n, x_n, a_n) - G_T - r_{N+1}) dJ. With
// `anchor_initial` the start point (0, x_0, a_0) is included as well.
template <Critic C>
double accumulate_martingale_loss(const EpisodeTrajectory& tr, const C& critic, std::span<double> grad, double scale,
                                  bool anchor_initial = false) {
    const double end = tr.total();
    double loss = 0.0;
    if (anchor_initial) {
        const double res = critic.value(tr.initial, tr.initial_regime) - end;
        loss += res * res;
        critic.add_gradient(tr.initial, tr.initial_regime, scale * res, grad);
    }
    for (const auto& p : tr.points) {
        if (p.from == p.to) continue;
        const double res = p.reward_after + critic.value(p.state, p.to) - end;
        loss += res * res;
        critic.add_gradient(p.state, p.to, scale * res, grad);
    }
    return loss;
}

// Score-form terms of one trajectory:
// grad += scale * (J(x_n, a_n) - J(x_{n-}, a_{n-1}) + r_n - r_{n-}) dlog lambda(a_n).
template <PolicyFamily P, Critic C>
void accumulate_policy_gradient(const EpisodeTrajectory& tr, const C& critic, const P& policy, std::span<double> grad,
                                double scale) {
    for (const auto& p : tr.points) {
        if (p.from == p.to) continue;
        const double adv = critic.value(p.state, p.to) - critic.value(p.state, p.from) + p.reward_after - p.reward_before;
        policy.add_score(p.state, p.from, p.to, scale * adv, grad);
    }
}

inline double batch_weight(std::span<const EpisodeTrajectory> batch) {
    if (batch.empty()) throw Error("empty trajectory batch");
    double w = 0.0;
    for (const auto& t : batch) w += t.weight;
    if (!(w > 0.0)) throw Error("trajectory batch has no weight");
    return w;
}

// Weighted batch estimator of grad_kappa ML; returns the weighted mean loss.
template <Critic C>
double martingale_loss_gradient(std::span<const EpisodeTrajectory> batch, const C& critic, std::span<double> grad,
                                bool anchor_initial = false) {
    const double w = batch_weight(batch);
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const auto& t : batch) loss += t.weight * accumulate_martingale_loss(t, critic, grad, t.weight / w, anchor_initial);
    return loss / w;
}

template <PolicyFamily P, Critic C>
void policy_gradient(std::span<const EpisodeTrajectory> batch, const C& critic, const P& policy, std::span<double> grad) {
    const double w = batch_weight(batch);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& t : batch) accumulate_policy_gradient(t, critic, policy, grad, t.weight / w);
}

// Per-date constants of the price model on the lattice t_n = n * dt.
struct LatticeMarket {
    std::vector<double> time, mult, disc, step_sd, marginal_sd;
    const PriceModel* model = nullptr;
    double dt = 1.0;

    LatticeMarket() = default;
    LatticeMarket(const PriceModel& m, int dates) : model(&m) {
        dt = m.horizon / (dates - 1);
        for (int n = 0; n < dates; ++n) {
            const double t = n == dates - 1 ? m.horizon : n * dt;
            time.push_back(t);
            mult.push_back(m.initial_curve(t) * std::exp(-0.5 * m.log_variance(t)));
            disc.push_back(m.sigma * std::exp(-m.beta * t));
            marginal_sd.push_back(std::sqrt(m.factor_increment_variance(0.0, t)));
            step_sd.push_back(n + 1 < dates ? std::sqrt(m.factor_increment_variance(t, (n + 1) * dt)) : 0.0);
        }
    }
    int dates() const { return static_cast<int>(time.size()); }
    double spot(int n, double factor) const { return mult[n] * std::exp(disc[n] * factor); }
};

struct IntensitySchedule {
    double discrete_start = 1.0;
    double discrete_end = 1.0;
    double continuous_start = 0.0;
    double continuous_end = 0.0;
    long ramp = 1;

    double frac(long j) const { return ramp <= 0 ? 1.0 : std::min(1.0, static_cast<double>(j) / ramp); }
    double discrete(long j) const { return discrete_start + (discrete_end - discrete_start) * frac(j); }
    double continuous(long j) const { return continuous_start + (continuous_end - continuous_start) * frac(j); }

    void validate() const {
        if (!(discrete_start >= 0.0 && discrete_end <= 1.0 && discrete_start <= discrete_end))
            throw ConfigError("schedule.discrete_* must satisfy 0 <= start <= end <= 1");
        if (!(continuous_start >= 0.0 && continuous_start <= continuous_end))
            throw ConfigError("schedule.continuous_* must satisfy 0 <= start <= end");
        if (ramp < 0) throw ConfigError("schedule.ramp must be nonnegative");
    }
    bool operator==(const IntensitySchedule&) const = default;
};

enum class GradientMode { Episodic, Local };

struct LearnConfig {
    GradientMode mode = GradientMode::Local;
    int batch = 2000;
    long iterations = 1000;
    double lr_theta = 0.00015;
    double lr_kappa = 0.03;
    double rate_decay = 0.0;  // l(j) = 1 / (1 + rate_decay * j)
    std::vector<int> hidden{16, 16};
    double critic_scale = 1.0;
    bool anchor_initial = true;
    int chunk = 50;
    int critic_starts = 0;  // local mode: regression starts per episode, 0 = all
    std::optional<IntensitySchedule> schedule;
    std::uint64_t seed = 1;
    int threads = 1;

    double rate_factor(long j) const { return 1.0 / (1.0 + rate_decay * static_cast<double>(j)); }

    void validate() const {
        if (batch <= 0) throw ConfigError("learn.batch must be positive");
        if (iterations < 0) throw ConfigError("learn.iterations must be nonnegative");
        if (!(lr_theta >= 0.0)) throw ConfigError("learn.lr_theta must be nonnegative");
        if (!(lr_kappa >= 0.0)) throw ConfigError("learn.lr_kappa must be nonnegative");
        if (!(rate_decay >= 0.0)) throw ConfigError("learn.rate_decay must be nonnegative");
        if (!(critic_scale > 0.0)) throw ConfigError("net.critic_scale must be positive");
        if (chunk <= 0) throw ConfigError("run.chunk must be positive");
        if (critic_starts < 0) throw ConfigError("learn.critic_starts must be nonnegative");
        if (threads <= 0) throw ConfigError("run.threads must be positive");
        for (int h : hidden)
            if (h <= 0) throw ConfigError("net.hidden widths must be positive");
        if (schedule) schedule->validate();
    }
};

// Grid law of episode j: the configured scheme, or the schedule's
// Lambda_d(j)-thinned lattice plus a Lambda_c(j) Poisson stream.
inline SampledGrid sample_episode_grid(const GridScheme& scheme, const std::optional<IntensitySchedule>& sched, long j,
                                       Rng& rng) {
    if (!sched) return sample_grid(scheme, rng);
    SampledGrid g = sample_grid(GridScheme::thinned(scheme.dates, sched->discrete(j), scheme.horizon), rng);
    const double rate = sched->continuous(j);
    if (rate > 0.0) {
        SampledGrid p = sample_grid(GridScheme::poisson(rate, scheme.horizon), rng);
        std::vector<std::pair<double, int>> all;
        for (std::size_t i = 0; i < g.size(); ++i) all.push_back({g.times[i], g.index[i]});
        for (std::size_t i = 0; i < p.size(); ++i) all.push_back({p.times[i], -1});
        std::sort(all.begin(), all.end());
        g.times.clear();
        g.index.clear();
        for (const auto& [t, k] : all) {
            if (!g.times.empty() && t <= g.times.back()) continue;
            g.times.push_back(t);
            g.index.push_back(k);
        }
    }
    return g;
}

inline bool grid_on_lattice(const SampledGrid& g) {
    return std::all_of(g.index.begin(), g.index.end(), [](int k) { return k >= 0; });
}

namespace detail {

inline int bucket(double t, double dt, int lo, int hi) {
    const int b = static_cast<int>(std::floor(t / dt + 1e-9));
    return std::clamp(b, lo, hi);
}

template <class Env, class Draw>
int draw_regime(const Env& env, const StatePoint& s, int from, Draw&& dist, Rng& rng) {
    double probs[32];
    const int n = env.regime_count();
    dist(s, from, std::span<double>(probs, n));
    return rng.categorical(std::span<const double>(probs, n));
}

}  // namespace detail

// Simulates the lattice from date n0 with the given factor, regime and
// level (reward counted from zero). Decisions happen at lattice dates d with
// n0 < d < N-1 and decide[d] != 0. Returns R_T + G_T. If `rec` is given the
// decision points and final rewards are recorded into it.
template <class Env, class Dist>
double simulate_lattice(const Env& env, const LatticeMarket& mk, Dist&& dist, int n0, double factor, int regime, int level,
                        const std::vector<char>& decide, Rng& rng, EpisodeTrajectory* rec = nullptr) {
    const int last = mk.dates() - 1;
    EnvState st{mk.time[n0], mk.spot(n0, factor), regime, level, 0.0};
    if (rec) {
        rec->initial = {n0, st.time, st.spot, level};
        rec->initial_regime = regime;
    }
    for (int n = n0; n < last; ++n) {
        if (n > n0 && decide[n]) {
            const StatePoint sp{n, st.time, st.spot, st.level};
            const int to = detail::draw_regime(env, sp, st.regime, dist, rng);
            const double before = st.reward;
            const int from = st.regime;
            if (to != from) st = switch_regime(env, st, to).first;
            if (rec) rec->points.push_back({sp, from, to, before, st.reward});
        }
        st = accumulate(env, st, mk.dt);
        factor += mk.step_sd[n] * rng.normal();
        st.time = mk.time[n + 1];
        st.spot = mk.spot(n + 1, factor);
    }
    const double g = env.terminal_reward(st.spot, st.regime, st.level);
    if (rec) {
        rec->final_reward = st.reward;
        rec->terminal_reward = g;
    }
    return st.reward + g;
}

// Episode on an arbitrary grid: reward segments run between consecutive
// lattice dates and grid times with the left-endpoint convention. Network
// buckets for off-lattice times are floor(t / dt) clamped to the decision
// dates (policy) or critic dates.
template <class Env, class Dist>
EpisodeTrajectory run_episode_general(const Env& env, const PriceModel& model, const LatticeMarket& mk, const SampledGrid& grid,
                                      Dist&& dist, Rng& rng) {
    const int last = mk.dates() - 1;
    std::vector<std::pair<double, int>> events;  // (time, lattice index or -1 for a decision-only time)
    for (int n = 1; n <= last; ++n) events.push_back({mk.time[n], n});
    std::vector<char> decide_at_lattice(mk.dates(), 0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid.index[i] >= 0)
            decide_at_lattice[grid.index[i]] = 1;
        else if (grid.times[i] < model.horizon)
            events.push_back({grid.times[i], -1});
    }
    std::sort(events.begin(), events.end());

    EpisodeTrajectory tr;
    EnvState st{0.0, mk.spot(0, 0.0), env.initial_regime(), env.initial_level(), 0.0};
    SpotState ps{0.0, 0.0};
    tr.initial = {0, 0.0, st.spot, st.level};
    tr.initial_regime = st.regime;
    for (const auto& [t, n] : events) {
        if (t > st.time) {
            const int lvl_before = st.level;
            st = accumulate(env, st, t - st.time);
            if (n < 0 && env.level_count() > 1 && st.level != lvl_before)
                throw ConfigError("off-lattice grids need an environment without inventory");
            ps = advance_factor(model, ps, t, rng);
            st.time = t;
            st.spot = model.spot(t, ps.factor);
        }
        const bool decision = (n < 0) || (n < last && decide_at_lattice[n]);
        if (!decision) continue;
        const int b = n >= 0 ? n : detail::bucket(t, mk.dt, 1, last - 1);
        const StatePoint sp{b, t, st.spot, st.level};
        const int to = detail::draw_regime(env, sp, st.regime, dist, rng);
        const double before = st.reward;
        const int from = st.regime;
        if (to != from) st = switch_regime(env, st, to).first;
        tr.points.push_back({sp, from, to, before, st.reward});
    }
    tr.final_reward = st.reward;
    tr.terminal_reward = env.terminal_reward(st.spot, st.regime, st.level);
    return tr;
}

template <class Env>
auto policy_sampler(const SwitchingPolicy<Env>& pol) {
    return [&pol](const StatePoint& s, int from, std::span<double> out) { pol.distribution(s, from, out); };
}

// One on-policy episode from the environment's initial state.
template <class Env>
EpisodeTrajectory run_episode(const Env& env, const PriceModel& model, const GridScheme& scheme,
                              const SwitchingPolicy<Env>& policy, Rng& rng) {
    const LatticeMarket mk(model, scheme.kind == GridKind::Poisson ? static_cast<int>(std::lround(model.horizon / env.step())) + 1
                                                                    : scheme.dates);
    const SampledGrid grid = sample_grid(scheme, rng);
    if (grid_on_lattice(grid)) {
        std::vector<char> decide(mk.dates(), 0);
        for (int k : grid.index) decide[k] = 1;
        EpisodeTrajectory tr;
        simulate_lattice(env, mk, policy_sampler(policy), 0, 0.0, env.initial_regime(), env.initial_level(), decide, rng, &tr);
        return tr;
    }
    return run_episode_general(env, model, mk, grid, policy_sampler(policy), rng);
}

struct IterationMetrics {
    long iteration = 0;
    double function_value = 0.0;
    double gain_expectation = 0.0;
    double gain_se = 0.0;
    double ml_loss = 0.0;
    double grad_norm_theta = 0.0;
    double grad_norm_kappa = 0.0;
    double wallclock_s = 0.0;
};

template <class Env>
struct TrainResult {
    SwitchingPolicy<Env> policy;
    CriticBank<Env> critic;
    std::vector<IterationMetrics> metrics;
};

namespace detail {

// Runs fn(chunk) for chunk = 0..chunks-1 on up to `threads` workers.
template <class Fn>
void parallel_chunks(int chunks, int threads, Fn&& fn) {
    if (threads <= 1 || chunks <= 1) {
        for (int c = 0; c < chunks; ++c) fn(c);
        return;
    }
    std::vector<std::thread> pool;
    const int t = std::min(threads, chunks);
    for (int w = 0; w < t; ++w)
        pool.emplace_back([&, w] {
            for (int c = w; c < chunks; c += t) fn(c);
        });
    for (auto& th : pool) th.join();
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

enum StreamTag : std::uint64_t { kPolicyInit = 1, kCriticInit = 2, kIteration = 3 };

}  // namespace detail

// Actor-critic training. Each iteration simulates `batch` on-policy episodes
// (their mean reward is the gain expectation), forms the critic and policy
// gradients with the current banks, then applies one ADAM step to each.
// Work is split into fixed chunks with their own random streams and reduced
// in chunk order, so results do not depend on the thread count.
template <class Env>
TrainResult<Env> train(const Env& env, const PriceModel& model, const GridScheme& scheme, const LearnConfig& cfg,
                       const std::function<void(const IterationMetrics&)>& on_iteration = {}) {
    env.validate();
    model.validate();
    scheme.validate();
    cfg.validate();
    if (!scheme.on_lattice()) throw ConfigError("training needs a lattice grid; use schedule.continuous_* for Poisson points");
    if (std::abs(scheme.step() - env.step()) > 1e-12) throw ConfigError("env.step must equal the grid step T/(N-1)");
    if (cfg.mode == GradientMode::Local && cfg.schedule && cfg.schedule->continuous_end > 0.0)
        throw ConfigError("local gradient mode runs on lattice grids only");
    if (cfg.schedule && cfg.schedule->continuous_end > 0.0 && env.level_count() > 1)
        throw ConfigError("Poisson action times need an environment without inventory");

    const int dates = scheme.dates;
    const int last = dates - 1;
    const double s0 = model.initial_curve(0.0);
    const LatticeMarket mk(model, dates);

    TrainResult<Env> res{SwitchingPolicy<Env>(env, cfg.hidden, dates, s0), CriticBank<Env>(env, cfg.hidden, dates, s0, cfg.critic_scale),
                         {}};
    {
        Rng r1(stream_seed(cfg.seed, detail::kPolicyInit));
        res.policy.bank().init_xavier(r1);
        Rng r2(stream_seed(cfg.seed, detail::kCriticInit));
        res.critic.bank().init_xavier(r2);
    }
    auto& policy = res.policy;
    auto& critic = res.critic;
    const std::size_t np = policy.parameter_count(), nc = critic.parameter_count();
    Adam adam_theta(cfg.lr_theta, np), adam_kappa(cfg.lr_kappa, nc);

    const int chunks = (cfg.batch + cfg.chunk - 1) / cfg.chunk;
    std::vector<std::vector<double>> gtheta(chunks, std::vector<double>(np)), gkappa(chunks, std::vector<double>(nc));
    struct ChunkStats {
        double gain = 0.0, gain2 = 0.0, loss = 0.0;
    };
    std::vector<ChunkStats> stats(chunks);
    std::vector<double> sum_theta(np), sum_kappa(nc);
    const double inv_b = 1.0 / cfg.batch;
    const auto sampler = policy_sampler(policy);
    const int nreg = env.regime_count(), nlev = env.level_count();
    const auto t_start = std::chrono::steady_clock::now();

    for (long j = 0; j < cfg.iterations; ++j) {
        detail::parallel_chunks(chunks, cfg.threads, [&](int c) {
            auto& gt = gtheta[c];
            auto& gk = gkappa[c];
            std::fill(gt.begin(), gt.end(), 0.0);
            std::fill(gk.begin(), gk.end(), 0.0);
            ChunkStats cs;
            Rng rng(stream_seed(cfg.seed, detail::kIteration, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(c)));
            const int lo = c * cfg.chunk, hi = std::min(cfg.batch, lo + cfg.chunk);
            std::vector<char> decide(dates, 0);
            std::vector<int> starts, picks;
            for (int e = lo; e < hi; ++e) {
                const SampledGrid grid = sample_episode_grid(scheme, cfg.schedule, j, rng);
                EpisodeTrajectory tr;
                if (grid_on_lattice(grid)) {
                    std::fill(decide.begin(), decide.end(), 0);
                    for (int k : grid.index) decide[k] = 1;
                    simulate_lattice(env, mk, sampler, 0, 0.0, env.initial_regime(), env.initial_level(), decide, rng, &tr);
                } else {
                    tr = run_episode_general(env, model, mk, grid, sampler, rng);
                }
                const double g = tr.total();
                cs.gain += g;
                cs.gain2 += g * g;
                if (cfg.mode == GradientMode::Episodic) {
                    cs.loss += accumulate_martingale_loss(tr, critic, gk, inv_b, cfg.anchor_initial);
                    accumulate_policy_gradient(tr, critic, policy, gt, inv_b);
                    continue;
                }
                // Critic regression from grid starts with a uniformly drawn
                // state, re-simulated forward on the same grid. With
                // critic_starts > 0 that many starts are drawn and reweighted.
                starts.clear();
                for (int n = 0; n < last; ++n)
                    if (n == 0 || decide[n]) starts.push_back(n);
                double cw = inv_b;
                if (cfg.critic_starts > 0) {
                    const int avail = static_cast<int>(starts.size());
                    cw = inv_b * avail / cfg.critic_starts;
                    picks.resize(cfg.critic_starts);
                    for (int& q : picks) q = starts[rng.uniform_int(avail)];
                    starts.swap(picks);
                }
                for (int n : starts) {
                    const double f = n == 0 ? 0.0 : mk.marginal_sd[n] * rng.normal();
                    int lvl = 0, reg = 0;
                    if (nlev > 1) lvl = rng.uniform_int(nlev);
                    {
                        int adm[32], na = 0;
                        for (int i = 0; i < nreg; ++i)
                            if (env.admissible(i, lvl)) adm[na++] = i;
                        reg = adm[rng.uniform_int(na)];
                    }
                    const StatePoint sp{n, mk.time[n], mk.spot(n, f), lvl};
                    const double target = simulate_lattice(env, mk, sampler, n, f, reg, lvl, decide, rng);
                    const double r = critic.value(sp, reg) - target;
                    cs.loss += r * r * cw / inv_b;
                    critic.add_gradient(sp, reg, r * cw, gk);
                }
                // Local policy gradient at every decision date with a
                // uniformly drawn pre-decision regime and level.
                for (int n = 1; n < last; ++n) {
                    const double f = mk.marginal_sd[n] * rng.normal();
                    const int lvl = nlev > 1 ? rng.uniform_int(nlev) : 0;
                    const int from = rng.uniform_int(nreg);
                    const StatePoint sp{n, mk.time[n], mk.spot(n, f), lvl};
                    const int to = detail::draw_regime(env, sp, from, sampler, rng);
                    if (to == from) continue;
                    const double adv = critic.value(sp, to) - critic.value(sp, from) - env.switch_cost(from, to);
                    policy.add_score(sp, from, to, adv * inv_b, gt);
                }
            }
            stats[c] = cs;
        });

        std::fill(sum_theta.begin(), sum_theta.end(), 0.0);
        std::fill(sum_kappa.begin(), sum_kappa.end(), 0.0);
        ChunkStats tot;
        for (int c = 0; c < chunks; ++c) {
            for (std::size_t q = 0; q < np; ++q) sum_theta[q] += gtheta[c][q];
            for (std::size_t q = 0; q < nc; ++q) sum_kappa[q] += gkappa[c][q];
            tot.gain += stats[c].gain;
            tot.gain2 += stats[c].gain2;
            tot.loss += stats[c].loss;
        }
        IterationMetrics m;
        m.iteration = j;
        m.gain_expectation = tot.gain * inv_b;
        const double var = std::max(0.0, tot.gain2 * inv_b - m.gain_expectation * m.gain_expectation);
        m.gain_se = cfg.batch > 1 ? std::sqrt(var * cfg.batch / (cfg.batch - 1.0) * inv_b) : 0.0;
        m.ml_loss = tot.loss * inv_b;
        m.grad_norm_theta = detail::norm2(sum_theta);
        m.grad_norm_kappa = detail::norm2(sum_kappa);
        if (!std::isfinite(m.gain_expectation) || !std::isfinite(m.ml_loss) || !std::isfinite(m.grad_norm_theta) ||
            !std::isfinite(m.grad_norm_kappa))
            throw DivergenceError("non-finite training metric at iteration " + std::to_string(j));
        const double l = cfg.rate_factor(j);
        adam_kappa.step(critic.bank().params(), sum_kappa, l, false);
        adam_theta.step(policy.bank().params(), sum_theta, l, true);
        m.function_value = critic.value({0, 0.0, s0, env.initial_level()}, env.initial_regime());
        if (!std::isfinite(m.function_value)) throw DivergenceError("non-finite function value at iteration " + std::to_string(j));
        m.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.metrics.push_back(m);
        if (on_iteration) on_iteration(m);
    }
    return res;
}

// Deterministic control extracted as the argmax of the learned mark
// distribution. Ties keep the current regime, then prefer the cheaper switch,
// then the lower index.
template <class Env>
class GreedyControl {
public:
    explicit GreedyControl(const SwitchingPolicy<Env>& policy) : policy_(&policy) {}

    int operator()(const StatePoint& s, int from) const {
        const Env& env = policy_->env();
        double probs[32];
        const int n = env.regime_count();
        policy_->distribution(s, from, std::span<double>(probs, n));
        return argmax_with_ties(env, probs, n, from);
    }

    static int argmax_with_ties(const Env& env, const double* probs, int n, int from) {
        int best = -1;
        for (int i = 0; i < n; ++i) {
            if (probs[i] <= 0.0) continue;
            if (best < 0 || probs[i] > probs[best]) {
                best = i;
                continue;
            }
            if (probs[i] == probs[best]) {
                if (best == from) continue;
                if (i == from || env.switch_cost(from, i) < env.switch_cost(from, best)) best = i;
            }
        }
        return best;
    }

private:
    const SwitchingPolicy<Env>* policy_;
};

struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    long n = 0;
};

inline Estimate summarize(std::span<const double> xs) {
    Estimate e;
    e.n = static_cast<long>(xs.size());
    if (xs.empty()) return e;
    double s = 0.0;
    for (double x : xs) s += x;
    e.mean = s / e.n;
    if (e.n > 1) {
        double v = 0.0;
        for (double x : xs) v += (x - e.mean) * (x - e.mean);
        e.se = std::sqrt(v / (e.n - 1) / e.n);
    }
    return e;
}

// Monte Carlo value of a deterministic control `control(state, regime)` on
// the full lattice (a decision at every interior date).
template <class Env, class Control>
Estimate evaluate_control(const Control& control, const Env& env, const PriceModel& model, int dates, long n_paths, Rng& rng) {
    const LatticeMarket mk(model, dates);
    std::vector<char> decide(dates, 1);
    auto dist = [&](const StatePoint& s, int from, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        const int a = control(s, from);
        if (a < 0 || a >= env.regime_count() || !env.admissible(a, s.level))
            throw MaskViolation("control chose an inadmissible regime");
        out[a] = 1.0;
    };
    std::vector<double> vals(n_paths);
    for (long p = 0; p < n_paths; ++p)
        vals[p] = simulate_lattice(env, mk, dist, 0, 0.0, env.initial_regime(), env.initial_level(), decide, rng);
    return summarize(vals);
}

}  // namespace ctrlrand
