#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ctrlrand/errors.hpp"
#include "ctrlrand/random.hpp"

namespace ctrlrand {

enum class GridKind { Deterministic, Thinned, Poisson };

// Base distribution of action times. For lattice kinds `dates` counts
// t_0 = 0 .. t_{N-1} = T; `rate` is only read for Poisson grids.
struct GridScheme {
    GridKind kind = GridKind::Deterministic;
    int dates = 31;
    double p_samp = 1.0;
    double rate = 0.0;
    double horizon = 30.0;

    double step() const { return horizon / (dates - 1); }
    bool on_lattice() const { return kind != GridKind::Poisson; }

    void validate() const {
        if (!(horizon > 0.0)) throw ConfigError("grid.horizon must be positive");
        if (kind != GridKind::Poisson && dates < 2) throw ConfigError("grid.dates must be at least 2");
        if (!(p_samp >= 0.0 && p_samp <= 1.0)) throw ConfigError("grid.p_samp must lie in [0,1]");
        if (!(rate >= 0.0)) throw ConfigError("grid.rate must be nonnegative");
    }

    static GridScheme deterministic(int n, double t) { return {GridKind::Deterministic, n, 1.0, 0.0, t}; }
    static GridScheme thinned(int n, double p, double t) { return {GridKind::Thinned, n, p, 0.0, t}; }
    static GridScheme poisson(double rate, double t) { return {GridKind::Poisson, 2, 1.0, rate, t}; }

    bool operator==(const GridScheme&) const = default;
};

struct SampledGrid {
    std::vector<double> times;
    // Lattice index of each time, or -1 for off-lattice (Poisson) points.
    std::vector<int> index;
    double horizon = 0.0;

    std::size_t size() const { return times.size(); }

    // Fixed-length view with the tau_p = T convention after the last point.
    std::vector<double> padded(std::size_t length) const {
        if (length < times.size()) throw ShapeError("padded length shorter than grid");
        std::vector<double> out(times);
        out.resize(length, horizon);
        return out;
    }
};

inline SampledGrid sample_grid(const GridScheme& scheme, Rng& rng) {
    scheme.validate();
    SampledGrid g;
    g.horizon = scheme.horizon;
    if (scheme.kind == GridKind::Poisson) {
        if (scheme.rate <= 0.0) return g;
        double t = 0.0;
        while (true) {
            t += rng.exponential(scheme.rate);
            if (t > scheme.horizon) break;
            g.times.push_back(t);
            g.index.push_back(-1);
        }
        return g;
    }
    const double dt = scheme.step();
    const int last = scheme.dates - 1;
    const bool draw = scheme.kind == GridKind::Thinned && scheme.p_samp < 1.0;
    for (int k = 1; k < last; ++k) {
        if (draw && !rng.bernoulli(scheme.p_samp)) continue;
        g.times.push_back(k * dt);
        g.index.push_back(k);
    }
    g.times.push_back(scheme.horizon);
    g.index.push_back(last);
    return g;
}

struct MarkedPoint {
    double time;
    int mark;
};

// Realised points of the action measure; marks are regime indices and the
// regime process is the last mark seen (or the initial mark).
struct MarkedPointPath {
    int initial_mark = 0;
    std::vector<MarkedPoint> points;

    int regime_before(double t) const {
        int r = initial_mark;
        for (const auto& p : points) {
            if (p.time >= t) break;
            r = p.mark;
        }
        return r;
    }
};

inline void check_distribution(std::span<const double> probs) {
    double s = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw PolicyError("mark distribution has a negative or non-finite entry");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) throw PolicyError("mark distribution does not sum to one");
}

// One mark per grid time drawn from `kernel(time, grid_position, current_mark)`,
// which returns the tilted mark distribution lambda_bar * mu.
template <class Kernel>
MarkedPointPath sample_marks(const SampledGrid& grid, int initial_mark, Kernel&& kernel, Rng& rng) {
    MarkedPointPath path;
    path.initial_mark = initial_mark;
    int current = initial_mark;
    for (std::size_t i = 0; i < grid.times.size(); ++i) {
        const auto& probs = kernel(grid.times[i], i, current);
        std::span<const double> view(probs);
        check_distribution(view);
        current = rng.categorical(view);
        path.points.push_back({grid.times[i], current});
    }
    return path;
}

// Compensator of the base measure: finite time atoms with per-mark masses
// plus a constant per-mark rate on the continuous part.
struct Compensator {
    struct Atom {
        double time;
        std::vector<double> mass;
        double total() const { return std::accumulate(mass.begin(), mass.end(), 0.0); }
    };
    std::vector<Atom> atoms;  // sorted by time, in (0, horizon]
    std::vector<double> rate;  // empty means no continuous part
    double horizon = 0.0;
    int marks = 0;
};

namespace detail {

inline double continuous_rate(const Compensator& comp, auto& tilt, double t, int regime) {
    double s = 0.0;
    for (int e = 0; e < static_cast<int>(comp.rate.size()); ++e)
        if (comp.rate[e] > 0.0) s += comp.rate[e] * (tilt(t, e, regime) - 1.0);
    return s;
}

}  // namespace detail

// log Z_T for the tilt `tilt(time, mark, regime_before)`. On the continuous
// part the tilt is read at the left end of each interval between events,
// including at the points that close such an interval.
template <class Tilt>
double girsanov_log_density(const MarkedPointPath& path, const Compensator& comp, Tilt&& tilt) {
    for (std::size_t i = 1; i < path.points.size(); ++i)
        if (!(path.points[i].time > path.points[i - 1].time)) throw DensityError("marked point path is not simple");

    double logz = 0.0;
    int regime = path.initial_mark;
    double seg_start = 0.0;
    std::size_t pi = 0, ai = 0;
    const bool cont = !comp.rate.empty();
    auto close_segment = [&](double t) {
        if (cont && t > seg_start) logz -= detail::continuous_rate(comp, tilt, seg_start, regime) * (t - seg_start);
        seg_start = t;
    };
    while (pi < path.points.size() || ai < comp.atoms.size()) {
        const double tp = pi < path.points.size() ? path.points[pi].time : comp.horizon + 1.0;
        const double ta = ai < comp.atoms.size() ? comp.atoms[ai].time : comp.horizon + 1.0;
        if (ta < tp) {
            close_segment(ta);
            const auto& atom = comp.atoms[ai];
            const double base = atom.total();
            if (base >= 1.0) throw DensityError("no point at an atom of full mass");
            double tilted = 0.0;
            for (int e = 0; e < static_cast<int>(atom.mass.size()); ++e)
                if (atom.mass[e] > 0.0) tilted += tilt(ta, e, regime) * atom.mass[e];
            if (!(tilted < 1.0)) throw DensityError("tilted atom mass reaches one");
            logz += std::log1p(-tilted) - std::log1p(-base);
            ++ai;
        } else {
            const auto& p = path.points[pi];
            const double lam = tilt(ta == tp ? tp : seg_start, p.mark, regime);
            close_segment(tp);
            if (!(lam > 0.0)) throw DensityError("tilt vanishes at a realised point");
            logz += std::log(lam);
            regime = p.mark;
            ++pi;
            if (ta == tp) ++ai;
        }
    }
    close_segment(comp.horizon);
    return logz;
}

// Draws a path from the tilted law: atom outcomes by their tilted masses,
// continuous points by exponential clocks with the segment-start rate.
template <class Tilt>
MarkedPointPath sample_tilted(const Compensator& comp, int initial_mark, Tilt&& tilt, Rng& rng) {
    MarkedPointPath path;
    path.initial_mark = initial_mark;
    int regime = initial_mark;
    double t = 0.0;
    std::vector<double> w;
    auto run_continuous = [&](double until) {
        if (comp.rate.empty()) {
            t = until;
            return;
        }
        while (true) {
            double total = 0.0;
            w.assign(comp.rate.size(), 0.0);
            for (int e = 0; e < static_cast<int>(comp.rate.size()); ++e) {
                w[e] = comp.rate[e] > 0.0 ? comp.rate[e] * tilt(t, e, regime) : 0.0;
                total += w[e];
            }
            if (total <= 0.0) {
                t = until;
                return;
            }
            const double next = t + rng.exponential(total);
            if (next >= until) {
                t = until;
                return;
            }
            for (double& x : w) x /= total;
            const int e = rng.categorical(w);
            path.points.push_back({next, e});
            regime = e;
            t = next;
        }
    };
    for (const auto& atom : comp.atoms) {
        run_continuous(atom.time);
        w.assign(atom.mass.size() + 1, 0.0);
        double jump = 0.0;
        for (int e = 0; e < static_cast<int>(atom.mass.size()); ++e) {
            w[e] = atom.mass[e] > 0.0 ? atom.mass[e] * tilt(atom.time, e, regime) : 0.0;
            jump += w[e];
        }
        w.back() = std::max(0.0, 1.0 - jump);
        const int e = rng.categorical(w);
        if (e < static_cast<int>(atom.mass.size())) {
            path.points.push_back({atom.time, e});
            regime = e;
        }
    }
    run_continuous(comp.horizon);
    return path;
}

}  // namespace ctrlrand
