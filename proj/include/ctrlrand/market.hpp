#pragma once

#include <cmath>
#include <numbers>

#include "ctrlrand/errors.hpp"
#include "ctrlrand/random.hpp"

namespace ctrlrand {

enum class CurveShape { Seasonal, Floored };

// One-factor HJM model dF(t,T)/F(t,T) = exp(-beta (T-t)) sigma dW_t with
// spot S_t = F(t,t). The carried state is Y_t = int_0^t exp(beta s) dW_s.
struct PriceModel {
    double beta = 0.15;
    double sigma = 0.5;
    double horizon = 30.0;
    CurveShape curve = CurveShape::Seasonal;
    double curve_level = 90.0;
    double curve_amplitude = 10.0;
    double curve_period = 30.0;

    void validate() const {
        if (!(beta > 0.0)) throw ConfigError("price.beta must be positive");
        if (!(sigma >= 0.0)) throw ConfigError("price.sigma must be nonnegative");
        if (!(horizon > 0.0)) throw ConfigError("price.horizon must be positive");
        if (!(curve_period > 0.0)) throw ConfigError("price.curve_period must be positive");
        if (!(curve_level - std::abs(curve_amplitude) > 0.0))
            throw ConfigError("price.curve_level must exceed |price.curve_amplitude|");
    }

    double initial_curve(double t) const {
        double u = t / curve_period;
        if (curve == CurveShape::Floored) u = std::floor(u);
        return curve_level + curve_amplitude * std::cos(2.0 * std::numbers::pi * u);
    }

    // v(t) = (1 - exp(-2 beta t)) / (2 beta); Var(log S_t) = sigma^2 v(t).
    double v(double t) const { return -std::expm1(-2.0 * beta * t) / (2.0 * beta); }
    double log_variance(double t) const { return sigma * sigma * v(t); }

    // Variance of Y_{t2} - Y_{t1}.
    double factor_increment_variance(double t1, double t2) const {
        return (std::exp(2.0 * beta * t2) - std::exp(2.0 * beta * t1)) / (2.0 * beta);
    }

    // Centred log-spot deviation X_t = sigma exp(-beta t) Y_t.
    double deviation(double t, double factor) const { return sigma * std::exp(-beta * t) * factor; }

    double spot(double t, double factor) const {
        return initial_curve(t) * std::exp(-0.5 * log_variance(t) + deviation(t, factor));
    }
    double spot_from_deviation(double t, double x) const {
        return initial_curve(t) * std::exp(-0.5 * log_variance(t) + x);
    }

    bool operator==(const PriceModel&) const = default;
};

struct SpotState {
    double time = 0.0;
    double factor = 0.0;
};

struct SpotSample {
    SpotState state;
    double spot;
};

inline SpotState advance_factor(const PriceModel& m, SpotState s, double t_to, Rng& rng) {
    if (t_to < s.time) throw Error("cannot step the price model backwards");
    if (t_to == s.time) return s;
    const double z = rng.normal();
    return {t_to, s.factor + std::sqrt(m.factor_increment_variance(s.time, t_to)) * z};
}

inline SpotSample spot_exact_step(const PriceModel& m, SpotState s, double dt, Rng& rng) {
    if (!(dt > 0.0)) throw Error("spot step needs dt > 0");
    const SpotState next = advance_factor(m, s, s.time + dt, rng);
    return {next, m.spot(next.time, next.factor)};
}

inline double spot_conditional_sample(const PriceModel& m, double t_from, double factor_from, double t_to, Rng& rng) {
    const SpotState next = advance_factor(m, {t_from, factor_from}, t_to, rng);
    return m.spot(next.time, next.factor);
}

// Unconditional draw of the state at time t.
inline SpotState sample_factor(const PriceModel& m, double t, Rng& rng) {
    return advance_factor(m, {0.0, 0.0}, t, rng);
}

}  // namespace ctrlrand
