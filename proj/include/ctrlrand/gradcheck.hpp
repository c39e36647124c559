#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ctrlrand/mlp.hpp"
#include "ctrlrand/random.hpp"

namespace ctrlrand {

struct GradcheckCase {
    std::vector<int> widths;
    Head head = Head::Linear;
    std::uint32_t mask = ~0u;
    double max_rel_error = 0.0;
};

// |a - b| relative to the larger magnitude, with a floor for gradients that
// vanish.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Backprop gradient of upstream . f(x; params) against central differences,
// over parameters and inputs. Returns the largest relative error.
inline double gradcheck_net(const MlpShape& s, std::vector<double> params, const std::vector<double>& input,
                            const std::vector<double>& upstream, std::uint32_t mask, double h = 1e-5) {
    MlpWorkspace ws;
    std::vector<double> g(params.size(), 0.0), gx(input.size(), 0.0);
    mlp_forward(s, params.data(), input, ws, mask);
    mlp_backward(s, params.data(), ws, upstream, g.data(), gx.data());
    auto objective = [&](const std::vector<double>& p, const std::vector<double>& x) {
        const auto y = mlp_forward(s, p.data(), x, ws, mask);
        double v = 0.0;
        for (std::size_t o = 0; o < y.size(); ++o) v += upstream[o] * y[o];
        return v;
    };
    double worst = 0.0;
    for (std::size_t q = 0; q < params.size(); ++q) {
        const double keep = params[q];
        params[q] = keep + h;
        const double up = objective(params, input);
        params[q] = keep - h;
        const double dn = objective(params, input);
        params[q] = keep;
        worst = std::max(worst, relative_error(g[q], (up - dn) / (2.0 * h)));
    }
    std::vector<double> x = input;
    for (std::size_t q = 0; q < x.size(); ++q) {
        const double keep = x[q];
        x[q] = keep + h;
        const double up = objective(params, x);
        x[q] = keep - h;
        const double dn = objective(params, x);
        x[q] = keep;
        worst = std::max(worst, relative_error(gx[q], (up - dn) / (2.0 * h)));
    }
    return worst;
}

// `cases` random architectures, heads, masks, weights, inputs and upstream
// vectors.
inline std::vector<GradcheckCase> gradcheck_random_nets(int cases, std::uint64_t seed) {
    std::vector<GradcheckCase> out;
    for (int c = 0; c < cases; ++c) {
        Rng rng(stream_seed(seed, 6, static_cast<std::uint64_t>(c)));
        GradcheckCase gc;
        gc.head = static_cast<Head>(c % 3);
        gc.widths.push_back(1 + rng.uniform_int(3));
        const int depth = 1 + rng.uniform_int(3);
        for (int l = 0; l < depth; ++l) gc.widths.push_back(2 + rng.uniform_int(15));
        gc.widths.push_back(gc.head == Head::Sigmoid ? 1 + rng.uniform_int(2) : 2 + rng.uniform_int(3));
        const int n = gc.widths.back();
        if (gc.head == Head::MaskedSoftmax) {
            gc.mask = 0;
            while (gc.mask == 0)
                for (int o = 0; o < n; ++o)
                    if (rng.bernoulli(0.7)) gc.mask |= 1u << o;
        }
        const MlpShape s(gc.widths, gc.head);
        std::vector<double> params(s.parameter_count());
        xavier_init(s, params.data(), rng);
        for (double& p : params) p += 0.1 * rng.normal();
        std::vector<double> x(gc.widths.front()), u(n);
        for (double& v : x) v = rng.normal();
        for (double& v : u) v = rng.normal();
        gc.max_rel_error = gradcheck_net(s, params, x, u, gc.mask);
        out.push_back(std::move(gc));
    }
    return out;
}

}  // namespace ctrlrand
