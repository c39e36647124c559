#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace ctrlrand::fastmath {

// expm1(x) for x in [-45, 0]: Cephes rational form on the reduced argument,
// power of two assembled from bits, branch-free.
inline double expm1_neg(double x) {
    constexpr double log2e = 1.4426950408889634073599;
    constexpr double c1 = 6.93145751953125E-1;
    constexpr double c2 = 1.42860682030941723212E-6;
    constexpr double p0 = 1.26177193074810590878E-4;
    constexpr double p1 = 3.02994407707441961300E-2;
    constexpr double p2 = 9.99999999999999999910E-1;
    constexpr double q0 = 3.00198505138664455042E-6;
    constexpr double q1 = 2.52448340349684104192E-3;
    constexpr double q2 = 2.27265548208155028766E-1;
    constexpr double q3 = 2.00000000000000000009E0;
    constexpr double shifter = 6755399441055744.0;  // 1.5 * 2^52

    const double t = x * log2e + shifter;
    const double n = t - shifter;
    const double y = x - n * c1 - n * c2;
    const double yy = y * y;
    const double py = y * ((p0 * yy + p1) * yy + p2);
    const double qy = ((q0 * yy + q1) * yy + q2) * yy + q3;
    const double rm1 = 2.0 * py / (qy - py);
    const std::uint64_t bits = (std::bit_cast<std::uint64_t>(t) + 1023) << 52;
    const double two_n = std::bit_cast<double>(bits);
    return two_n * rm1 + (two_n - 1.0);
}

inline double tanh(double x) {
    const double ax = std::fabs(x);
    const double a = ax - 0.5 * (ax - 20.0 + std::fabs(ax - 20.0));  // min(ax, 20)
    const double em1 = expm1_neg(-2.0 * a);
    return std::copysign(-em1 / (2.0 + em1), x);
}

inline void tanh_inplace(double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) v[i] = tanh(v[i]);
}

}  // namespace ctrlrand::fastmath
