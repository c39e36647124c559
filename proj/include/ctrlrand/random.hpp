#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace ctrlrand {

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for an independent stream identified by (seed, a, b, c).
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0) noexcept {
    return mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1).
    double uniform() { return uniform_(engine_); }
    double normal() { return normal_(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }
    int uniform_int(int n) { return static_cast<int>(uniform() * n) % n; }

    // Index drawn from `probs` (assumed normalised); zero-probability
    // entries are never returned.
    int categorical(std::span<const double> probs) {
        const double u = uniform();
        double cum = 0.0;
        int last = -1;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] <= 0.0) continue;
            cum += probs[i];
            last = static_cast<int>(i);
            if (u < cum) return last;
        }
        return last;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ctrlrand
