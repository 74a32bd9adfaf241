#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace fairstamp {

// std::mt19937_64's output sequence is fixed by the standard, but the
// <random> distributions are not. These helpers keep sampled values identical
// across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n) by rejection sampling.
    std::size_t index(std::size_t n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t draw = engine_();
        while (draw >= limit) {
            draw = engine_();
        }
        return static_cast<std::size_t>(draw % bound);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[index(i)]);
        }
    }

    // Draws from an unnormalized discrete distribution.
    template <typename Weights>
    std::size_t categorical(const Weights& weights) {
        double total = 0.0;
        for (const auto w : weights) {
            total += static_cast<double>(w);
        }
        double target = uniform() * total;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(weights.size()); ++i) {
            const double w = static_cast<double>(weights[i]);
            if (w <= 0.0) {
                continue;
            }
            last_positive = i;
            if (target < w) {
                return i;
            }
            target -= w;
        }
        return last_positive;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fairstamp
