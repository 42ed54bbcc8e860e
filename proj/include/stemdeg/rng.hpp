#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stemdeg {

/// Mixes a master seed with a stream index into an independent child seed.
/// Used so batch generation can hand every sample its own stream and still
/// be reproducible regardless of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    // splitmix64 finalizer over the combined state
    std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Seeded random stream with explicit, stdlib-independent transforms so that
/// identical seeds give bit-identical draws on every platform we build on.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Poisson draw. Knuth multiplication below mean 30, rounded normal
    /// approximation above (relative error is negligible there and the cost
    /// stays O(1) for arbitrarily large means).
    long long poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean < 30.0) {
            const double limit = std::exp(-mean);
            long long k = 0;
            double prod = uniform();
            while (prod > limit) {
                ++k;
                prod *= uniform();
            }
            return k;
        }
        double draw = normal(mean, std::sqrt(mean));
        return draw <= 0.0 ? 0 : static_cast<long long>(std::llround(draw));
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // modulo bias is irrelevant for the small n used here
        return gen_() % n;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace stemdeg
