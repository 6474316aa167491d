#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

namespace fedct {

// All randomness in the simulator flows through this header. Samplers are
// written out explicitly (no std::*_distribution) so that a given seed
// produces the same stream on every standard library, which is what makes
// run outputs byte-reproducible.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

// Seed ladder: every worker-local RNG is seeded by hashing the master seed
// with the coordinates of the work item. Results are then independent of
// scheduling and worker count.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (std::uint64_t p : parts) h = hash_combine(h, p);
    return h;
}

// Stream tags used with derive_seed so distinct purposes never collide.
enum class SeedTag : std::uint64_t {
    data = 1,
    partition = 2,
    model_init = 3,
    client_sampling = 4,
    phase1 = 5,
    phase3 = 6,
    broadcast_plan = 7,
    mixup_pairing = 8,
    probe = 9,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedTag tag,
                                 std::initializer_list<std::uint64_t> parts = {}) {
    std::uint64_t h = derive_seed({master, static_cast<std::uint64_t>(tag)});
    for (std::uint64_t p : parts) h = hash_combine(h, p);
    return h;
}

// xoshiro-free minimal generator: splitmix64 counter stream. Passes the
// statistical bar needed here and is trivially portable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection to kill modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Box-Muller; the cosine twin is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Gamma(alpha, 1), Marsaglia-Tsang; alpha < 1 handled by boosting.
    double gamma(double alpha) {
        if (alpha < 1.0) {
            double u = 1.0 - uniform();  // (0,1], keeps pow finite
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = 1.0 - uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    // Dirichlet(alpha * 1_n) proportions.
    std::vector<double> dirichlet(double alpha, std::size_t n) {
        std::vector<double> p(n);
        for (;;) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                p[i] = gamma(alpha);
                sum += p[i];
            }
            if (sum > 1e-300) {
                for (double& v : p) v /= sum;
                return p;
            }
            // All draws underflowed (possible at tiny alpha); redraw.
        }
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace fedct
