#pragma once

#include <cstdint>
#include <cmath>

namespace marecg::num {

// SplitMix64. Used for every random draw in the project so that results are
// byte-identical across platforms and standard libraries.
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free Lemire reduction is overkill here; modulo bias is
        // negligible for n << 2^64 but rejection keeps draws exact.
        if (n == 0) return 0;
        std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Box-Muller, one value per call (no cached spare, keeps the stream
    // position a pure function of call count).
    double gauss() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Truncated normal in [-2s, 2s], the usual embedding init.
    double trunc_gauss(double sigma) {
        for (;;) {
            double g = gauss();
            if (g >= -2.0 && g <= 2.0) return g * sigma;
        }
    }

    template <class It>
    void shuffle(It first, It last) {
        std::size_t n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(first[i - 1], first[j]);
        }
    }
};

// Stateless 64-bit mix of several words; used to derive substream seeds so
// that gating one loss head on or off never shifts another head's draws.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                              std::uint64_t d = 0) {
    std::uint64_t z = a;
    auto round = [&z](std::uint64_t w) {
        z ^= w + 0x9e3779b97f4a7c15ULL + (z << 6) + (z >> 2);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
    };
    round(b);
    round(c);
    round(d);
    return z;
}

}  // namespace marecg::num
