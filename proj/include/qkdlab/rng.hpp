#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace qkdlab {

// splitmix64 (Steele, Lea, Flood). Every stream of randomness in the library
// is derived from a 64-bit seed through this function, so any run is fully
// reproducible from its top-level seed.
inline uint64_t splitmix64_next(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Public sub-seed derivation: mix a stream index into a master seed.
// Documented in the README; frozen by tests/test_harness.cpp.
inline uint64_t sub_seed(uint64_t master, uint64_t stream) {
    uint64_t s = stream;
    uint64_t m = master ^ splitmix64_next(s);
    return splitmix64_next(m);
}

inline uint64_t hash_str(std::string_view sv) {
    uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : sv) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Small deterministic generator. Not cryptographic; this is a simulator and
// everything must replay bit-for-bit from a seed, which std:: distributions
// do not guarantee across standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64_next(state_); }

    // uniform in [0,1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    int bit() { return static_cast<int>(next_u64() >> 63); }

    int sign() { return bit() ? -1 : +1; }

    // uniform in [0, n) via Lemire's multiply-shift with rejection
    uint64_t below(uint64_t n) {
        uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            uint64_t thresh = (0 - n) % n;
            while (lo < thresh) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Binomial(n, p). Exact geometric-skip sampling while n*p is moderate,
    // rounded normal approximation above that (means stay unbiased, which is
    // all the depletion statistics need at large counts).
    int64_t binomial(int64_t n, double p) {
        if (n <= 0 || p <= 0.0) return 0;
        if (p >= 1.0) return n;
        bool flipped = false;
        if (p > 0.5) {
            p = 1.0 - p;
            flipped = true;
        }
        int64_t k;
        if (static_cast<double>(n) * p <= 4096.0) {
            k = 0;
            double log1mp = std::log1p(-p);
            int64_t i = -1;
            while (true) {
                double u = uniform();
                while (u <= 0.0) u = uniform();
                i += 1 + static_cast<int64_t>(std::floor(std::log(u) / log1mp));
                if (i >= n) break;
                ++k;
            }
        } else {
            double mean = static_cast<double>(n) * p;
            double sd = std::sqrt(mean * (1.0 - p));
            k = static_cast<int64_t>(std::llround(mean + sd * normal()));
            if (k < 0) k = 0;
            if (k > n) k = n;
        }
        return flipped ? n - k : k;
    }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace qkdlab
