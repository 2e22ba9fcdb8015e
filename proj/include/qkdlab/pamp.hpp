#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "qkdlab/bitvec.hpp"
#include "qkdlab/rng.hpp"

// Privacy amplification: Toeplitz two-universal hashing, output-length
// selection from a min-entropy budget, and exhaustive verification oracles
// for the leftover-hash distance bound and the two-universal collision
// property at small sizes. The oracles enumerate classical side information
// only; that is the regime in which exact enumeration is possible.

namespace qkdlab::pamp {

struct DimensionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Seed of a t x n Toeplitz matrix over GF(2): n+t-1 bits, ordered first
// column top-to-bottom (diagonals 0..t-1), then first row left-to-right
// excluding the corner (diagonals -1..-(n-1)).
struct HashSeed {
    size_t n = 0;
    size_t t = 0;
    BitVec bits;  // length n + t - 1

    static HashSeed random(size_t n, size_t t, Rng& rng) {
        HashSeed s;
        s.n = n;
        s.t = t;
        s.bits = BitVec::random(n + t - 1, rng);
        return s;
    }
};

// Diagonal layout: matrix entry T[i][j] lives on diagonal d = i - j. The
// window array W maps W[t-1-i+j] = T[i][j], so row i is the n-bit window of
// W starting at t-1-i.
inline BitVec toeplitz_window(const HashSeed& seed) {
    BitVec w(seed.n + seed.t - 1);
    for (size_t p = 0; p < seed.t; ++p) w.set(p, seed.bits.get(seed.t - 1 - p));
    for (size_t p = seed.t; p < seed.n + seed.t - 1; ++p) w.set(p, seed.bits.get(p));
    return w;
}

inline BitVec toeplitz_hash(const BitVec& x, const HashSeed& seed, size_t t) {
    if (t != seed.t || x.size() != seed.n) throw DimensionMismatch("toeplitz_hash: seed is for different n/t");
    if (t > x.size()) throw DimensionMismatch("toeplitz_hash: t exceeds input length");
    if (seed.bits.size() != seed.n + seed.t - 1) throw DimensionMismatch("toeplitz_hash: bad seed length");
    BitVec w = toeplitz_window(seed);
    BitVec y(t);
    size_t nwords = (x.size() + 63) / 64;
    for (size_t i = 0; i < t; ++i) {
        uint64_t acc = 0;
        size_t base = seed.t - 1 - i;
        for (size_t k = 0; k < nwords; ++k) acc ^= x.words()[k] & w.extract_u64(base + 64 * k);
        y.set(i, std::popcount(acc) & 1);
    }
    return y;
}

struct MinEntropyBudget {
    double hmin_eps = 0.0;    // modeled smooth min-entropy of the raw string given the adversary
    double epsilon = 0.0;     // smoothing parameter carried into the distance bound
    int64_t leakage_bits = 0; // publicly disclosed bits charged against the budget
    int64_t security_margin = 0;  // extra shortening l
    double m_factor = 1.0;        // 1, or (m-1)/m when one of m substrings may be exposed

    bool valid() const {
        return hmin_eps >= 0 && epsilon >= 0 && epsilon < 1 && leakage_bits >= 0 && security_margin >= 0 &&
               m_factor > 0 && m_factor <= 1;
    }
};

struct PaSelection {
    int64_t t = 0;
    double distance_bound = 0.0;  // epsilon + (1/2) 2^{-l/2}
};

// t = max(0, floor(m_factor * (hmin - leakage) - l)); t = 0 means
// abort-for-no-key.
inline PaSelection choose_output_length(const MinEntropyBudget& b) {
    if (!b.valid()) throw std::invalid_argument("choose_output_length: invalid budget");
    double raw = b.m_factor * (b.hmin_eps - static_cast<double>(b.leakage_bits)) -
                 static_cast<double>(b.security_margin);
    PaSelection sel;
    sel.t = std::max<int64_t>(0, static_cast<int64_t>(std::floor(raw)));
    sel.distance_bound = b.epsilon + 0.5 * std::exp2(-static_cast<double>(b.security_margin) / 2.0);
    return sel;
}

// Explicit classical joint distribution over (x, e) with x an n-bit string
// and e a small integer label.
struct JointDistribution {
    size_t n = 0;
    size_t num_e = 1;
    std::vector<double> p;  // indexed [x * num_e + e]

    double prob(size_t x, size_t e) const { return p[x * num_e + e]; }

    static JointDistribution uniform_x(size_t n) {
        JointDistribution d;
        d.n = n;
        d.num_e = 1;
        d.p.assign(size_t{1} << n, 1.0 / static_cast<double>(size_t{1} << n));
        return d;
    }

    // e = value of a function of x, with x uniform
    template <typename F>
    static JointDistribution from_function(size_t n, size_t num_e, F&& f) {
        JointDistribution d;
        d.n = n;
        d.num_e = num_e;
        d.p.assign((size_t{1} << n) * num_e, 0.0);
        double px = 1.0 / static_cast<double>(size_t{1} << n);
        for (size_t x = 0; x < (size_t{1} << n); ++x) d.p[x * num_e + f(x)] = px;
        return d;
    }
};

// H_min(X|E) for classical E: -log2 sum_e max_x P(x, e).
inline double classical_min_entropy(const JointDistribution& d) {
    double s = 0.0;
    for (size_t e = 0; e < d.num_e; ++e) {
        double mx = 0.0;
        for (size_t x = 0; x < (size_t{1} << d.n); ++x) mx = std::max(mx, d.prob(x, e));
        s += mx;
    }
    return -std::log2(s);
}

namespace detail {

// t-bit Toeplitz hash of x packed in a word, banked on per-seed column masks.
// cols[j] is the hash of the unit vector e_j.
inline void seed_columns(uint64_t seed_bits, size_t n, size_t t, uint32_t* cols) {
    // W[p] layout as in toeplitz_window, all within one word (n + t - 1 <= 24 here)
    for (size_t j = 0; j < n; ++j) {
        uint32_t col = 0;
        for (size_t i = 0; i < t; ++i) {
            size_t p = t - 1 - i + j;  // index into W
            size_t seed_idx = p < t ? t - 1 - p : p;
            if ((seed_bits >> seed_idx) & 1) col |= 1u << i;
        }
        cols[j] = col;
    }
}

}  // namespace detail

// Exact average-over-seeds trace distance between (hash(X), seed, E) and
// (uniform_t, seed, E), by full enumeration of all 2^{n+t-1} Toeplitz seeds.
// Classical E only; epsilon is 0 because exact min-entropy is available by
// enumeration at these sizes.
inline double distance_oracle(const JointDistribution& dist, size_t t) {
    size_t n = dist.n;
    if (n > 12) throw TooLarge("distance_oracle: n > 12");
    if (t > n || t == 0) throw std::invalid_argument("distance_oracle: need 0 < t <= n");
    size_t num_seeds = size_t{1} << (n + t - 1);
    size_t num_x = size_t{1} << n;
    size_t num_s = size_t{1} << t;
    double uniform_s = 1.0 / static_cast<double>(num_s);

    std::vector<double> pe(dist.num_e, 0.0);
    for (size_t x = 0; x < num_x; ++x)
        for (size_t e = 0; e < dist.num_e; ++e) pe[e] += dist.prob(x, e);

    std::vector<double> acc(num_s * dist.num_e);
    std::vector<uint32_t> cols(n);
    double total = 0.0;
    for (size_t seed = 0; seed < num_seeds; ++seed) {
        detail::seed_columns(seed, n, t, cols.data());
        std::fill(acc.begin(), acc.end(), 0.0);
        // Gray-code walk: consecutive x differ in one bit, hash updates by one column
        uint32_t h = 0;
        size_t gray = 0;
        for (size_t k = 0;; ++k) {
            for (size_t e = 0; e < dist.num_e; ++e) acc[h * dist.num_e + e] += dist.prob(gray, e);
            if (k + 1 == num_x) break;
            size_t bit = std::countr_zero(k + 1);
            gray ^= size_t{1} << bit;
            h ^= cols[bit];
        }
        double d = 0.0;
        for (size_t s = 0; s < num_s; ++s)
            for (size_t e = 0; e < dist.num_e; ++e)
                d += std::abs(acc[s * dist.num_e + e] - uniform_s * pe[e]);
        total += 0.5 * d;
    }
    return total / static_cast<double>(num_seeds);
}

// Exhaustive two-universality check: max over x != y of
// Pr_seed[hash(x) = hash(y)]. By linearity of the Toeplitz map this equals
// Pr_seed[hash(z) = 0] for z = x ^ y, so differences are enumerated instead
// of pairs.
inline double collision_check(size_t n, size_t t) {
    if (n > 10) throw TooLarge("collision_check: n > 10 for exhaustive mode");
    if (t > n || t == 0) throw std::invalid_argument("collision_check: need 0 < t <= n");
    size_t num_seeds = size_t{1} << (n + t - 1);
    size_t num_x = size_t{1} << n;
    std::vector<uint32_t> cols(n);
    std::vector<int64_t> zero_count(num_x, 0);
    for (size_t seed = 0; seed < num_seeds; ++seed) {
        detail::seed_columns(seed, n, t, cols.data());
        uint32_t h = 0;
        size_t gray = 0;
        for (size_t k = 0;; ++k) {
            if (h == 0) ++zero_count[gray];
            if (k + 1 == num_x) break;
            size_t bit = std::countr_zero(k + 1);
            gray ^= size_t{1} << bit;
            h ^= cols[bit];
        }
    }
    int64_t worst = 0;
    for (size_t z = 1; z < num_x; ++z) worst = std::max(worst, zero_count[z]);
    return static_cast<double>(worst) / static_cast<double>(num_seeds);
}

// Sampled variant for sizes beyond exhaustive reach.
inline double collision_check_sampled(size_t n, size_t t, int64_t samples, Rng& rng) {
    if (t > n || t == 0) throw std::invalid_argument("collision_check_sampled: need 0 < t <= n");
    int64_t collisions = 0;
    for (int64_t i = 0; i < samples; ++i) {
        BitVec x = BitVec::random(n, rng);
        BitVec y = BitVec::random(n, rng);
        if (x == y) {
            --i;
            continue;
        }
        HashSeed seed = HashSeed::random(n, t, rng);
        if (toeplitz_hash(x, seed, t) == toeplitz_hash(y, seed, t)) ++collisions;
    }
    return static_cast<double>(collisions) / static_cast<double>(samples);
}

}  // namespace qkdlab::pamp
