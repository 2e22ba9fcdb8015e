#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

#include "qkdlab/rng.hpp"

// Measurement statistics for a shared two-qubit singlet under real-valued
// bases, with depolarizing noise folded into a single visibility knob.
// Probabilities are closed form; a state-vector Born-rule oracle lives in the
// test suite and cross-checks these formulas.

namespace qkdlab::qsim {

inline constexpr double kPi = 3.14159265358979323846;

// A measurement basis identified by the state-space angle of its first
// vector, cos(theta)|0> + sin(theta)|1>. Bases repeat modulo pi.
struct Basis {
    double angle = 0.0;

    static Basis from_angle(double theta) {
        double a = std::fmod(theta, kPi);
        if (a < 0) a += kPi;
        return Basis{a};
    }
};

// Named settings used by the protocols (angles 0, pi/8, pi/4, 3pi/8).
inline Basis basis_u1() { return Basis{0.0}; }
inline Basis basis_v0() { return Basis{kPi / 8}; }
inline Basis basis_u0() { return Basis{kPi / 4}; }
inline Basis basis_v2() { return Basis{kPi / 4}; }
inline Basis basis_v1() { return Basis{3 * kPi / 8}; }

struct CorrelationModel {
    double visibility = 1.0;  // 1 = ideal singlet, 0 = uncorrelated

    bool valid() const { return visibility >= 0.0 && visibility <= 1.0; }
};

// Joint outcome in sign convention (+1/-1); raw key material uses bits.
struct OutcomePair {
    int a = +1;
    int b = +1;
};

inline int bit_to_sign(int bit) { return bit ? -1 : +1; }
inline int sign_to_bit(int sign) { return sign < 0 ? 1 : 0; }

// E(thetaA, thetaB) on a singlet with visibility v.
inline double correlator(const CorrelationModel& m, Basis a, Basis b) {
    return -m.visibility * std::cos(2.0 * (a.angle - b.angle));
}

// P(a, b | thetaA, thetaB) = (1 - v a b cos 2(thetaA-thetaB)) / 4.
inline double outcome_probability(const CorrelationModel& m, Basis ba, Basis bb, int a, int b) {
    return (1.0 + a * b * correlator(m, ba, bb)) / 4.0;
}

// Sequential joint sampling for one round. The first party's marginal is
// uniform; the second draws from the conditional given the first outcome.
// This reproduces the joint distribution exactly while letting two device
// state machines step one at a time.
class PairRound {
  public:
    PairRound(CorrelationModel model, uint64_t round_seed) : model_(model), rng_(round_seed) {}

    int draw(Basis basis) {
        if (!first_) {
            first_ = Half{basis, rng_.sign()};
            return first_->outcome;
        }
        double e = correlator(model_, first_->basis, basis);
        // joint: P(a,b) = (1 + a b e)/4, so P(b = -a | a) = (1 - e)/2
        int b = rng_.bernoulli((1.0 - e) / 2.0) ? -first_->outcome : first_->outcome;
        return b;
    }

    Rng& rng() { return rng_; }

  private:
    struct Half {
        Basis basis;
        int outcome;
    };
    CorrelationModel model_;
    Rng rng_;
    std::optional<Half> first_;
};

inline OutcomePair sample_pair(const CorrelationModel& m, Basis ba, Basis bb, Rng& rng) {
    PairRound round(m, rng.next_u64());
    OutcomePair p;
    p.a = round.draw(ba);
    p.b = round.draw(bb);
    return p;
}

struct MissingSettingPair : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tallies of (a, b) sign pairs per (alice setting, bob setting).
class ChshTally {
  public:
    void add(int a_setting, int b_setting, int a, int b) {
        auto& c = cells_[idx(a_setting, b_setting)];
        ++c.n;
        c.product_sum += a * b;
    }

    int64_t samples(int a_setting, int b_setting) const { return cells_[idx(a_setting, b_setting)].n; }

    double correlator_estimate(int a_setting, int b_setting) const {
        const auto& c = cells_[idx(a_setting, b_setting)];
        if (c.n == 0) throw MissingSettingPair("no samples for setting pair");
        return static_cast<double>(c.product_sum) / static_cast<double>(c.n);
    }

  private:
    struct Cell {
        int64_t n = 0;
        int64_t product_sum = 0;
    };
    static size_t idx(int a, int b) {
        if (a < 0 || a > 1 || b < 0 || b > 2) throw std::out_of_range("ChshTally setting index");
        return static_cast<size_t>(a) * 3 + static_cast<size_t>(b);
    }
    std::array<Cell, 6> cells_{};
};

// |E00 - E01 + E10 + E11| from empirical correlators. Throws
// MissingSettingPair if any of the four combinations has no samples.
inline double chsh_value(const ChshTally& t) {
    double e00 = t.correlator_estimate(0, 0);
    double e01 = t.correlator_estimate(0, 1);
    double e10 = t.correlator_estimate(1, 0);
    double e11 = t.correlator_estimate(1, 1);
    return std::abs(e00 - e01 + e10 + e11);
}

}  // namespace qkdlab::qsim
