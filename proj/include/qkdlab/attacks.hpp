#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "qkdlab/eve.hpp"
#include "qkdlab/protocol.hpp"
#include "qkdlab/qsim.hpp"
#include "qkdlab/rng.hpp"

// Scenario runners: multi-day campaigns with a strategy for Eve, the
// impostor variant with a corrupted counterparty, the iterated two-run
// attack on the many-isolated-pairs protocol, device depletion under the
// destroy-used-devices defence, and the randomness-expansion length channel.

namespace qkdlab::attacks {

// ---- campaigns ---------------------------------------------------------------

struct CampaignResult {
    std::vector<protocol::SessionOutcome> days;
    eve::EveLedger ledger;
};

// Installs the abort-day code on a device: its first `bits` day-1 raw
// outputs, read as a binary integer N, trigger an abort on day N+2.
inline int arm_abort_encoding(devices::DeviceState& dev, int bits, int campaign_days) {
    BitVec day1 = dev.outputs_on_day(1);
    if (static_cast<size_t>(bits) > day1.size())
        throw std::invalid_argument("arm_abort_encoding: fewer day-1 outputs than code bits");
    BitVec code(static_cast<size_t>(bits));
    for (int i = 0; i < bits; ++i) code.set(static_cast<size_t>(i), day1.get(static_cast<size_t>(i)));
    int day = eve::abort_encode(code, campaign_days);
    dev.set_policy(devices::AbortOnDay{day});
    return day;
}

inline int default_abort_code_bits(int days) {
    if (days < 3) throw eve::CampaignTooShort("abort coding needs at least 3 days");
    int k = 0;
    while ((1 << (k + 1)) + 1 <= days && k < 8) ++k;
    return k;
}

// Reruns the protocol day after day with the same device instances; their
// memory is the attack surface. Stops at the first abort.
inline CampaignResult run_campaign(const protocol::ProtocolConfig& cfg, const eve::AttackPlan& plan,
                                   uint64_t seed) {
    cfg.validate();
    protocol::Party alice = protocol::make_alice(cfg, sub_seed(seed, hash_str("alice-party")));
    protocol::Party bob = protocol::make_bob(cfg, sub_seed(seed, hash_str("bob-party")));
    protocol::PresharedPad pad(sub_seed(seed, hash_str("pad")), cfg.preshared_key_bits);
    eve::Eve adversary(plan, cfg, sub_seed(seed, hash_str("eve")));

    const auto* abort_plan = std::get_if<eve::AbortAttack>(&plan);
    int code_bits = 0;
    if (abort_plan)
        code_bits = abort_plan->encode_bits > 0 ? abort_plan->encode_bits
                                                : default_abort_code_bits(cfg.days);

    CampaignResult result;
    for (int day = 1; day <= cfg.days; ++day) {
        uint64_t day_seed = sub_seed(seed, 0xDA7ULL * 131 + static_cast<uint64_t>(day));
        protocol::SessionOutcome outcome =
            cfg.cm.cm3_multi_device
                ? protocol::run_day_cm3(cfg, alice, bob, adversary, day, day_seed, pad)
                : protocol::run_day(cfg, alice, bob, adversary, day, day_seed, pad);
        bool aborted = outcome.aborted();
        result.days.push_back(std::move(outcome));
        if (day == 1 && abort_plan && !aborted) {
            arm_abort_encoding(alice.meas[0], code_bits, cfg.days);
            adversary.ledger().abort_code_bits = code_bits;
        }
        if (aborted) break;
    }
    adversary.finalize();
    result.ledger = std::move(adversary.ledger());
    return result;
}

// ---- impostor ------------------------------------------------------------------

struct ImpostorReport {
    std::vector<protocol::SessionOutcome> days;
    eve::EveLedger ledger;
    int64_t leaked_key_bits = 0;
    int64_t leaked_raw_bits = 0;
    bool charlie_corrupt = false;
};

// Day 1: key with Bob under encrypted estimation. Later days: key with
// Charlie using the same devices on Alice's side. A corrupted Charlie holds
// the second pad and forwards decrypted announcements to Eve.
inline ImpostorReport run_impostor(protocol::ProtocolConfig cfg, const eve::ImpostorAttack& plan,
                                   bool charlie_corrupt, uint64_t seed) {
    cfg.cm.cm2_encrypt_pe = true;
    if (cfg.days < 2) cfg.days = 2;
    cfg.validate();

    protocol::Party alice = protocol::make_alice(cfg, sub_seed(seed, hash_str("alice-party")));
    protocol::Party bob = protocol::make_bob(cfg, sub_seed(seed, hash_str("bob-party")));
    protocol::Party charlie = protocol::make_bob(cfg, sub_seed(seed, hash_str("charlie-party")));
    for (auto& d : charlie.meas) d.begin_day(1);  // idle while Alice talks to Bob
    protocol::PresharedPad pad_ab(sub_seed(seed, hash_str("pad-ab")), cfg.preshared_key_bits);
    protocol::PresharedPad pad_ac(sub_seed(seed, hash_str("pad-ac")), cfg.preshared_key_bits);
    eve::Eve adversary(plan, cfg, sub_seed(seed, hash_str("eve")));

    ImpostorReport report;
    report.charlie_corrupt = charlie_corrupt;

    int code_bits = plan.abort_variant ? default_abort_code_bits(cfg.days) : 0;
    for (int day = 1; day <= cfg.days; ++day) {
        uint64_t day_seed = sub_seed(seed, 0x1A7ULL * 131 + static_cast<uint64_t>(day));
        bool with_bob = day < plan.corrupt_day;
        protocol::SessionOutcome outcome =
            protocol::run_day(cfg, alice, with_bob ? bob : charlie, adversary, day, day_seed,
                              with_bob ? pad_ab : pad_ac);
        if (!with_bob && charlie_corrupt)
            adversary.ledger().shared_plaintexts[day] = outcome.private_plain_reveals;
        bool aborted = outcome.aborted();
        report.days.push_back(std::move(outcome));
        if (day == 1 && plan.abort_variant && !aborted) {
            arm_abort_encoding(alice.meas[0], code_bits, cfg.days);
            adversary.ledger().abort_code_bits = code_bits;
        }
        if (aborted) break;
        if (!plan.abort_variant && day >= plan.corrupt_day) break;  // one corrupted exchange suffices
    }
    adversary.finalize();
    report.ledger = std::move(adversary.ledger());
    report.leaked_key_bits = static_cast<int64_t>(report.ledger.day1_key_bits.size());
    report.leaked_raw_bits = static_cast<int64_t>(report.ledger.day1_raw_bits.size());
    return report;
}

// ---- iterated two-run attack on the many-pairs single-bit protocol -------------

struct BhkParams {
    int pair_groups = 2;   // M
    int input_range = 10;  // N; devices take inputs 0..N-1 at angles k*pi/(2N)
    int64_t trials = 10000;
    bool cheat = true;
    bool restrict_announcements = false;  // publish only pairs with input difference 0 or +-1
    double visibility = 1.0;
};

struct BhkReport {
    int64_t trials = 0;
    double leak_success_rate = 0.0;   // run-1 secret bit published on run 2
    double undetected_rate = 0.0;     // cheat output never caught by the anticorrelation test
    double mean_honest_test_failures = 0.0;
};

// Two iterations over M*N^2 isolated pairs. Run 1 is honest and defines the
// secret bit as the withheld pair's output. On run 2 the device that holds
// that bit replays it; Eve reads it from the published outputs unless the
// pair happens to be withheld again.
inline BhkReport run_bhk(const BhkParams& p, uint64_t seed) {
    if (p.pair_groups < 1 || p.input_range < 3) throw std::invalid_argument("run_bhk: need M >= 1, N >= 3");
    const int64_t n_pairs = static_cast<int64_t>(p.pair_groups) * p.input_range * p.input_range;
    const int n = p.input_range;
    qsim::CorrelationModel model{p.visibility};
    auto angle = [&](int k) { return qsim::Basis::from_angle(k * qsim::kPi / (2.0 * n)); };
    auto qualifies = [&](int a, int b) {
        int d = ((a - b) % n + n) % n;
        return d == 0 || d == 1 || d == n - 1;
    };

    int64_t leaks = 0, detections = 0, honest_failures = 0;
    for (int64_t trial = 0; trial < p.trials; ++trial) {
        Rng rng(sub_seed(seed, static_cast<uint64_t>(trial)));

        // run 1 (honest); only the withheld pair and Alice's outputs matter
        std::vector<int> a1(n_pairs), b1(n_pairs), out1(n_pairs);
        std::vector<int64_t> qual;
        for (int64_t i = 0; i < n_pairs; ++i) {
            a1[i] = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
            b1[i] = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
            auto o = qsim::sample_pair(model, angle(a1[i]), angle(b1[i]), rng);
            out1[i] = o.a;
            if (qualifies(a1[i], b1[i])) qual.push_back(i);
        }
        if (qual.empty()) continue;  // no key pair; vanishing probability
        int64_t cheat_idx = static_cast<int64_t>(qual[rng.below(qual.size())]);

        // run 2: fresh states; the identified device replays its run-1 output
        std::vector<int64_t> qual2;
        std::vector<int> a2(n_pairs), b2(n_pairs), xa(n_pairs), xb(n_pairs);
        for (int64_t i = 0; i < n_pairs; ++i) {
            a2[i] = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
            b2[i] = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
            auto o = qsim::sample_pair(model, angle(a2[i]), angle(b2[i]), rng);
            xa[i] = (p.cheat && i == cheat_idx) ? out1[i] : o.a;
            xb[i] = o.b;
            if (qualifies(a2[i], b2[i])) qual2.push_back(i);
        }
        int64_t withheld2 = qual2.empty() ? -1 : qual2[rng.below(qual2.size())];

        auto published = [&](int64_t i) {
            if (i == withheld2) return false;
            return !p.restrict_announcements || qualifies(a2[i], b2[i]);
        };

        if (p.cheat && published(cheat_idx)) ++leaks;
        for (int64_t i : qual2) {
            if (!published(i)) continue;
            bool anticorrelated = xa[i] != xb[i];
            if (anticorrelated) continue;
            if (p.cheat && i == cheat_idx)
                ++detections;
            else
                ++honest_failures;
        }
    }
    BhkReport r;
    r.trials = p.trials;
    r.leak_success_rate = static_cast<double>(leaks) / static_cast<double>(p.trials);
    r.undetected_rate = 1.0 - static_cast<double>(detections) / static_cast<double>(p.trials);
    r.mean_honest_test_failures = static_cast<double>(honest_failures) / static_cast<double>(p.trials);
    return r;
}

// ---- depletion under destroy-used-devices ---------------------------------------

struct HrParams {
    int runs = 50;
    int64_t day1_key_target = 1000000;  // devices = 6 * target
    bool full_sessions = false;         // sample actual outcomes instead of counting
    double visibility = 1.0;
};

struct HrReport {
    std::vector<int64_t> run_key_lengths;
    int64_t devices_start = 0;
    int64_t devices_remaining = 0;
    int64_t cumulative = 0;
};

// Each run consumes the ~1/6 of surviving device pairs that landed on the
// key settings; those pairs know raw key and are destroyed. Counting is
// exact; the full-session flag additionally samples outcomes per device.
inline HrReport run_hr_depletion(const HrParams& p, uint64_t seed) {
    if (p.runs < 1 || p.day1_key_target < 1) throw std::invalid_argument("run_hr_depletion: bad params");
    HrReport rep;
    rep.devices_start = 6 * p.day1_key_target;
    int64_t remaining = rep.devices_start;
    Rng rng(seed);
    qsim::CorrelationModel model{p.visibility};
    for (int run = 0; run < p.runs && remaining > 0; ++run) {
        int64_t key_devices;
        if (p.full_sessions) {
            key_devices = 0;
            for (int64_t d = 0; d < remaining; ++d) {
                int a_in = static_cast<int>(rng.below(2));  // key setting, off-angle
                int b_in = static_cast<int>(rng.below(3));
                if (a_in == 0 && b_in == 2) {
                    auto o = qsim::sample_pair(model, qsim::basis_u0(), qsim::basis_v2(), rng);
                    (void)o;  // the bit itself feeds reconciliation; counting is what depletes
                    ++key_devices;
                }
            }
        } else {
            key_devices = rng.binomial(remaining, 1.0 / 6.0);
        }
        rep.run_key_lengths.push_back(key_devices);
        rep.cumulative += key_devices;
        remaining -= key_devices;  // destroyed after the run
    }
    rep.devices_remaining = remaining;
    return rep;
}

// ---- randomness-expansion length channel -----------------------------------------

enum class QreMode { LengthLeak, Procrustean, AbortCode };

struct QreParams {
    int raw_bits = 64;            // round-1 raw prefix Eve reconstructs
    int64_t rounds_per_iter = 2000;
    double loud_flip_rate = 0.075;  // halves the correlator margin vs. quiet rounds
    int64_t fixed_length = 100;     // Procrustean L, below the worst-case loud length
    int64_t security_margin = 40;
    int abort_code_bits = 3;
    double rate_offset = 2.0;
    double rate_scale = 1.0 / (2.0 * 1.4142135623730951 - 2.0);
};

struct QreReport {
    eve::EveLedger ledger;
    std::vector<int64_t> lengths;
    BitVec truth;
    BitVec guess;
    double accuracy = 0.0;
    bool lengths_constant = false;
    std::optional<int> abort_iteration;
};

// A single-laboratory expansion loop: no output data is ever announced, yet
// the per-iteration output LENGTH is observable in use. Devices modulate
// artificial noise after round 1 so that each later iteration's length
// encodes one stored raw bit; fixing the length (Procrustean) closes the
// channel, and the abort-day code stays available regardless.
inline QreReport run_qre(QreMode mode, const QreParams& p, uint64_t seed) {
    if (p.raw_bits < 1 || p.rounds_per_iter < 64) throw std::invalid_argument("run_qre: bad params");
    QreReport rep;
    devices::DeviceState dev_a("lab.a", protocol::alice_angles(), sub_seed(seed, hash_str("lab.a")));
    devices::DeviceState dev_b("lab.b", {qsim::kPi / 8, 3 * qsim::kPi / 8},
                               sub_seed(seed, hash_str("lab.b")));
    qsim::CorrelationModel model{1.0};

    auto rate = [&](double s) { return std::clamp(p.rate_scale * (s - p.rate_offset), 0.0, 1.0); };
    auto length_for = [&](double s) {
        auto t = static_cast<int64_t>(std::floor(rate(s) * static_cast<double>(p.rounds_per_iter))) -
                 p.security_margin;
        return std::max<int64_t>(0, t);
    };
    // the code is agreed between Eve and the devices, so both ends can
    // compute the two expected lengths
    double s_quiet = 2.0 * 1.4142135623730951;
    double s_loud = s_quiet * (1.0 - 2.0 * p.loud_flip_rate);
    int64_t exp_quiet = length_for(s_quiet);
    int64_t exp_loud = length_for(s_loud);
    if (mode == QreMode::Procrustean) {
        exp_quiet = std::min(exp_quiet, p.fixed_length);
        exp_loud = std::min(exp_loud, p.fixed_length);
    }
    double mid = static_cast<double>(exp_quiet + exp_loud) / 2.0;

    int iterations = mode == QreMode::AbortCode ? (1 << p.abort_code_bits) + 1 : p.raw_bits + 1;
    for (int iter = 1; iter <= iterations; ++iter) {
        dev_a.begin_day(iter);
        dev_b.begin_day(iter);
        Rng in_rng(sub_seed(seed, 0x9E0ULL * 257 + static_cast<uint64_t>(iter)));
        qsim::ChshTally tally;
        bool aborted = false;
        for (int64_t i = 0; i < p.rounds_per_iter; ++i) {
            int a_in = static_cast<int>(in_rng.below(2));
            int b_in = static_cast<int>(in_rng.below(2));
            qsim::PairRound link(model, sub_seed(seed, (static_cast<uint64_t>(iter) << 32) ^
                                                           static_cast<uint64_t>(i)));
            auto ra = dev_a.step(a_in, link);
            if (ra.aborted) {
                aborted = true;
                break;
            }
            auto rb = dev_b.step(b_in, link);
            tally.add(a_in, b_in, qsim::bit_to_sign(ra.output_bit), qsim::bit_to_sign(rb.output_bit));
        }
        if (aborted) {
            rep.abort_iteration = iter;
            rep.ledger.abort_day = iter;
            break;
        }
        double s = qsim::chsh_value(tally);
        int64_t len = length_for(s);
        if (mode == QreMode::Procrustean) len = len >= p.fixed_length ? p.fixed_length : 0;
        rep.lengths.push_back(len);
        rep.ledger.observed_lengths.push_back(len);

        if (iter == 1) {
            BitVec day1 = dev_a.outputs_on_day(1);
            rep.truth = BitVec(static_cast<size_t>(p.raw_bits));
            for (int i = 0; i < p.raw_bits; ++i) rep.truth.set(static_cast<size_t>(i), day1.get(static_cast<size_t>(i)));
            if (mode == QreMode::AbortCode) {
                BitVec code(static_cast<size_t>(p.abort_code_bits));
                for (int i = 0; i < p.abort_code_bits; ++i) code.set(static_cast<size_t>(i), day1.get(static_cast<size_t>(i)));
                dev_a.set_policy(devices::AbortOnDay{eve::abort_encode(code, iterations)});
                rep.ledger.abort_code_bits = p.abort_code_bits;
            } else {
                dev_a.set_policy(devices::NoiseModulation{0.0, p.loud_flip_rate, 2});
            }
        }
    }

    // Eve's decoder: lengths only. With a fixed output length the two
    // expected values coincide and nothing can be credited.
    if (mode != QreMode::AbortCode) {
        rep.guess = BitVec(static_cast<size_t>(p.raw_bits));
        if (exp_quiet != exp_loud) {
            for (size_t j = 0; j + 1 < rep.lengths.size() && j < static_cast<size_t>(p.raw_bits); ++j) {
                int bit = static_cast<double>(rep.lengths[j + 1]) < mid ? 1 : 0;
                rep.guess.set(j, bit);
                rep.ledger.day1_raw_bits[static_cast<int64_t>(j)] =
                    eve::InferredBit{bit, eve::Provenance::LengthObservation};
            }
        }
        int64_t agree = 0;
        for (size_t j = 0; j < rep.truth.size(); ++j)
            if (rep.ledger.day1_raw_bits.count(static_cast<int64_t>(j)) &&
                rep.ledger.day1_raw_bits.at(static_cast<int64_t>(j)).value == rep.truth.get(j))
                ++agree;
        rep.accuracy = rep.truth.empty() ? 0.0
                                         : static_cast<double>(agree) / static_cast<double>(rep.truth.size());
    } else if (rep.abort_iteration) {
        BitVec decoded = eve::abort_decode(*rep.abort_iteration, p.abort_code_bits);
        for (size_t i = 0; i < decoded.size(); ++i)
            rep.ledger.day1_raw_bits[static_cast<int64_t>(i)] =
                eve::InferredBit{decoded.get(i), eve::Provenance::AbortDecode};
        int64_t agree = 0;
        for (int i = 0; i < p.abort_code_bits; ++i)
            if (decoded.get(static_cast<size_t>(i)) == rep.truth.get(static_cast<size_t>(i))) ++agree;
        rep.accuracy = static_cast<double>(agree) / static_cast<double>(p.abort_code_bits);
    }

    rep.lengths_constant = !rep.lengths.empty() &&
                           std::all_of(rep.lengths.begin(), rep.lengths.end(),
                                       [&](int64_t v) { return v == rep.lengths.front(); });
    return rep;
}

}  // namespace qkdlab::attacks
