#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkdlab/bitvec.hpp"
#include "qkdlab/cascade.hpp"
#include "qkdlab/devices.hpp"
#include "qkdlab/pamp.hpp"
#include "qkdlab/qsim.hpp"
#include "qkdlab/rng.hpp"

// One "day" of the key distribution protocol, end to end: state distribution,
// measurement, input announcement, sifting, parameter estimation, error
// correction, privacy amplification. Also the hardened multi-device-pair
// variant that shortens the final key so it survives exposure of any single
// error-corrected substring.

namespace qkdlab::protocol {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientPresharedKey : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Countermeasures {
    bool cm1_bob_announces = false;  // outputs announced by Bob; Bob's boxes sealed to incoming data
    bool cm2_encrypt_pe = false;     // one-time-pad the parameter estimation announcements
    bool cm3_multi_device = false;   // m isolated device pairs, joint shortened PA
    bool cm4_secret_pa = false;      // PA function drawn from pre-shared key, never announced
};

// Probability of each input setting. Alice: P(key setting); Bob: P(test0),
// P(test1), remainder key. Defaults are uniform.
struct SettingWeights {
    double alice_key = 0.5;
    double bob_test0 = 1.0 / 3.0;
    double bob_test1 = 1.0 / 3.0;

    double bob_key() const { return 1.0 - bob_test0 - bob_test1; }
};

struct ProtocolConfig {
    int64_t rounds_per_day = 10000;  // M
    double mu = 0.05;                // per-round reveal probability
    double chsh_threshold = 2.5;
    double noise_tolerance = 0.05;  // design error rate for reconciliation
    double visibility = 1.0;
    int m_devices = 1;
    Countermeasures cm;
    int64_t preshared_key_bits = 1 << 20;
    int days = 1;
    int64_t security_margin = 40;  // l
    double epsilon = 0.0;
    // Modeled min-entropy rate per sifted bit as a function of the test
    // value: clamp(rate_scale * (S - rate_offset), 0, 1). A modeling knob,
    // not a proven bound; the attack budgets do not depend on it.
    double rate_offset = 2.0;
    double rate_scale = 1.0 / (2.0 * 1.4142135623730951 - 2.0);
    SettingWeights weights;
    int ec_passes = 4;
    int ec_verify_bits = 64;
    int64_t min_combo_rounds = 1;

    void validate() const {
        if (rounds_per_day < 1) throw ConfigError("rounds_per_day must be >= 1");
        if (!(mu > 0.0 && mu < 1.0)) throw ConfigError("mu must lie in (0,1)");
        if (static_cast<double>(rounds_per_day) * mu < 30.0)
            throw ConfigError("M*mu must be >= 30 so the test value is meaningful");
        if (visibility < 0.0 || visibility > 1.0) throw ConfigError("visibility must lie in [0,1]");
        if (cm.cm3_multi_device && m_devices < 2) throw ConfigError("cm3 requires at least 2 device pairs");
        if (m_devices < 1) throw ConfigError("m_devices must be >= 1");
        if (days < 1) throw ConfigError("days must be >= 1");
        if (security_margin < 0) throw ConfigError("security_margin must be >= 0");
        if (epsilon < 0.0 || epsilon >= 1.0) throw ConfigError("epsilon must lie in [0,1)");
        if (weights.alice_key <= 0.0 || weights.alice_key >= 1.0)
            throw ConfigError("alice key-setting weight must lie in (0,1)");
        if (weights.bob_test0 <= 0.0 || weights.bob_test1 <= 0.0 || weights.bob_key() <= 0.0)
            throw ConfigError("bob setting weights must all be positive");
        if (preshared_key_bits < 0) throw ConfigError("preshared_key_bits must be >= 0");
    }

    double min_entropy_rate(double test_value) const {
        double r = rate_scale * (test_value - rate_offset);
        return std::clamp(r, 0.0, 1.0);
    }
};

// Deterministic shared pad modeling the pre-shared secret key. Both parties
// hold the same stream; consumption is metered against a fixed budget.
class PresharedPad {
  public:
    PresharedPad(uint64_t secret_seed, int64_t budget_bits)
        : seed_(secret_seed), budget_(budget_bits) {}

    int64_t consumed() const { return consumed_; }
    int64_t budget() const { return budget_; }

    int take_bit() {
        int64_t pos = consume(1);
        return bit_at(pos);
    }

    // Expands one 64-bit chunk of pad into arbitrary derived bits (used when
    // the PA function must stay secret).
    uint64_t take_chunk() {
        int64_t pos = consume(64);
        uint64_t w = 0;
        for (int i = 0; i < 64; ++i) w |= static_cast<uint64_t>(bit_at(pos + i)) << i;
        return w;
    }

    int bit_at(int64_t pos) const {
        uint64_t word = sub_seed(seed_, static_cast<uint64_t>(pos) >> 6);
        return static_cast<int>((word >> (pos & 63)) & 1);
    }

  private:
    int64_t consume(int64_t n) {
        if (consumed_ + n > budget_)
            throw InsufficientPresharedKey("pre-shared key exhausted");
        int64_t pos = consumed_;
        consumed_ += n;
        return pos;
    }

    uint64_t seed_;
    int64_t budget_;
    int64_t consumed_ = 0;
};

struct PeReveal {
    int64_t round;
    int value;  // plaintext bit, or one-time-pad ciphertext bit when encrypted
    bool encrypted;
};

struct EcRecord {
    std::string descriptor;
    int64_t disclosed_bits = 0;
};

struct PaRecord {
    bool withheld = false;
    std::optional<pamp::HashSeed> seed;  // absent when withheld
    int64_t t = 0;
};

struct AbortInfo {
    int step;
    std::string cause;
};

// Exactly the data the protocol makes public on one day. Raw unrevealed
// outputs never appear here.
struct SessionTranscript {
    int day = 0;
    std::vector<uint8_t> announced_alice_inputs;  // empty when only Bob announces
    std::vector<uint8_t> announced_bob_inputs;
    std::vector<int64_t> sift_rounds;  // rounds kept for key generation, pre-estimation
    char pe_announcer = 'A';
    std::vector<PeReveal> pe_reveals;
    int64_t pe_pad_consumed = 0;
    double test_value = std::numeric_limits<double>::quiet_NaN();
    EcRecord ec;
    PaRecord pa;
    std::optional<AbortInfo> abort;
};

struct KeyMaterial {
    BitVec raw;      // all outputs of the day, own side
    BitVec sifted;   // key-round bits surviving parameter estimation
    BitVec corrected;
    BitVec final_key;
    int64_t leakage_bits = 0;  // everything disclosed: reconciliation bits + reveal count
    pamp::MinEntropyBudget budget;
    pamp::PaSelection pa;
};

struct SessionOutcome {
    SessionTranscript transcript;
    std::vector<SessionTranscript> sub_transcripts;  // multi-device days: one per pair
    std::optional<KeyMaterial> alice_key;
    std::optional<KeyMaterial> bob_key;
    std::vector<double> device_net_entropy;  // multi-device days: per-pair net budget
    // Plaintext of the reveals, known only to the announcer and the pad
    // holder; not part of the public transcript.
    std::map<int64_t, int> private_plain_reveals;

    bool aborted() const { return transcript.abort.has_value(); }
};

struct Party {
    std::vector<devices::DeviceState> meas;
    std::optional<devices::SourceDevice> source;
    bool source_leaks_raw = false;  // combined source/measurement box smuggles day-1 data
};

// Eve's grip on the insecure channel: she may read or rewrite shipments and
// observes every transcript. The default adversary does nothing.
class Adversary {
  public:
    virtual ~Adversary() = default;
    virtual devices::StateShipment touch_shipment(devices::StateShipment s, int /*day*/) { return s; }
    virtual void observe_transcript(const SessionTranscript&) {}
};

inline Adversary& null_adversary() {
    static Adversary a;
    return a;
}

// Alice: settings {test=0deg, key=45deg}. Bob: {test0=22.5deg,
// test1=67.5deg, key=45deg}. The four test combinations realize the maximal
// CHSH violation; the (key, key) pair is perfectly anticorrelated.
inline std::vector<double> alice_angles() { return {0.0, qsim::kPi / 4}; }
inline std::vector<double> bob_angles() { return {qsim::kPi / 8, 3 * qsim::kPi / 8, qsim::kPi / 4}; }
inline constexpr int kAliceKeySetting = 1;
inline constexpr int kBobKeySetting = 2;

inline Party make_alice(const ProtocolConfig& cfg, uint64_t seed) {
    Party p;
    for (int i = 0; i < cfg.m_devices; ++i)
        p.meas.emplace_back("alice." + std::to_string(i), alice_angles(),
                            sub_seed(seed, hash_str("alice." + std::to_string(i))));
    return p;
}

inline Party make_bob(const ProtocolConfig& cfg, uint64_t seed) {
    Party p;
    for (int i = 0; i < cfg.m_devices; ++i) {
        p.meas.emplace_back("bob." + std::to_string(i), bob_angles(),
                            sub_seed(seed, hash_str("bob." + std::to_string(i))));
        if (cfg.cm.cm1_bob_announces) p.meas.back().set_isolated_incoming(true);
    }
    p.source.emplace("bob.source", /*isolated=*/true);
    return p;
}

namespace streams {
inline constexpr uint64_t kInputs = 1;
inline constexpr uint64_t kPe = 2;
inline constexpr uint64_t kEc = 3;
inline constexpr uint64_t kPa = 4;
inline constexpr uint64_t kRoundBase = 1024;
}  // namespace streams

// ---- parameter estimation -------------------------------------------------

struct RoundView {
    int64_t round;
    int a_setting;
    int b_setting;
    int a_sign;          // +-1 outcome signs for the test function
    int b_sign;
    int announcer_bit;   // the bit that goes on the wire if this round is revealed
};

struct PeResult {
    std::vector<PeReveal> reveals;
    std::vector<int64_t> revealed_rounds;
    std::map<int64_t, int> plain;  // plaintext per revealed round (announcer/pad-holder view)
    // Tally of the revealed test-setting rounds. The CHSH combination is the
    // default test function; alternative statistics can be computed from
    // this without touching the pipeline.
    qsim::ChshTally tally;
    double test_value = std::numeric_limits<double>::quiet_NaN();
    bool missing_setting_pair = false;
    int64_t pad_consumed = 0;
};

// Each round is revealed independently with probability mu. Under
// encryption, only ciphertext enters the transcript and one pad bit is
// consumed per revealed bit. The test value is the CHSH combination over the
// revealed rounds that used test settings.
inline PeResult parameter_estimation(std::span<const RoundView> rounds, double mu, bool encrypt,
                                     PresharedPad* pad, Rng& rng) {
    if (encrypt && pad == nullptr) throw ConfigError("encrypted estimation requires a pad");
    PeResult res;
    for (const auto& rv : rounds) {
        if (!rng.bernoulli(mu)) continue;
        res.revealed_rounds.push_back(rv.round);
        res.plain[rv.round] = rv.announcer_bit;
        int wire = rv.announcer_bit;
        if (encrypt) {
            wire ^= pad->take_bit();
            ++res.pad_consumed;
        }
        res.reveals.push_back(PeReveal{rv.round, wire, encrypt});
        if (rv.b_setting <= 1) res.tally.add(rv.a_setting, rv.b_setting, rv.a_sign, rv.b_sign);
    }
    try {
        res.test_value = qsim::chsh_value(res.tally);
    } catch (const qsim::MissingSettingPair&) {
        res.missing_setting_pair = true;
    }
    return res;
}

// ---- error correction -----------------------------------------------------

struct EcResult {
    BitVec alice_corrected;
    BitVec bob_corrected;
    int64_t disclosed_bits = 0;
    bool ok = false;
    EcRecord record;
};

inline EcResult error_correct(const BitVec& alice_sifted, const BitVec& bob_sifted,
                              double design_error_rate, uint64_t seed, int passes = 4,
                              int verify_bits = 64) {
    cascade::Options opt;
    opt.design_error_rate = design_error_rate;
    opt.passes = passes;
    opt.verify_bits = verify_bits;
    opt.shuffle_seed = seed;
    cascade::Result r = cascade::reconcile(alice_sifted, bob_sifted, opt);
    EcResult out;
    out.alice_corrected = alice_sifted;  // reference side is untouched
    out.bob_corrected = r.corrected;
    out.disclosed_bits = r.disclosed_bits;
    out.ok = r.verified;
    out.record = EcRecord{r.descriptor, r.disclosed_bits};
    return out;
}

// ---- one day --------------------------------------------------------------

namespace detail {

struct MeasuredDay {
    std::vector<uint8_t> alice_inputs;
    std::vector<uint8_t> bob_inputs;
    BitVec alice_out;
    BitVec bob_out;
    std::optional<AbortInfo> abort;
};

inline MeasuredDay measure_rounds(const ProtocolConfig& cfg, devices::DeviceState& alice_dev,
                                  devices::DeviceState& bob_dev, uint64_t day_seed) {
    MeasuredDay md;
    int64_t m = cfg.rounds_per_day;
    md.alice_inputs.reserve(m);
    md.bob_inputs.reserve(m);
    Rng in_rng(sub_seed(day_seed, streams::kInputs));
    for (int64_t i = 0; i < m; ++i) {
        md.alice_inputs.push_back(in_rng.bernoulli(cfg.weights.alice_key) ? 1 : 0);
        double u = in_rng.uniform();
        md.bob_inputs.push_back(u < cfg.weights.bob_test0 ? 0
                                : u < cfg.weights.bob_test0 + cfg.weights.bob_test1 ? 1
                                                                                    : 2);
    }
    qsim::CorrelationModel model{cfg.visibility};
    for (int64_t i = 0; i < m; ++i) {
        qsim::PairRound link(model, sub_seed(day_seed, streams::kRoundBase + static_cast<uint64_t>(i)));
        auto a = alice_dev.step(md.alice_inputs[i], link);
        if (a.aborted) {
            md.abort = AbortInfo{2, "device " + alice_dev.id() + " aborted"};
            return md;
        }
        auto b = bob_dev.step(md.bob_inputs[i], link);
        if (b.aborted) {
            md.abort = AbortInfo{2, "device " + bob_dev.id() + " aborted"};
            return md;
        }
        md.alice_out.push_back(a.output_bit);
        md.bob_out.push_back(b.output_bit);
    }
    return md;
}

// Steps 1-6 for one device pair. Fills the transcript and, on success, the
// sifted/corrected strings plus the net entropy budget of this substring.
struct PairDayResult {
    SessionTranscript transcript;
    BitVec alice_sifted, bob_sifted;
    BitVec alice_corrected, bob_corrected;
    std::map<int64_t, int> plain_reveals;
    double net_entropy = 0.0;  // rate(test) * |sifted| - reconciliation leakage
    int64_t ec_disclosed = 0;
    bool ok = false;
};

inline PairDayResult run_steps_1_to_6(const ProtocolConfig& cfg, Party& alice, Party& bob,
                                      int pair_index, Adversary& eve, int day, uint64_t day_seed,
                                      PresharedPad& pad) {
    PairDayResult out;
    SessionTranscript& t = out.transcript;
    t.day = day;
    t.pe_announcer = cfg.cm.cm1_bob_announces ? 'B' : 'A';

    auto& alice_dev = alice.meas[static_cast<size_t>(pair_index)];
    auto& bob_dev = bob.meas[static_cast<size_t>(pair_index)];
    alice_dev.begin_day(day);
    bob_dev.begin_day(day);

    // Step 1: states from Bob's source over the insecure channel to Alice's
    // device; the channel is closed afterwards.
    std::optional<devices::CovertPayload> hidden;
    if (bob.source_leaks_raw && day >= 2) {
        devices::CovertPayload p;
        p.raw_leak = bob_dev.outputs_on_day(day - 1);
        hidden = std::move(p);
    }
    devices::StateShipment shipment =
        bob.source ? devices::source_emit(*bob.source, cfg.rounds_per_day, !bob.source_leaks_raw, hidden)
                   : devices::StateShipment{cfg.rounds_per_day, std::nullopt, true};
    shipment = eve.touch_shipment(std::move(shipment), day);
    alice_dev.ingest_shipment(shipment);

    // Step 2: M measurement rounds, outputs before next inputs.
    MeasuredDay md = measure_rounds(cfg, alice_dev, bob_dev, day_seed);
    if (md.abort) {
        t.abort = md.abort;
        return out;
    }

    // Step 3: input announcement and sufficiency check.
    t.announced_bob_inputs = md.bob_inputs;
    if (!cfg.cm.cm1_bob_announces) t.announced_alice_inputs = md.alice_inputs;
    int64_t combo[2][3] = {};
    for (int64_t i = 0; i < cfg.rounds_per_day; ++i) ++combo[md.alice_inputs[i]][md.bob_inputs[i]];
    bool enough = combo[kAliceKeySetting][kBobKeySetting] >= cfg.min_combo_rounds;
    for (int a = 0; a < 2 && enough; ++a)
        for (int b = 0; b < 2; ++b)
            if (combo[a][b] < cfg.min_combo_rounds) {
                enough = false;
                break;
            }
    if (!enough) {
        t.abort = AbortInfo{3, "insufficient input combinations"};
        return out;
    }

    // Step 4: sifting. Key rounds are those where both picked the key
    // setting; everything else stays eligible for estimation. The mask is a
    // pure function of the announced inputs.
    for (int64_t i = 0; i < cfg.rounds_per_day; ++i)
        if (md.alice_inputs[i] == kAliceKeySetting && md.bob_inputs[i] == kBobKeySetting)
            t.sift_rounds.push_back(i);

    // Step 5: parameter estimation over every round; revealed key rounds are
    // discarded from the key.
    std::vector<RoundView> views;
    views.reserve(static_cast<size_t>(cfg.rounds_per_day));
    for (int64_t i = 0; i < cfg.rounds_per_day; ++i) {
        RoundView rv;
        rv.round = i;
        rv.a_setting = md.alice_inputs[i];
        rv.b_setting = md.bob_inputs[i];
        rv.a_sign = qsim::bit_to_sign(md.alice_out.get(i));
        rv.b_sign = qsim::bit_to_sign(md.bob_out.get(i));
        rv.announcer_bit = cfg.cm.cm1_bob_announces ? md.bob_out.get(i) : md.alice_out.get(i);
        views.push_back(rv);
    }
    Rng pe_rng(sub_seed(day_seed, streams::kPe));
    PeResult pe = parameter_estimation(views, cfg.mu, cfg.cm.cm2_encrypt_pe, &pad, pe_rng);
    t.pe_reveals = pe.reveals;
    t.pe_pad_consumed = pe.pad_consumed;
    t.test_value = pe.test_value;
    out.plain_reveals = pe.plain;
    if (pe.missing_setting_pair) {
        t.abort = AbortInfo{5, "test function undefined: missing setting pair"};
        return out;
    }
    if (pe.test_value < cfg.chsh_threshold) {
        t.abort = AbortInfo{5, "test value below threshold"};
        return out;
    }

    // Step 6: reconciliation on the surviving key rounds. Outcomes at equal
    // key bases are anticorrelated, so Bob's key map flips his bits.
    std::vector<char> revealed(static_cast<size_t>(cfg.rounds_per_day), 0);
    for (int64_t r : pe.revealed_rounds) revealed[static_cast<size_t>(r)] = 1;
    for (int64_t r : t.sift_rounds) {
        if (revealed[static_cast<size_t>(r)]) continue;
        out.alice_sifted.push_back(md.alice_out.get(r));
        out.bob_sifted.push_back(md.bob_out.get(r) ^ 1);
    }
    EcResult ec = error_correct(out.alice_sifted, out.bob_sifted, cfg.noise_tolerance,
                                sub_seed(day_seed, streams::kEc), cfg.ec_passes, cfg.ec_verify_bits);
    t.ec = ec.record;
    if (!ec.ok) {
        t.abort = AbortInfo{6, "reconciliation verification failed"};
        return out;
    }
    out.alice_corrected = ec.alice_corrected;
    out.bob_corrected = ec.bob_corrected;
    out.ec_disclosed = ec.disclosed_bits;
    out.net_entropy = cfg.min_entropy_rate(pe.test_value) * static_cast<double>(out.alice_sifted.size()) -
                      static_cast<double>(ec.disclosed_bits);
    out.ok = true;
    return out;
}

inline KeyMaterial make_key_material(BitVec raw, BitVec sifted, BitVec corrected, BitVec final_key,
                                     int64_t ec_disclosed, int64_t reveal_count,
                                     pamp::MinEntropyBudget budget, pamp::PaSelection sel) {
    KeyMaterial k;
    k.raw = std::move(raw);
    k.sifted = std::move(sifted);
    k.corrected = std::move(corrected);
    k.final_key = std::move(final_key);
    k.leakage_bits = ec_disclosed + reveal_count;
    k.budget = budget;
    k.pa = sel;
    return k;
}

}  // namespace detail

// Steps 1-7 with a single device pair.
inline SessionOutcome run_day(const ProtocolConfig& cfg, Party& alice, Party& bob, Adversary& eve,
                              int day, uint64_t day_seed, PresharedPad& pad) {
    cfg.validate();
    SessionOutcome outcome;
    detail::PairDayResult pd = detail::run_steps_1_to_6(cfg, alice, bob, 0, eve, day, day_seed, pad);
    outcome.transcript = pd.transcript;
    outcome.private_plain_reveals = pd.plain_reveals;
    if (!pd.ok) {
        eve.observe_transcript(outcome.transcript);
        return outcome;
    }

    // Step 7: privacy amplification.
    pamp::MinEntropyBudget budget;
    budget.hmin_eps = cfg.min_entropy_rate(pd.transcript.test_value) *
                      static_cast<double>(pd.alice_sifted.size());
    budget.epsilon = cfg.epsilon;
    budget.leakage_bits = pd.ec_disclosed;
    budget.security_margin = cfg.security_margin;
    budget.m_factor = 1.0;
    pamp::PaSelection sel = pamp::choose_output_length(budget);
    if (sel.t == 0) {
        outcome.transcript.abort = AbortInfo{7, "no extractable key at this test value"};
        eve.observe_transcript(outcome.transcript);
        return outcome;
    }

    pamp::HashSeed seed;
    if (cfg.cm.cm4_secret_pa) {
        Rng pa_rng(pad.take_chunk());
        seed = pamp::HashSeed::random(pd.alice_corrected.size(), static_cast<size_t>(sel.t), pa_rng);
        outcome.transcript.pa = PaRecord{true, std::nullopt, sel.t};
    } else {
        Rng pa_rng(sub_seed(day_seed, streams::kPa));
        seed = pamp::HashSeed::random(pd.alice_corrected.size(), static_cast<size_t>(sel.t), pa_rng);
        outcome.transcript.pa = PaRecord{false, seed, sel.t};
    }
    BitVec alice_final = pamp::toeplitz_hash(pd.alice_corrected, seed, static_cast<size_t>(sel.t));
    BitVec bob_final = pamp::toeplitz_hash(pd.bob_corrected, seed, static_cast<size_t>(sel.t));

    int64_t reveal_count = static_cast<int64_t>(outcome.transcript.pe_reveals.size());
    outcome.alice_key = detail::make_key_material(
        alice.meas[0].outputs_on_day(day), pd.alice_sifted, pd.alice_corrected, alice_final,
        pd.ec_disclosed, reveal_count, budget, sel);
    outcome.bob_key = detail::make_key_material(
        bob.meas[0].outputs_on_day(day), pd.bob_sifted, pd.bob_corrected, bob_final,
        pd.ec_disclosed, reveal_count, budget, sel);
    eve.observe_transcript(outcome.transcript);
    return outcome;
}

// Steps 1-6 per device pair, then one privacy amplification over the
// concatenation, shortened so the key stays secure if any single pair's
// corrected string is exposed. t is chosen from m * min_i(net_i) with an
// (m-1)/m factor, i.e. t + l never exceeds the budget that remains after
// removing the best-endowed substring an abort attack could expose.
inline SessionOutcome run_day_cm3(const ProtocolConfig& cfg, Party& alice, Party& bob, Adversary& eve,
                                  int day, uint64_t day_seed, PresharedPad& pad) {
    cfg.validate();
    if (!cfg.cm.cm3_multi_device || cfg.m_devices < 2)
        throw ConfigError("run_day_cm3 requires cm3 and m >= 2");
    SessionOutcome outcome;
    outcome.transcript.day = day;
    outcome.transcript.pe_announcer = 'B';

    BitVec alice_concat, bob_concat, alice_sift_concat, bob_sift_concat;
    double min_net = std::numeric_limits<double>::infinity();
    int64_t total_ec = 0;
    int64_t total_reveals = 0;
    for (int d = 0; d < cfg.m_devices; ++d) {
        detail::PairDayResult pd = detail::run_steps_1_to_6(cfg, alice, bob, d, eve,
                                                            day, sub_seed(day_seed, 0xD00 + d), pad);
        pd.transcript.day = day;
        outcome.sub_transcripts.push_back(pd.transcript);
        for (auto& [r, v] : pd.plain_reveals)
            outcome.private_plain_reveals[static_cast<int64_t>(d) * cfg.rounds_per_day + r] = v;
        if (!pd.ok) {
            outcome.transcript.abort = pd.transcript.abort;
            eve.observe_transcript(outcome.transcript);
            return outcome;
        }
        alice_concat.append(pd.alice_corrected);
        bob_concat.append(pd.bob_corrected);
        alice_sift_concat.append(pd.alice_sifted);
        bob_sift_concat.append(pd.bob_sifted);
        outcome.device_net_entropy.push_back(pd.net_entropy);
        min_net = std::min(min_net, pd.net_entropy);
        total_ec += pd.ec_disclosed;
        total_reveals += static_cast<int64_t>(pd.transcript.pe_reveals.size());
    }

    pamp::MinEntropyBudget budget;
    budget.hmin_eps = std::max(0.0, static_cast<double>(cfg.m_devices) * min_net);
    budget.epsilon = cfg.epsilon;
    budget.leakage_bits = 0;  // already netted per pair
    budget.security_margin = cfg.security_margin;
    budget.m_factor = static_cast<double>(cfg.m_devices - 1) / static_cast<double>(cfg.m_devices);
    pamp::PaSelection sel = pamp::choose_output_length(budget);
    if (sel.t == 0) {
        outcome.transcript.abort = AbortInfo{7, "no extractable key at this test value"};
        eve.observe_transcript(outcome.transcript);
        return outcome;
    }

    pamp::HashSeed seed;
    if (cfg.cm.cm4_secret_pa) {
        Rng pa_rng(pad.take_chunk());
        seed = pamp::HashSeed::random(alice_concat.size(), static_cast<size_t>(sel.t), pa_rng);
        outcome.transcript.pa = PaRecord{true, std::nullopt, sel.t};
    } else {
        Rng pa_rng(sub_seed(day_seed, streams::kPa));
        seed = pamp::HashSeed::random(alice_concat.size(), static_cast<size_t>(sel.t), pa_rng);
        outcome.transcript.pa = PaRecord{false, seed, sel.t};
    }
    BitVec alice_final = pamp::toeplitz_hash(alice_concat, seed, static_cast<size_t>(sel.t));
    BitVec bob_final = pamp::toeplitz_hash(bob_concat, seed, static_cast<size_t>(sel.t));

    BitVec alice_raw, bob_raw;
    for (int d = 0; d < cfg.m_devices; ++d) {
        alice_raw.append(alice.meas[static_cast<size_t>(d)].outputs_on_day(day));
        bob_raw.append(bob.meas[static_cast<size_t>(d)].outputs_on_day(day));
    }
    outcome.alice_key = detail::make_key_material(std::move(alice_raw), alice_sift_concat, alice_concat,
                                                  alice_final, total_ec, total_reveals, budget, sel);
    outcome.bob_key = detail::make_key_material(std::move(bob_raw), bob_sift_concat, bob_concat,
                                                bob_final, total_ec, total_reveals, budget, sel);
    outcome.transcript.test_value = outcome.sub_transcripts.front().test_value;
    eve.observe_transcript(outcome.transcript);
    return outcome;
}

}  // namespace qkdlab::protocol
