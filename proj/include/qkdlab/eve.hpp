#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "qkdlab/devices.hpp"
#include "qkdlab/protocol.hpp"
#include "qkdlab/rng.hpp"

// Eve's side of the story: strategy descriptions, the ledger of everything
// she observes or infers, covert instruction planning, and the abort-day
// integer code. Every inferred bit carries a provenance tag and must be
// re-derivable from the ledger contents alone (see eve_reconstruct).

namespace qkdlab::eve {

struct BudgetExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CampaignTooShort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoAttack {};
struct PeAttack {
    int n_target = 25;  // expected key bits to learn; schedule size is n_target / mu
};
struct AbortAttack {
    int encode_bits = 0;  // 0: derive from campaign length
};
struct ImpostorAttack {
    int corrupt_day = 2;
    int n_target = 25;
    bool abort_variant = false;
};
struct BhkAttack {
    int pair_groups = 2;  // M
    int input_range = 10;  // N
    bool restrict_announcements = false;
};
struct HrDepletion {
    int runs = 50;
    int64_t day1_key_target = 1000000;
    bool full_sessions = false;
};
struct QreLengthLeak {};
struct QreProcrustean {
    int64_t fixed_length = 100;  // L
};
struct QreAbort {};

using AttackPlan = std::variant<NoAttack, PeAttack, AbortAttack, ImpostorAttack, BhkAttack,
                                HrDepletion, QreLengthLeak, QreProcrustean, QreAbort>;

enum class Provenance { PeReveal, AbortDecode, Covert, LengthObservation };

inline const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::PeReveal: return "pe-reveal";
        case Provenance::AbortDecode: return "abort-decode";
        case Provenance::Covert: return "covert";
        case Provenance::LengthObservation: return "length-observation";
    }
    return "?";
}

struct InferredBit {
    int value;
    Provenance provenance;
};

struct EveLedger {
    std::vector<protocol::SessionTranscript> transcripts;
    std::vector<devices::CovertPayload> covert_taps;
    std::map<int64_t, InferredBit> day1_key_bits;
    std::map<int64_t, InferredBit> day1_raw_bits;
    std::optional<int> abort_day;
    std::optional<int> abort_code_bits;  // width of the abort-day code Eve pre-installed
    std::vector<int64_t> observed_lengths;
    // Plaintexts a corrupted counterparty hands over: day -> (round -> bit).
    std::map<int, std::map<int64_t, int>> shared_plaintexts;
};

// ---- abort-day integer code -------------------------------------------------

// Encode bits b1..bk (most significant first) as the integer N and abort on
// day N + 2.
inline int abort_encode(const BitVec& bits, int campaign_days) {
    if (bits.size() > 30) throw std::invalid_argument("abort_encode: too many bits");
    int n = 0;
    for (size_t i = 0; i < bits.size(); ++i) n = (n << 1) | bits.get(i);
    int day = n + 2;
    if (day > campaign_days) throw CampaignTooShort("abort day exceeds campaign length");
    return day;
}

inline BitVec abort_decode(int abort_day, int num_bits) {
    if (abort_day < 2) throw std::invalid_argument("abort_decode: day must be >= 2");
    int n = abort_day - 2;
    BitVec bits(static_cast<size_t>(num_bits));
    for (int i = 0; i < num_bits; ++i) bits.set(static_cast<size_t>(i), (n >> (num_bits - 1 - i)) & 1);
    return bits;
}

// ---- parameter-estimation attack planning -----------------------------------

// Public data of a completed day sufficient to recompute its final key from
// raw outputs: surviving key rounds, and the announced hash (when it was
// announced).
struct Day1View {
    devices::KeyRecipe recipe;
    bool pa_known = false;
};

inline std::optional<Day1View> view_from_transcript(const protocol::SessionTranscript& t) {
    if (t.abort) return std::nullopt;
    Day1View v;
    std::vector<char> revealed;
    for (const auto& r : t.pe_reveals) {
        if (static_cast<size_t>(r.round) >= revealed.size())
            revealed.resize(static_cast<size_t>(r.round) + 1, 0);
        revealed[static_cast<size_t>(r.round)] = 1;
    }
    for (int64_t r : t.sift_rounds) {
        if (static_cast<size_t>(r) < revealed.size() && revealed[static_cast<size_t>(r)]) continue;
        v.recipe.key_rounds.push_back(r);
    }
    v.recipe.ec_id = t.ec.descriptor;
    v.recipe.t = t.pa.t;
    if (!t.pa.withheld && t.pa.seed) {
        v.recipe.pa_seed = t.pa.seed;
        v.pa_known = true;
    }
    return v;
}

// A schedule of n_target / mu cheat rounds on occurrences of one input
// value, each mapped to a distinct day-1 key bit index (cycling only if the
// key is shorter than the schedule). Rounds where the scheduled output is
// announced hand Eve the corresponding key bit.
inline devices::LeakSchedule plan_pe_attack(const Day1View& day1, int n_target, double mu, int64_t m_rounds,
                                            int target_input, double target_input_prob, Rng& rng) {
    if (n_target < 0) throw std::invalid_argument("plan_pe_attack: negative target");
    devices::LeakSchedule sched;
    sched.source = day1.pa_known ? devices::LeakSource::FinalKey : devices::LeakSource::RawSifted;
    if (n_target == 0) return sched;
    auto size = static_cast<int64_t>(std::llround(static_cast<double>(n_target) / mu));
    if (size >= m_rounds) throw BudgetExceeded("cheat budget n_target/mu must stay below M");
    double exp_occ = static_cast<double>(m_rounds) * target_input_prob;
    auto cap = static_cast<int64_t>(
        std::floor(exp_occ - 4.0 * std::sqrt(exp_occ * (1.0 - target_input_prob))));
    if (size > cap) throw BudgetExceeded("cheat budget exceeds dependable occurrences of the target input");

    // sample `size` distinct occurrence numbers from [1, cap]
    std::vector<int64_t> occ(static_cast<size_t>(cap));
    for (int64_t i = 0; i < cap; ++i) occ[static_cast<size_t>(i)] = i + 1;
    for (int64_t i = 0; i < size; ++i) {
        int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(cap - i)));
        std::swap(occ[static_cast<size_t>(i)], occ[static_cast<size_t>(j)]);
    }
    occ.resize(static_cast<size_t>(size));
    std::sort(occ.begin(), occ.end());

    int64_t key_len = day1.pa_known ? day1.recipe.t : static_cast<int64_t>(day1.recipe.key_rounds.size());
    std::vector<int64_t> indices;
    if (key_len >= size) {
        indices.resize(static_cast<size_t>(key_len));
        for (int64_t i = 0; i < key_len; ++i) indices[static_cast<size_t>(i)] = i;
        for (int64_t i = 0; i < size; ++i) {
            int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(key_len - i)));
            std::swap(indices[static_cast<size_t>(i)], indices[static_cast<size_t>(j)]);
        }
        indices.resize(static_cast<size_t>(size));
    } else {
        for (int64_t i = 0; i < size; ++i) indices.push_back(key_len > 0 ? i % key_len : 0);
    }
    for (int64_t i = 0; i < size; ++i)
        sched.entries[{target_input, static_cast<int>(occ[static_cast<size_t>(i)])}] =
            static_cast<int>(indices[static_cast<size_t>(i)]);
    return sched;
}

// ---- reconstruction ----------------------------------------------------------

struct Reconstruction {
    std::map<int64_t, InferredBit> day1_key_bits;
    std::map<int64_t, InferredBit> day1_raw_bits;
};

// Recomputes everything Eve can legitimately infer from ledger contents:
// announced cheat rounds map to scheduled day-1 bits, an observed abort day
// decodes as the integer code, and covert raw payloads are read directly.
// When the day-1 hash was withheld, schedules leak raw bits, never key bits.
inline Reconstruction eve_reconstruct(const EveLedger& ledger,
                                      std::span<const protocol::SessionTranscript> transcripts) {
    Reconstruction rec;
    for (const auto& tap : ledger.covert_taps) {
        for (size_t i = 0; i < tap.raw_leak.size(); ++i)
            rec.day1_raw_bits[static_cast<int64_t>(i)] = InferredBit{tap.raw_leak.get(i), Provenance::Covert};
        if (tap.schedule.empty()) continue;
        bool key_mode = tap.schedule.source == devices::LeakSource::FinalKey;
        for (const auto& t : transcripts) {
            if (t.day < 2) continue;
            if (t.announced_alice_inputs.empty()) continue;  // cannot locate occurrences
            // round -> (input, occurrence), 1-based per input value
            std::map<int, int> seen;
            std::map<int64_t, std::pair<int, int>> occ_of_round;
            for (size_t i = 0; i < t.announced_alice_inputs.size(); ++i) {
                int in = t.announced_alice_inputs[i];
                occ_of_round[static_cast<int64_t>(i)] = {in, ++seen[in]};
            }
            auto shared = ledger.shared_plaintexts.find(t.day);
            for (const auto& r : t.pe_reveals) {
                if (t.pe_announcer != 'A') continue;  // schedule sits in Alice's device
                auto oc = occ_of_round.find(r.round);
                if (oc == occ_of_round.end()) continue;
                auto entry = tap.schedule.entries.find(oc->second);
                if (entry == tap.schedule.entries.end()) continue;
                int value;
                if (!r.encrypted) {
                    value = r.value;
                } else if (shared != ledger.shared_plaintexts.end() &&
                           shared->second.count(r.round)) {
                    value = shared->second.at(r.round);
                } else {
                    continue;  // ciphertext only
                }
                auto idx = static_cast<int64_t>(entry->second);
                if (key_mode)
                    rec.day1_key_bits[idx] = InferredBit{value, Provenance::PeReveal};
                else
                    rec.day1_raw_bits[idx] = InferredBit{value, Provenance::PeReveal};
            }
        }
    }
    if (ledger.abort_day && ledger.abort_code_bits && *ledger.abort_day >= 2) {
        BitVec bits = abort_decode(*ledger.abort_day, *ledger.abort_code_bits);
        for (size_t i = 0; i < bits.size(); ++i)
            rec.day1_raw_bits[static_cast<int64_t>(i)] = InferredBit{bits.get(i), Provenance::AbortDecode};
    }
    return rec;
}

// Campaign-level adversary: taps every shipment, stores every transcript,
// and on the chosen day rides covert instructions into Alice's device.
class Eve : public protocol::Adversary {
  public:
    Eve(AttackPlan plan, protocol::ProtocolConfig cfg, uint64_t seed)
        : plan_(std::move(plan)), cfg_(std::move(cfg)), rng_(seed) {}

    devices::StateShipment touch_shipment(devices::StateShipment s, int day) override {
        if (s.covert) ledger_.covert_taps.push_back(*s.covert);  // free read of the side band
        bool inject = false;
        int n_target = 0;
        if (auto* pe = std::get_if<PeAttack>(&plan_)) {
            inject = day == 2;
            n_target = pe->n_target;
        } else if (auto* imp = std::get_if<ImpostorAttack>(&plan_)) {
            inject = day == imp->corrupt_day && !imp->abort_variant;
            n_target = imp->n_target;
        }
        if (inject && day1_) {
            devices::CovertPayload payload;
            payload.recipe = day1_->recipe;
            payload.schedule = plan_pe_attack(*day1_, n_target, cfg_.mu, cfg_.rounds_per_day,
                                              /*target_input=*/0, 1.0 - cfg_.weights.alice_key, rng_);
            ledger_.covert_taps.push_back(payload);  // Eve knows what she sent
            s.covert = std::move(payload);
        }
        return s;
    }

    void observe_transcript(const protocol::SessionTranscript& t) override {
        ledger_.transcripts.push_back(t);
        if (t.day == 1 && !t.abort && !day1_) day1_ = view_from_transcript(t);
        if (t.abort && !ledger_.abort_day) ledger_.abort_day = t.day;
    }

    // Fill the inferred-bit maps from the ledger.
    void finalize() {
        Reconstruction rec = eve_reconstruct(ledger_, ledger_.transcripts);
        ledger_.day1_key_bits = std::move(rec.day1_key_bits);
        ledger_.day1_raw_bits = std::move(rec.day1_raw_bits);
    }

    EveLedger& ledger() { return ledger_; }
    const EveLedger& ledger() const { return ledger_; }
    const std::optional<Day1View>& day1_view() const { return day1_; }

  private:
    AttackPlan plan_;
    protocol::ProtocolConfig cfg_;
    Rng rng_;
    EveLedger ledger_;
    std::optional<Day1View> day1_;
};

}  // namespace qkdlab::eve
