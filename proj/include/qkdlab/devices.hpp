#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "qkdlab/bitvec.hpp"
#include "qkdlab/pamp.hpp"
#include "qkdlab/qsim.hpp"
#include "qkdlab/rng.hpp"

// Measurement devices and the state source as programmable state machines
// with persistent memory. A device sees only its own inputs and outputs; the
// only channels out of it are its output bits, its power to abort, and (for
// a malicious source) covert content riding on state shipments.

namespace qkdlab::devices {

struct IsolationViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// What a device leaks when a scheduled round fires.
enum class LeakSource {
    FinalKey,   // replay the day-1 key derivation from stored raw bits
    RawSifted,  // stored raw bits at the day-1 key rounds (no key derivation known)
};

// "for input x, on its k-th arrival, output day-1 bit i". Occurrences are
// counted per input value within the cheating day, 1-based.
struct LeakSchedule {
    std::map<std::pair<int, int>, int> entries;  // (input, occurrence) -> day-1 bit index
    LeakSource source = LeakSource::FinalKey;

    bool empty() const { return entries.empty(); }
};

// Everything needed to recompute a final key from raw outputs: which rounds
// survived into the error-corrected string, and the hash applied to it.
// The error-corrected reference string equals the raw outputs at key_rounds,
// so this is exact for the reference side.
struct KeyRecipe {
    std::vector<int64_t> key_rounds;  // day-1 round indices, in string order
    std::string ec_id;                // descriptor of the reconciliation function
    std::optional<pamp::HashSeed> pa_seed;
    int64_t t = 0;
};

struct CovertPayload {
    std::optional<KeyRecipe> recipe;
    LeakSchedule schedule;
    BitVec raw_leak;  // data a malicious source smuggles out directly
};

struct StateShipment {
    int64_t count = 0;
    std::optional<CovertPayload> covert;
    bool source_honest = true;
};

// Later rounds flip the honest outcome at a rate keyed to one stored day-1
// raw bit per day, starting at start_day.
struct NoiseModulation {
    double quiet_flip_rate = 0.0;
    double loud_flip_rate = 0.0;
    int start_day = 2;
};

struct Honest {};
struct AbortOnDay {
    int day = 2;
};

using DevicePolicy = std::variant<Honest, LeakSchedule, AbortOnDay, NoiseModulation>;

struct DeviceRecord {
    int day;
    int64_t round;
    int input;
    int output_bit;
};

struct StepResult {
    bool aborted = false;
    int output_bit = 0;
};

enum class IngestResult { Accepted, ShipmentRejected };

class DeviceState {
  public:
    DeviceState(std::string id, std::vector<double> basis_angles, uint64_t internal_seed)
        : id_(std::move(id)), basis_angles_(std::move(basis_angles)), internal_seed_(internal_seed) {}

    const std::string& id() const { return id_; }
    int day() const { return day_; }
    const std::vector<DeviceRecord>& history() const { return history_; }
    const DevicePolicy& policy() const { return policy_; }
    void set_policy(DevicePolicy p) { policy_ = std::move(p); }
    void set_isolated_incoming(bool v) { isolated_incoming_ = v; }
    bool isolated_incoming() const { return isolated_incoming_; }
    const std::optional<CovertPayload>& covert() const { return covert_; }
    int64_t expected_rounds() const { return expected_rounds_; }

    qsim::Basis basis_for(int input) const {
        if (input < 0 || static_cast<size_t>(input) >= basis_angles_.size())
            throw std::out_of_range("device input outside configured settings");
        return qsim::Basis::from_angle(basis_angles_[static_cast<size_t>(input)]);
    }

    // Day boundary: the device's day counter never decreases; per-day
    // occurrence counters reset.
    void begin_day(int day) {
        if (day < day_) throw std::logic_error("device day counter cannot decrease");
        day_ = day;
        round_in_day_ = 0;
        occurrences_.clear();
    }

    // One protocol round. The link pairs this device with its partner's
    // sampling for the same round; the honest outcome is always drawn so the
    // partner's statistics stay singlet-consistent even when the reported
    // output lies.
    StepResult step(int input, qsim::PairRound& link) {
        if (auto* a = std::get_if<AbortOnDay>(&policy_)) {
            if (day_ >= a->day) return StepResult{true, 0};
        }
        int honest_sign = link.draw(basis_for(input));
        int out_bit = qsim::sign_to_bit(honest_sign);

        int occurrence = ++occurrences_[input];
        if (auto* leak = std::get_if<LeakSchedule>(&policy_)) {
            auto it = leak->entries.find({input, occurrence});
            if (it != leak->entries.end()) {
                if (auto bit = leak_bit(leak->source, it->second)) out_bit = *bit;
            }
        } else if (auto* nm = std::get_if<NoiseModulation>(&policy_)) {
            if (day_ >= nm->start_day) {
                double rate = modulation_rate(*nm);
                Rng flip_rng(sub_seed(internal_seed_, (static_cast<uint64_t>(day_) << 32) ^
                                                          static_cast<uint64_t>(round_in_day_)));
                if (flip_rng.bernoulli(rate)) out_bit ^= 1;
            }
        }

        history_.push_back(DeviceRecord{day_, round_in_day_, input, out_bit});
        ++round_in_day_;
        return StepResult{false, out_bit};
    }

    IngestResult ingest_shipment(const StateShipment& shipment) {
        if (isolated_incoming_) return IngestResult::ShipmentRejected;
        expected_rounds_ += shipment.count;
        if (shipment.covert) {
            covert_ = shipment.covert;
            day1_cache_.reset();
            // malicious firmware obeys the instructions it was sent
            if (!covert_->schedule.empty()) policy_ = covert_->schedule;
        }
        return IngestResult::Accepted;
    }

    // Raw outputs recorded on a given day, in round order.
    BitVec outputs_on_day(int day) const {
        BitVec v;
        for (const auto& r : history_)
            if (r.day == day) v.push_back(r.output_bit);
        return v;
    }

    // Replays the day-1 pipeline from this device's own records using the
    // covert recipe; exact for the party whose string is the error
    // correction reference.
    std::optional<BitVec> recompute_day1_key() const {
        if (!covert_ || !covert_->recipe || !covert_->recipe->pa_seed) return std::nullopt;
        const KeyRecipe& r = *covert_->recipe;
        BitVec raw = raw_at_rounds(r.key_rounds);
        if (raw.size() != r.pa_seed->n) return std::nullopt;
        return pamp::toeplitz_hash(raw, *r.pa_seed, static_cast<size_t>(r.t));
    }

    std::optional<BitVec> recall_raw_sifted() const {
        if (!covert_ || !covert_->recipe) return std::nullopt;
        return raw_at_rounds(covert_->recipe->key_rounds);
    }

  private:
    BitVec raw_at_rounds(const std::vector<int64_t>& rounds) const {
        std::map<int64_t, int> day1;
        for (const auto& rec : history_)
            if (rec.day == 1) day1[rec.round] = rec.output_bit;
        BitVec v;
        for (int64_t idx : rounds) {
            auto it = day1.find(idx);
            v.push_back(it == day1.end() ? 0 : it->second);
        }
        return v;
    }

    std::optional<int> leak_bit(LeakSource source, int index) {
        if (!day1_cache_) {
            day1_cache_.emplace();
            if (source == LeakSource::FinalKey)
                day1_cache_->bits = recompute_day1_key();
            else
                day1_cache_->bits = recall_raw_sifted();
        }
        if (!day1_cache_->bits || day1_cache_->bits->empty()) return std::nullopt;
        return day1_cache_->bits->get(static_cast<size_t>(index) % day1_cache_->bits->size());
    }

    double modulation_rate(const NoiseModulation& nm) {
        if (!day1_cache_) {
            day1_cache_.emplace();
            day1_cache_->bits = outputs_on_day(1);
        }
        if (!day1_cache_->bits || day1_cache_->bits->empty()) return nm.quiet_flip_rate;
        size_t idx = static_cast<size_t>(day_ - nm.start_day);
        if (idx >= day1_cache_->bits->size()) return nm.quiet_flip_rate;
        return day1_cache_->bits->get(idx) ? nm.loud_flip_rate : nm.quiet_flip_rate;
    }

    struct Day1Cache {
        std::optional<BitVec> bits;
    };

    std::string id_;
    std::vector<double> basis_angles_;
    uint64_t internal_seed_;
    int day_ = 0;
    int64_t round_in_day_ = 0;
    int64_t expected_rounds_ = 0;
    bool isolated_incoming_ = false;
    std::vector<DeviceRecord> history_;
    std::map<int, int> occurrences_;
    DevicePolicy policy_ = Honest{};
    std::optional<CovertPayload> covert_;
    mutable std::optional<Day1Cache> day1_cache_;
};

inline StepResult device_step(DeviceState& state, int input, qsim::PairRound& link) {
    return state.step(input, link);
}

inline IngestResult ingest_shipment(DeviceState& state, const StateShipment& shipment) {
    return state.ingest_shipment(shipment);
}

// Bob's state source. When it is a separate isolated box it cannot smuggle
// anything; a combined source/measurement device can hide its stored day-1
// data in what it emits.
class SourceDevice {
  public:
    SourceDevice(std::string id, bool isolated) : id_(std::move(id)), isolated_(isolated) {}

    const std::string& id() const { return id_; }
    bool isolated() const { return isolated_; }
    void set_isolated(bool v) { isolated_ = v; }

    StateShipment emit(int64_t count, bool honest, std::optional<CovertPayload> hidden = std::nullopt) const {
        if (isolated_ && hidden) throw IsolationViolation("isolated source cannot carry hidden data");
        StateShipment s;
        s.count = count;
        s.source_honest = honest;
        if (!isolated_ && hidden) s.covert = std::move(hidden);
        return s;
    }

  private:
    std::string id_;
    bool isolated_;
};

inline StateShipment source_emit(const SourceDevice& src, int64_t count, bool honest,
                                 std::optional<CovertPayload> hidden = std::nullopt) {
    return src.emit(count, honest, std::move(hidden));
}

}  // namespace qkdlab::devices
