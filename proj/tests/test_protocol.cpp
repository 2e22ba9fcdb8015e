#include "qkdlab/protocol.hpp"

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "qkdlab/attacks.hpp"
#include "qkdlab/eve.hpp"

using namespace qkdlab;
using protocol::ProtocolConfig;
using protocol::SessionOutcome;

namespace {

SessionOutcome run_one_day(const ProtocolConfig& cfg, uint64_t seed) {
    protocol::Party alice = protocol::make_alice(cfg, sub_seed(seed, 1));
    protocol::Party bob = protocol::make_bob(cfg, sub_seed(seed, 2));
    protocol::PresharedPad pad(sub_seed(seed, 3), cfg.preshared_key_bits);
    return protocol::run_day(cfg, alice, bob, protocol::null_adversary(), 1, sub_seed(seed, 4), pad);
}

bool transcripts_equal(const protocol::SessionTranscript& a, const protocol::SessionTranscript& b) {
    if (a.day != b.day || a.announced_alice_inputs != b.announced_alice_inputs ||
        a.announced_bob_inputs != b.announced_bob_inputs || a.sift_rounds != b.sift_rounds ||
        a.pe_reveals.size() != b.pe_reveals.size() || a.pe_pad_consumed != b.pe_pad_consumed)
        return false;
    for (size_t i = 0; i < a.pe_reveals.size(); ++i)
        if (a.pe_reveals[i].round != b.pe_reveals[i].round ||
            a.pe_reveals[i].value != b.pe_reveals[i].value ||
            a.pe_reveals[i].encrypted != b.pe_reveals[i].encrypted)
            return false;
    if (std::isnan(a.test_value) != std::isnan(b.test_value)) return false;
    if (!std::isnan(a.test_value) && a.test_value != b.test_value) return false;
    if (a.abort.has_value() != b.abort.has_value()) return false;
    if (a.abort && (a.abort->step != b.abort->step || a.abort->cause != b.abort->cause)) return false;
    return a.pa.t == b.pa.t && a.pa.withheld == b.pa.withheld;
}

}  // namespace

TEST(Protocol, ConfigInvariants) {
    ProtocolConfig cfg;
    cfg.mu = 0.0;
    EXPECT_THROW(cfg.validate(), protocol::ConfigError);
    cfg.mu = 0.05;
    cfg.rounds_per_day = 100;  // M*mu = 5 < 30
    EXPECT_THROW(cfg.validate(), protocol::ConfigError);
    cfg.rounds_per_day = 10000;
    EXPECT_NO_THROW(cfg.validate());
    cfg.cm.cm3_multi_device = true;  // needs m >= 2
    EXPECT_THROW(cfg.validate(), protocol::ConfigError);
    cfg.m_devices = 2;
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Protocol, HonestDayProducesAgreedKey) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 10000;
    cfg.mu = 0.05;
    auto out = run_one_day(cfg, 1234);
    ASSERT_FALSE(out.aborted()) << out.transcript.abort->cause;
    EXPECT_NEAR(out.transcript.test_value, 2.83, 0.45);
    ASSERT_TRUE(out.alice_key && out.bob_key);
    EXPECT_GT(out.alice_key->final_key.size(), 0u);
    EXPECT_EQ(out.alice_key->final_key, out.bob_key->final_key);
    EXPECT_EQ(out.alice_key->corrected, out.bob_key->corrected);
    EXPECT_EQ(out.alice_key->raw.size(), static_cast<size_t>(cfg.rounds_per_day));
}

TEST(Protocol, LowVisibilityAbortsAtParameterEstimation) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 30000;
    cfg.mu = 0.2;
    cfg.visibility = 0.85;  // expected test value 2.404, below 2.5
    auto out = run_one_day(cfg, 777);
    ASSERT_TRUE(out.aborted());
    EXPECT_EQ(out.transcript.abort->step, 5);
    EXPECT_LT(out.transcript.test_value, 2.5);
}

TEST(Protocol, DeviceAbortSurfacesAsProtocolAbort) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 1000;
    cfg.mu = 0.05;
    protocol::Party alice = protocol::make_alice(cfg, 1);
    protocol::Party bob = protocol::make_bob(cfg, 2);
    alice.meas[0].set_policy(devices::AbortOnDay{1});
    protocol::PresharedPad pad(3, cfg.preshared_key_bits);
    auto out = protocol::run_day(cfg, alice, bob, protocol::null_adversary(), 1, 4, pad);
    ASSERT_TRUE(out.aborted());
    EXPECT_EQ(out.transcript.abort->step, 2);
    EXPECT_NE(out.transcript.abort->cause.find("aborted"), std::string::npos);
    EXPECT_FALSE(out.alice_key.has_value());
}

TEST(Protocol, MissingSettingCombinationsAbortAtStep3) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 2000;
    cfg.mu = 0.05;
    cfg.weights.bob_test0 = 1e-9;  // test setting 0 effectively never chosen
    cfg.weights.bob_test1 = 0.5;
    auto out = run_one_day(cfg, 51);
    ASSERT_TRUE(out.aborted());
    EXPECT_EQ(out.transcript.abort->step, 3);
}

TEST(Protocol, DeterministicInConfigAndSeed) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.05;
    auto a = run_one_day(cfg, 2718);
    auto b = run_one_day(cfg, 2718);
    EXPECT_TRUE(transcripts_equal(a.transcript, b.transcript));
    ASSERT_TRUE(a.alice_key && b.alice_key);
    EXPECT_EQ(a.alice_key->final_key, b.alice_key->final_key);
    auto c = run_one_day(cfg, 2719);
    EXPECT_NE(a.alice_key->final_key, c.alice_key->final_key);
}

TEST(Protocol, SiftMaskIsReproducibleFromAnnouncedInputs) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.05;
    auto out = run_one_day(cfg, 99);
    ASSERT_FALSE(out.aborted());
    const auto& t = out.transcript;
    ASSERT_FALSE(t.announced_alice_inputs.empty());
    std::vector<int64_t> recomputed;
    for (size_t i = 0; i < t.announced_alice_inputs.size(); ++i)
        if (t.announced_alice_inputs[i] == protocol::kAliceKeySetting &&
            t.announced_bob_inputs[i] == protocol::kBobKeySetting)
            recomputed.push_back(static_cast<int64_t>(i));
    EXPECT_EQ(recomputed, t.sift_rounds);
}

TEST(Protocol, TranscriptCarriesOnlyRevealedOutputs) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.05;
    auto out = run_one_day(cfg, 100);
    ASSERT_FALSE(out.aborted());
    const auto& t = out.transcript;
    // the reveal list is the only per-round output data in the transcript,
    // and the key is built from rounds disjoint from it
    std::set<int64_t> revealed;
    for (const auto& r : t.pe_reveals) revealed.insert(r.round);
    EXPECT_EQ(revealed.size(), t.pe_reveals.size());
    size_t key_rounds = 0;
    for (int64_t r : t.sift_rounds)
        if (!revealed.count(r)) ++key_rounds;
    EXPECT_EQ(key_rounds, out.alice_key->sifted.size());
    // binomial reveal count, 4 sigma
    double mean = static_cast<double>(cfg.rounds_per_day) * cfg.mu;
    double sd = std::sqrt(mean * (1 - cfg.mu));
    EXPECT_NEAR(static_cast<double>(t.pe_reveals.size()), mean, 4 * sd);
}

TEST(Protocol, EncryptedEstimationConsumesPadAndHidesPlaintext) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.05;
    cfg.cm.cm2_encrypt_pe = true;
    auto out = run_one_day(cfg, 321);
    ASSERT_FALSE(out.aborted());
    const auto& t = out.transcript;
    EXPECT_EQ(t.pe_pad_consumed, static_cast<int64_t>(t.pe_reveals.size()));
    size_t differing = 0;
    for (const auto& r : t.pe_reveals) {
        EXPECT_TRUE(r.encrypted);
        if (r.value != out.private_plain_reveals.at(r.round)) ++differing;
    }
    // one-time pad flips about half the bits
    EXPECT_GT(differing, t.pe_reveals.size() / 4);
    EXPECT_LT(differing, 3 * t.pe_reveals.size() / 4);
}

TEST(Protocol, OneTimePadCiphertextHasZeroMutualInformation) {
    // exhaustive over all plaintexts and pads at k bits: I(C;P) = 0 exactly
    for (int k = 1; k <= 8; k <<= 1) {
        int64_t words = int64_t{1} << k;
        // joint distribution over (plaintext, ciphertext) with uniform pad
        std::vector<double> joint(static_cast<size_t>(words * words), 0.0);
        double pp = 1.0 / static_cast<double>(words);      // any plaintext distribution works;
        double ppad = 1.0 / static_cast<double>(words);    // uniform keeps the check exhaustive
        for (int64_t p = 0; p < words; ++p)
            for (int64_t pad = 0; pad < words; ++pad)
                joint[static_cast<size_t>(p * words + (p ^ pad))] += pp * ppad;
        double mi = 0.0;
        for (int64_t p = 0; p < words; ++p)
            for (int64_t c = 0; c < words; ++c) {
                double pj = joint[static_cast<size_t>(p * words + c)];
                if (pj <= 0) continue;
                mi += pj * std::log2(pj / (pp * (1.0 / static_cast<double>(words))));
            }
        EXPECT_NEAR(mi, 0.0, 1e-12) << "k=" << k;
    }
}

TEST(Protocol, PadExhaustionIsAnExplicitError)
{
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.05;
    cfg.cm.cm2_encrypt_pe = true;
    cfg.preshared_key_bits = 10;  // far below the ~200 reveals coming
    EXPECT_THROW(run_one_day(cfg, 5), protocol::InsufficientPresharedKey);
}

TEST(Protocol, SecretAmplificationFunctionStaysOutOfTheTranscript) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.05;
    cfg.cm.cm4_secret_pa = true;
    auto out = run_one_day(cfg, 88);
    ASSERT_FALSE(out.aborted());
    EXPECT_TRUE(out.transcript.pa.withheld);
    EXPECT_FALSE(out.transcript.pa.seed.has_value());
    EXPECT_GT(out.transcript.pa.t, 0);
    EXPECT_EQ(out.alice_key->final_key, out.bob_key->final_key);
}

TEST(Protocol, MultiDeviceDayHalvesTheKeyAndSurvivesExposure) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.1;
    cfg.m_devices = 2;
    cfg.cm.cm3_multi_device = true;
    cfg.cm.cm1_bob_announces = true;
    cfg.cm.cm2_encrypt_pe = true;
    protocol::Party alice = protocol::make_alice(cfg, 11);
    protocol::Party bob = protocol::make_bob(cfg, 12);
    protocol::PresharedPad pad(13, cfg.preshared_key_bits);
    auto out = protocol::run_day_cm3(cfg, alice, bob, protocol::null_adversary(), 1, 14, pad);
    ASSERT_FALSE(out.aborted()) << out.transcript.abort->cause;
    ASSERT_EQ(out.sub_transcripts.size(), 2u);
    ASSERT_EQ(out.device_net_entropy.size(), 2u);
    EXPECT_EQ(out.alice_key->final_key, out.bob_key->final_key);

    // roughly (m-1)/m = 1/2 of what a single amplification over the
    // concatenation would give
    double total_net = out.device_net_entropy[0] + out.device_net_entropy[1];
    double equivalent = total_net - static_cast<double>(cfg.security_margin);
    double ratio = static_cast<double>(out.alice_key->final_key.size()) / equivalent;
    EXPECT_GT(ratio, 0.35);
    EXPECT_LT(ratio, 0.65);

    // exposing either corrected substring leaves at least t + l of budget
    int64_t t = out.transcript.pa.t;
    for (int exposed = 0; exposed < 2; ++exposed) {
        double remaining = total_net - out.device_net_entropy[static_cast<size_t>(exposed)];
        EXPECT_GE(remaining, static_cast<double>(t + cfg.security_margin) - 1e-9);
    }
}

TEST(Protocol, MultiDeviceDayAbortsWholeDayIfAnyPairAborts) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 2000;
    cfg.mu = 0.1;
    cfg.m_devices = 2;
    cfg.cm.cm3_multi_device = true;
    protocol::Party alice = protocol::make_alice(cfg, 21);
    protocol::Party bob = protocol::make_bob(cfg, 22);
    alice.meas[1].set_policy(devices::AbortOnDay{1});
    protocol::PresharedPad pad(23, cfg.preshared_key_bits);
    auto out = protocol::run_day_cm3(cfg, alice, bob, protocol::null_adversary(), 1, 24, pad);
    EXPECT_TRUE(out.aborted());
    EXPECT_FALSE(out.alice_key.has_value());
}

TEST(Protocol, HonestCampaignKeepsIndependentDailyKeys) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 2000;
    cfg.mu = 0.05;
    cfg.days = 5;
    auto res = attacks::run_campaign(cfg, eve::NoAttack{}, 424242);
    ASSERT_EQ(res.days.size(), 5u);
    for (const auto& day : res.days) {
        ASSERT_FALSE(day.aborted());
        EXPECT_EQ(day.alice_key->final_key, day.bob_key->final_key);
    }
    EXPECT_NE(res.days[0].alice_key->final_key, res.days[1].alice_key->final_key);
    EXPECT_TRUE(res.ledger.day1_key_bits.empty());
    EXPECT_TRUE(res.ledger.day1_raw_bits.empty());
}

TEST(Protocol, DeviceRecomputesTheRealDayOneKeyFromTranscriptData) {
    // run a real day, build the derivation recipe exactly the way an
    // eavesdropper would from public data, hand it to the device, and
    // compare against the actual final key
    ProtocolConfig cfg;
    cfg.rounds_per_day = 4000;
    cfg.mu = 0.05;
    protocol::Party alice = protocol::make_alice(cfg, 71);
    protocol::Party bob = protocol::make_bob(cfg, 72);
    protocol::PresharedPad pad(73, cfg.preshared_key_bits);
    auto out = protocol::run_day(cfg, alice, bob, protocol::null_adversary(), 1, 74, pad);
    ASSERT_FALSE(out.aborted());

    auto view = eve::view_from_transcript(out.transcript);
    ASSERT_TRUE(view.has_value());
    ASSERT_TRUE(view->pa_known);
    devices::CovertPayload payload;
    payload.recipe = view->recipe;
    ASSERT_EQ(alice.meas[0].ingest_shipment(devices::StateShipment{0, payload, true}),
              devices::IngestResult::Accepted);
    auto recomputed = alice.meas[0].recompute_day1_key();
    ASSERT_TRUE(recomputed.has_value());
    EXPECT_EQ(*recomputed, out.alice_key->final_key);
}

TEST(Protocol, ParameterEstimationAsAStandaloneStep) {
    // craft rounds covering only three of the four test combinations
    std::vector<protocol::RoundView> views;
    Rng rng(70);
    for (int64_t i = 0; i < 2000; ++i) {
        protocol::RoundView rv;
        rv.round = i;
        rv.a_setting = static_cast<int>(rng.below(2));
        rv.b_setting = rv.a_setting == 0 ? 0 : static_cast<int>(rng.below(2));  // (0,1) never occurs
        rv.a_sign = rng.sign();
        rv.b_sign = -rv.a_sign;
        rv.announcer_bit = qsim::sign_to_bit(rv.a_sign);
        views.push_back(rv);
    }
    Rng pe_rng(71);
    auto res = protocol::parameter_estimation(views, 0.2, false, nullptr, pe_rng);
    EXPECT_TRUE(res.missing_setting_pair);
    EXPECT_NEAR(static_cast<double>(res.reveals.size()), 400.0, 4 * std::sqrt(400.0 * 0.8));

    // encrypted variant consumes one pad bit per reveal and produces
    // ciphertext on the wire
    protocol::PresharedPad pad(5, 1 << 16);
    Rng pe_rng2(71);
    auto enc = protocol::parameter_estimation(views, 0.2, true, &pad, pe_rng2);
    EXPECT_EQ(enc.pad_consumed, static_cast<int64_t>(enc.reveals.size()));
    EXPECT_EQ(pad.consumed(), enc.pad_consumed);
    size_t flipped = 0;
    for (const auto& r : enc.reveals)
        if (r.value != enc.plain.at(r.round)) ++flipped;
    EXPECT_GT(flipped, enc.reveals.size() / 4);
}

TEST(Protocol, ThreeDeviceExposureBudget) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 3000;
    cfg.mu = 0.1;
    cfg.m_devices = 3;
    cfg.cm.cm3_multi_device = true;
    cfg.cm.cm1_bob_announces = true;
    cfg.cm.cm2_encrypt_pe = true;
    protocol::Party alice = protocol::make_alice(cfg, 81);
    protocol::Party bob = protocol::make_bob(cfg, 82);
    protocol::PresharedPad pad(83, cfg.preshared_key_bits);
    auto out = protocol::run_day_cm3(cfg, alice, bob, protocol::null_adversary(), 1, 84, pad);
    ASSERT_FALSE(out.aborted()) << out.transcript.abort->cause;
    ASSERT_EQ(out.device_net_entropy.size(), 3u);
    double total = 0;
    for (double v : out.device_net_entropy) total += v;
    for (double v : out.device_net_entropy) {
        double remaining = total - v;
        EXPECT_GE(remaining + 1e-9,
                  static_cast<double>(out.transcript.pa.t + cfg.security_margin));
    }
}

TEST(Protocol, AnnouncerFlipsUnderBobAnnounces) {
    ProtocolConfig cfg;
    cfg.rounds_per_day = 2000;
    cfg.mu = 0.05;
    cfg.cm.cm1_bob_announces = true;
    auto out = run_one_day(cfg, 31);
    ASSERT_FALSE(out.aborted());
    EXPECT_EQ(out.transcript.pe_announcer, 'B');
    EXPECT_TRUE(out.transcript.announced_alice_inputs.empty());
    EXPECT_FALSE(out.transcript.announced_bob_inputs.empty());
}
