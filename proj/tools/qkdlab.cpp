// Command-line front end. Subcommands:
//   run-protocol   multi-day honest protocol campaigns
//   attack         adversarial scenarios (pe, abort, impostor, bhk, hr, qre-*)
//   verify-pa      exhaustive hashing bound checks; exit 3 on any violation
//   sweep          cross-product parameter grids with derived sub-seeds
//   report         re-derive and check the aggregates of a records file
//
// A config file loads first; explicit flags override it. Exit codes:
// 0 success, 2 configuration error, 3 experiment-level failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "qkdlab/harness.hpp"

namespace {

using qkdlab::harness::ExperimentConfig;
using qkdlab::harness::MetricsReport;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitExperiment = 3;

uint64_t seed_sentinel = 0;  // CLI11 needs an lvalue; presence tracked via count()

void add_common_options(CLI::App* cmd, ExperimentConfig& cfg) {
    cmd->add_option("--config", "flat key-value config file with [sections]");
    cmd->add_option("--seed", seed_sentinel, "master seed (required here or in the config)");
    cmd->add_option("--trials", cfg.trials, "independent trials");
    cmd->add_option("--out", cfg.out_dir, "output directory (QKDLAB_OUTPUT_DIR overrides)");
    cmd->add_option("--label", cfg.label, "output file stem");
}

void add_protocol_options(CLI::App* cmd, ExperimentConfig& cfg) {
    auto& p = cfg.proto;
    cmd->add_option("--M", p.rounds_per_day, "rounds per day");
    cmd->add_option("--mu", p.mu, "reveal probability");
    cmd->add_option("--days", p.days, "days per campaign");
    cmd->add_option("--visibility", p.visibility, "singlet visibility");
    cmd->add_option("--chsh-threshold", p.chsh_threshold, "abort below this test value");
    cmd->add_option("--noise-tolerance", p.noise_tolerance, "design error rate for reconciliation");
    cmd->add_option("--security-margin", p.security_margin, "extra shortening l");
    cmd->add_option("--m-devices", p.m_devices, "device pairs per side");
    cmd->add_flag("--cm1", p.cm.cm1_bob_announces, "outputs announced by Bob only");
    cmd->add_flag("--cm2", p.cm.cm2_encrypt_pe, "encrypt estimation announcements");
    cmd->add_flag("--cm3", p.cm.cm3_multi_device, "multi-device day with shortened key");
    cmd->add_flag("--cm4", p.cm.cm4_secret_pa, "secret amplification function");
    cmd->add_option("--alice-key-weight", p.weights.alice_key, "P(Alice picks the key setting)");
    cmd->add_option("--bob-test0-weight", p.weights.bob_test0, "P(Bob picks test setting 0)");
    cmd->add_option("--bob-test1-weight", p.weights.bob_test1, "P(Bob picks test setting 1)");
}

int finish(const ExperimentConfig& cfg, const MetricsReport& rep) {
    std::string stem = cfg.label.empty() ? cfg.scenario : cfg.label;
    auto [jpath, cpath] = qkdlab::harness::write_report(rep, qkdlab::harness::output_dir(cfg), stem);
    std::cout << rep.to_csv();
    std::cout << "records: " << jpath << "\nsummary: " << cpath << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    // The config file must load before flag parsing so flags can override
    // it; find it with a pre-scan.
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];

    ExperimentConfig cfg;
    try {
        if (!config_path.empty())
            qkdlab::harness::apply_settings(cfg, qkdlab::harness::parse_config_file(config_path));
    } catch (const qkdlab::harness::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    CLI::App app{"device-memory attack laboratory for key distribution protocols"};
    app.require_subcommand(1);
    std::string scenario_arg;
    std::vector<std::string> sweep_params;
    std::string report_path;

    auto* run = app.add_subcommand("run-protocol", "honest multi-day campaigns");
    add_common_options(run, cfg);
    add_protocol_options(run, cfg);

    auto* attack = app.add_subcommand("attack", "adversarial scenarios");
    attack->add_option("scenario", scenario_arg,
                       "pe | abort | impostor | bhk | hr | qre-lengthleak | qre-procrustean | qre-abort")
        ->required();
    add_common_options(attack, cfg);
    add_protocol_options(attack, cfg);
    attack->add_option("--N-target", cfg.n_target, "key bits the schedule aims to leak");
    attack->add_option("--abort-bits", cfg.abort_bits, "abort-code width (0: derive from days)");
    bool honest_charlie = false;
    attack->add_flag("--honest-charlie", honest_charlie, "impostor: counterparty stays honest");
    attack->add_option("--bhk-M", cfg.bhk.pair_groups, "bhk: group count M");
    attack->add_option("--N", cfg.bhk.input_range, "bhk: input range N");
    attack->add_flag("--bhk-restrict", cfg.bhk.restrict_announcements,
                     "bhk: publish only inputs differing by 0 or +-1");
    attack->add_option("--hr-runs", cfg.hr.runs, "hr: protocol runs");
    attack->add_option("--hr-day1-target", cfg.hr.day1_key_target, "hr: expected first-run key length");
    attack->add_flag("--hr-full-sessions", cfg.hr.full_sessions, "hr: sample outcomes per device");
    attack->add_option("--qre-raw-bits", cfg.qre.raw_bits, "qre: stored raw prefix length");
    attack->add_option("--qre-rounds", cfg.qre.rounds_per_iter, "qre: rounds per iteration");
    attack->add_option("--qre-fixed-length", cfg.qre.fixed_length, "qre: Procrustean length L");

    auto* verify = app.add_subcommand("verify-pa", "hashing distance/collision bound checks");
    add_common_options(verify, cfg);
    verify->add_option("--n", cfg.pa_n, "input length");
    verify->add_option("--t", cfg.pa_t, "output length");
    verify->add_option("--max-n", cfg.pa_max_n, "sweep all n <= max-n, t <= n");

    auto* sweep = app.add_subcommand("sweep", "cross-product parameter grid");
    sweep->add_option("--scenario", scenario_arg, "scenario to run per cell");
    add_common_options(sweep, cfg);
    add_protocol_options(sweep, cfg);
    sweep->add_option("--param", sweep_params, "axis as key=v1,v2,... (repeatable)")->required();

    auto* report = app.add_subcommand("report", "check a records file's aggregates");
    report->add_option("file", report_path, "records JSON file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (report->parsed()) {
            std::string message;
            bool ok = qkdlab::harness::verify_report_file(report_path, message);
            std::cout << (ok ? "ok: " : "FAIL: ") << message << "\n";
            return ok ? kExitOk : kExitExperiment;
        }
        for (CLI::App* sub : {run, attack, verify, sweep})
            if (sub->parsed() && sub->count("--seed")) cfg.seed = seed_sentinel;
        if (attack->parsed() && honest_charlie) cfg.charlie_corrupt = false;
        if (!scenario_arg.empty()) cfg.scenario = scenario_arg;
        // the many-pairs scenario has no per-day rounds; --M names its group count
        if (attack->parsed() && cfg.scenario == "bhk" && attack->count("--M"))
            cfg.bhk.pair_groups = static_cast<int>(cfg.proto.rounds_per_day);

        if (run->parsed()) {
            cfg.scenario = "run-protocol";
            return finish(cfg, qkdlab::harness::exp_run_protocol(cfg));
        }
        if (attack->parsed()) return finish(cfg, qkdlab::harness::run_scenario(cfg));
        if (verify->parsed()) {
            cfg.scenario = "verify-pa";
            bool ok = false;
            MetricsReport rep = qkdlab::harness::exp_verify_pa(cfg, ok);
            int rc = finish(cfg, rep);
            if (!ok) {
                std::cout << "FAIL: a hashing bound was violated\n";
                return kExitExperiment;
            }
            return rc;
        }
        if (sweep->parsed()) {
            std::vector<qkdlab::harness::SweepAxis> grid;
            for (const auto& spec : sweep_params) {
                auto eq = spec.find('=');
                if (eq == std::string::npos)
                    throw qkdlab::harness::ParseError("--param expects key=v1,v2,...: " + spec);
                qkdlab::harness::SweepAxis axis;
                axis.key = spec.substr(0, eq);
                std::string rest = spec.substr(eq + 1);
                size_t pos = 0;
                while (true) {
                    size_t comma = rest.find(',', pos);
                    axis.values.push_back(rest.substr(pos, comma == std::string::npos
                                                               ? std::string::npos
                                                               : comma - pos));
                    if (comma == std::string::npos) break;
                    pos = comma + 1;
                }
                grid.push_back(std::move(axis));
            }
            if (cfg.label.empty()) cfg.label = "sweep";
            return finish(cfg, qkdlab::harness::exp_sweep(cfg, grid));
        }
    } catch (const qkdlab::harness::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const qkdlab::protocol::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitExperiment;
    }
    return kExitOk;
}
