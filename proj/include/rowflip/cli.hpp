#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "rowflip/dram.hpp"
#include "rowflip/image.hpp"
#include "rowflip/kv_config.hpp"
#include "rowflip/massage.hpp"
#include "rowflip/qnn.hpp"
#include "rowflip/search.hpp"

namespace rf::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitRuntime = 1,
    kExitConfig = 2,
    kExitInfeasible = 3,
    kExitPrecision = 4,
    kExitUnsatisfiable = 5,
    kExitStaleMode = 6,
    kExitTraining = 7,
};

int exit_code_for(const std::exception& e);

struct ExperimentConfig {
    // Comma-separated layers: convN (3x3, pad 1, relu), pool (2x2 max),
    // fcN (relu unless last). The last fc is the class count.
    std::string model = "conv6,pool,fc256,fc64,fc10";
    int width = 1;  // multiplies every hidden channel and unit count

    std::string dataset = "blobs";  // or idx
    qnn::BlobSpec blobs;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
    qnn::TrainConfig train;

    dram::DramConfig dram = dram::DramConfig::quad();
    dram::CellSpec cells;
    double attacker_fraction = 0.2;
    int template_trials = 1;

    search::SearchConfig search;
    int chains = 3;
    double rate = 1.0;

    std::uint64_t seed = 7;

    // exploit
    double reboot_toggle = -1.0;  // < 0: no reboot before the online phase
    std::uint64_t boot_seed = 1;
    std::size_t verify_sample = massage::kVerifySample;
    double noise_steal = 0.0;

    int random_flips = 100;
    int random_trials = 30;

    std::string defense_mode = "width";
    int defense_seeds = 5;
    int width_factor = 2;
    int topn_rounds = 10;

    std::vector<double> rates{1.0, 0.1, 0.01, 0.001};
    int sensitivity_seeds = 5;

    std::string out_dir = "out";

    static ExperimentConfig from_kv(const KvConfig& kv);
    static ExperimentConfig load(const std::string& path);

    // Every stream derives from `seed`.
    std::uint64_t data_seed() const;
    std::uint64_t train_seed() const;
    std::uint64_t cell_seed() const;
    std::uint64_t attacker_seed() const;
    std::uint64_t hammer_seed() const;
    std::uint64_t sample_seed() const;
    std::uint64_t verify_seed() const;
    std::uint64_t baseline_seed() const;
};

qnn::Architecture build_architecture(const std::string& spec, qnn::Shape3 input, int width = 1);
qnn::Dataset load_dataset(const ExperimentConfig& cfg);
// Cells synthesized and attacker memory assigned; nothing templated yet.
dram::Dram make_dram(const ExperimentConfig& cfg);

// ---- commands ----

struct TrainReport {
    qnn::QuantizedModel model;
    double clean_acc = 0.0;
    std::size_t parameters = 0;
    std::size_t weight_pages = 0;
};
TrainReport cmd_train(const ExperimentConfig& cfg, const qnn::Dataset& data);

struct TemplateReport {
    dram::FlipProfile profile;
    std::size_t rows_templated = 0;
    std::size_t cells_total = 0;
    double estimated_seconds = 0.0;  // entries / 2.2 flips per second
    double estimated_seconds_per_bank = 0.0;  // the same rate over one whole bank
};
TemplateReport cmd_template(const ExperimentConfig& cfg);

struct SearchReport {
    std::vector<search::BitChain> chains;
    dram::FlipProfile profile;  // the profile after sampling at `rate`
    std::size_t profile_entries = 0;
    double rate = 1.0;
};
SearchReport cmd_search(const ExperimentConfig& cfg, const qnn::QuantizedModel& m, const qnn::Dataset& data,
                        const dram::FlipProfile& profile);

struct AttackReport {
    std::size_t chain_used = 0;  // index into the candidate chains
    std::size_t satisfiability_retries = 0;
    std::vector<image::TargetBit> bits;
    std::vector<double> step_acc;
    double clean_acc = 0.0;
    double recorded_acc = 0.0;   // terminal accuracy the search recorded
    double achieved_acc = 0.0;   // batch accuracy of the model read back from DRAM
    double achieved_test_acc = 0.0;
    std::size_t flips_attempted = 0;
    std::size_t flips_achieved = 0;
    bool rebooted = false;
    bool template_valid = true;
    bool retemplated = false;
    double retemplate_work_ratio = 0.0;
    double retemplate_estimated_seconds = 0.0;
    double memory_fraction = 0.0;
    std::size_t released_frames = 0;
    std::size_t hammer_actions = 0;
    double hammer_estimated_seconds = 0.0;
    std::string plan_json;
};
// Online phase on a fresh DRAM built from the config's seeds. Chains are
// tried in order until one can be placed.
AttackReport cmd_exploit(const ExperimentConfig& cfg, const qnn::QuantizedModel& m, const qnn::Dataset& data,
                         const dram::FlipProfile& profile, const std::vector<search::BitChain>& chains);

struct BaselineReport {
    std::vector<double> drops;
    double median_drop = 0.0;
    int flips = 0;
};
BaselineReport cmd_random_flip_baseline(const qnn::QuantizedModel& m, const qnn::Dataset& data, int n, int trials,
                                        std::uint64_t seed);

struct DefenseRun {
    std::string label;
    std::size_t chain_length = 0;
    bool feasible = false;
    double terminal_acc = 0.0;
    std::string trace;  // per-iteration CSV
};
struct DefenseReport {
    std::string mode;
    std::vector<DefenseRun> runs;
    double base_clean_acc = 0.0;
    double wide_clean_acc = 0.0;
    double base_median = 0.0;
    double wide_median = 0.0;
};
// width: base vs width_factor-wide model, one chain per batch seed.
// topn: protection rounds on `m`. layer-lock: first and last layers masked.
DefenseReport cmd_defense(const ExperimentConfig& cfg, const std::string& mode, const qnn::QuantizedModel& m,
                          const qnn::Dataset& data, const dram::FlipProfile& profile);

struct SensitivityRun {
    double rate = 1.0;
    std::uint64_t seed = 0;
    std::size_t profile_entries = 0;
    std::size_t chain_length = 0;
    bool feasible = false;
    double terminal_acc = 0.0;
    bool exploited = false;
    double achieved_acc = 0.0;
    std::string outcome;  // success, infeasible, or the exploit failure
};
struct SensitivityReport {
    std::vector<SensitivityRun> runs;
    std::vector<double> median_length;  // per rate, in cfg.rates order
    std::vector<std::size_t> feasible_count;
};
SensitivityReport cmd_sensitivity(const ExperimentConfig& cfg, const qnn::QuantizedModel& m, const qnn::Dataset& data,
                                  const dram::FlipProfile& profile);

// A chain read back from a chain file. Feasible when its last expected
// accuracy meets the configured objective.
search::BitChain chain_from_records(const std::vector<image::ChainRecord>& records, const search::SearchConfig& cfg);

// ---- reports (JSON text, no wall-clock values) ----

std::string to_json(const TrainReport& r);
std::string to_json(const TemplateReport& r);
std::string to_json(const SearchReport& r);
std::string to_json(const AttackReport& r);
std::string to_json(const BaselineReport& r);
std::string to_json(const DefenseReport& r);
std::string to_json(const SensitivityReport& r);
std::string drops_csv(const BaselineReport& r);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// train -> template -> search -> exploit, each output written under out_dir.
// Returns the exploit report.
AttackReport run_pipeline(const ExperimentConfig& cfg);

}  // namespace rf::cli
