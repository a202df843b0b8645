#include <set>
#include <sstream>

#include "rowflip/cli.hpp"
#include "rowflip/errors.hpp"
#include "rowflip/rng.hpp"

namespace rf::cli {

namespace {

enum Stream : std::uint64_t { kCells = 1, kAttacker, kHammer, kSample, kVerify, kBaseline };

std::vector<double> parse_rates(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("rates: not a number: " + tok);
        }
    }
    if (out.empty()) throw ConfigError("rates: empty list");
    return out;
}

// Every key from_kv and DramConfig::from_kv read. Anything else is a typo.
const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "seed", "model", "width", "dataset", "classes", "blob_h", "blob_w", "train_per_class", "test_per_class",
        "blob_noise", "blob_offset", "blob_scale", "idx_train_images", "idx_train_labels", "idx_test_images",
        "idx_test_labels", "epochs", "train_batch", "lr", "momentum", "weight_decay", "accuracy_floor", "preset",
        "channels", "dimms", "banks", "rows", "row_bytes", "hammer_mode", "density", "cells_per_bank",
        "probabilistic", "attacker_fraction", "template_trials", "p", "p_max", "min_flippable", "target_accuracy",
        "max_iterations", "eval_batch", "batch_seed", "target_fraction", "objective", "target_class", "parallel",
        "chains", "rate", "reboot_toggle", "boot_seed", "verify_sample", "noise_steal", "random_flips",
        "random_trials", "defense_mode", "defense_seeds", "width_factor", "topn_rounds", "rates",
        "sensitivity_seeds", "out"};
    return keys;
}

int positive(const KvConfig& kv, const std::string& key, int fallback) {
    const auto v = kv.get_int(key, fallback);
    if (v < 1) throw ConfigError(key + " must be positive");
    return static_cast<int>(v);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
    for (const auto& [key, value] : kv.values())
        if (!known_keys().count(key)) throw ConfigError("unknown config key: " + key);
    ExperimentConfig c;
    c.seed = kv.get_u64("seed", c.seed);
    c.model = kv.get("model", c.model);
    c.width = positive(kv, "width", c.width);

    c.dataset = kv.get("dataset", c.dataset);
    if (c.dataset != "blobs" && c.dataset != "idx") throw ConfigError("dataset must be blobs or idx");
    c.blobs.classes = positive(kv, "classes", c.blobs.classes);
    c.blobs.input.h = positive(kv, "blob_h", c.blobs.input.h);
    c.blobs.input.w = positive(kv, "blob_w", c.blobs.input.w);
    c.blobs.train_per_class = positive(kv, "train_per_class", c.blobs.train_per_class);
    c.blobs.test_per_class = positive(kv, "test_per_class", c.blobs.test_per_class);
    c.blobs.noise = kv.get_double("blob_noise", 2.0);
    c.blobs.center_offset = kv.get_double("blob_offset", 3.0);
    c.blobs.center_scale = kv.get_double("blob_scale", c.blobs.center_scale);
    c.idx_train_images = kv.get("idx_train_images", "");
    c.idx_train_labels = kv.get("idx_train_labels", "");
    c.idx_test_images = kv.get("idx_test_images", "");
    c.idx_test_labels = kv.get("idx_test_labels", "");

    c.train.epochs = positive(kv, "epochs", 40);
    c.train.batch = positive(kv, "train_batch", c.train.batch);
    c.train.lr = kv.get_double("lr", 0.003);
    c.train.momentum = kv.get_double("momentum", c.train.momentum);
    c.train.weight_decay = kv.get_double("weight_decay", c.train.weight_decay);
    c.train.accuracy_floor = kv.get_double("accuracy_floor", c.train.accuracy_floor);

    c.dram = dram::DramConfig::from_kv(kv);
    c.cells.density = dram::CellSpec::parse_density(kv.get("density", "dense"));
    c.cells.per_bank = kv.get_double("cells_per_bank", c.cells.per_bank);
    c.cells.probabilistic = kv.get_bool("probabilistic", c.cells.probabilistic);
    c.attacker_fraction = kv.get_double("attacker_fraction", c.attacker_fraction);
    if (!(c.attacker_fraction > 0.0 && c.attacker_fraction <= 1.0))
        throw ConfigError("attacker_fraction must be in (0, 1]");
    c.template_trials = positive(kv, "template_trials", c.template_trials);

    auto& s = c.search;
    s.p = positive(kv, "p", s.p);
    s.p_max = positive(kv, "p_max", s.p_max);
    s.min_flippable = positive(kv, "min_flippable", s.min_flippable);
    s.target_accuracy = kv.get_double("target_accuracy", s.target_accuracy);
    s.max_iterations = static_cast<int>(kv.get_int("max_iterations", s.max_iterations));
    s.batch_size = static_cast<std::size_t>(positive(kv, "eval_batch", static_cast<int>(s.batch_size)));
    s.batch_seed = kv.get_u64("batch_seed", s.batch_seed);
    s.target_fraction = kv.get_double("target_fraction", s.target_fraction);
    const std::string objective = kv.get("objective", "untargeted");
    if (objective == "targeted")
        s.objective = search::Objective::Targeted;
    else if (objective != "untargeted")
        throw ConfigError("objective must be untargeted or targeted");
    s.target_class = static_cast<int>(kv.get_int("target_class", s.target_class));
    s.exec = kv.get_bool("parallel", true) ? Exec::Parallel : Exec::Serial;
    c.train.exec = s.exec;
    c.chains = positive(kv, "chains", c.chains);
    c.rate = kv.get_double("rate", c.rate);

    c.reboot_toggle = kv.get_double("reboot_toggle", c.reboot_toggle);
    c.boot_seed = kv.get_u64("boot_seed", c.boot_seed);
    c.verify_sample = static_cast<std::size_t>(kv.get_int("verify_sample", static_cast<std::int64_t>(c.verify_sample)));
    if (c.verify_sample < massage::kVerifySample)
        throw ConfigError("verify_sample must be at least " + std::to_string(massage::kVerifySample));
    c.noise_steal = kv.get_double("noise_steal", c.noise_steal);

    c.random_flips = static_cast<int>(kv.get_int("random_flips", c.random_flips));
    c.random_trials = positive(kv, "random_trials", c.random_trials);
    c.defense_mode = kv.get("defense_mode", c.defense_mode);
    c.defense_seeds = positive(kv, "defense_seeds", c.defense_seeds);
    c.width_factor = positive(kv, "width_factor", c.width_factor);
    c.topn_rounds = positive(kv, "topn_rounds", c.topn_rounds);
    if (kv.has("rates")) c.rates = parse_rates(kv.get("rates", ""));
    c.sensitivity_seeds = positive(kv, "sensitivity_seeds", c.sensitivity_seeds);
    c.out_dir = kv.get("out", c.out_dir);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return from_kv(KvConfig::load(path)); }

std::uint64_t ExperimentConfig::data_seed() const { return seed; }
std::uint64_t ExperimentConfig::train_seed() const { return seed; }
std::uint64_t ExperimentConfig::cell_seed() const { return derive_seed(seed, kCells); }
std::uint64_t ExperimentConfig::attacker_seed() const { return derive_seed(seed, kAttacker); }
std::uint64_t ExperimentConfig::hammer_seed() const { return derive_seed(seed, kHammer); }
std::uint64_t ExperimentConfig::sample_seed() const { return derive_seed(seed, kSample); }
std::uint64_t ExperimentConfig::verify_seed() const { return derive_seed(seed, kVerify); }
std::uint64_t ExperimentConfig::baseline_seed() const { return derive_seed(seed, kBaseline); }

qnn::Architecture build_architecture(const std::string& spec, qnn::Shape3 input, int width) {
    if (width < 1) throw ConfigError("width must be positive");
    std::vector<std::string> toks;
    std::istringstream in(spec);
    std::string t;
    while (std::getline(in, t, ','))
        if (!t.empty()) toks.push_back(t);
    if (toks.empty() || toks.back().rfind("fc", 0) != 0) throw ConfigError("model must end with an fc layer: " + spec);

    auto count = [&](const std::string& tok, std::size_t skip) {
        try {
            std::size_t pos = 0;
            const int n = std::stoi(tok.substr(skip), &pos);
            if (pos + skip != tok.size() || n < 1) throw std::invalid_argument(tok);
            return n;
        } catch (const std::exception&) {
            throw ConfigError("model layer has no valid size: " + tok);
        }
    };

    qnn::ModelBuilder b(input);
    bool flat = input.h == 1 && input.w == 1;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const std::string& tok = toks[i];
        const bool last = i + 1 == toks.size();
        if (tok.rfind("conv", 0) == 0) {
            if (flat) throw ConfigError("conv after fc in model: " + spec);
            b.conv(count(tok, 4) * width, 3, 1, 1).relu();
        } else if (tok == "pool") {
            if (flat) throw ConfigError("pool after fc in model: " + spec);
            b.maxpool(2, 2);
        } else if (tok.rfind("fc", 0) == 0) {
            if (!flat) b.flatten();
            flat = true;
            if (last) {
                b.fc(count(tok, 2));
            } else {
                b.fc(count(tok, 2) * width).relu();
            }
        } else {
            throw ConfigError("unknown model layer: " + tok);
        }
    }
    return b.build();
}

qnn::Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset == "idx") {
        for (const auto* p : {&cfg.idx_train_images, &cfg.idx_train_labels, &cfg.idx_test_images, &cfg.idx_test_labels})
            if (p->empty()) throw ConfigError("idx dataset needs idx_train_images, idx_train_labels, idx_test_images and idx_test_labels");
        return qnn::load_idx(cfg.idx_train_images, cfg.idx_train_labels, cfg.idx_test_images, cfg.idx_test_labels);
    }
    qnn::BlobSpec b = cfg.blobs;
    b.seed = cfg.data_seed();
    return qnn::make_blobs(b);
}

dram::Dram make_dram(const ExperimentConfig& cfg) {
    dram::CellSpec cs = cfg.cells;
    cs.seed = cfg.cell_seed();
    dram::Dram d(cfg.dram, dram::synthesize_cells(cfg.dram, cs), cfg.hammer_seed());
    d.assign_attacker(cfg.attacker_fraction, cfg.attacker_seed());
    return d;
}

}  // namespace rf::cli
