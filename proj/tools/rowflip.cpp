// Command-line front end. Every subcommand reads the same key = value
// config; flags override individual keys.
#include <algorithm>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "rowflip/cli.hpp"
#include "rowflip/errors.hpp"

namespace fs = std::filesystem;
using namespace rf;

namespace {

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    double rate = -1.0;
    int chains = 0;
    std::string mode;
    int target_class = -1;
    std::string checkpoint;
    std::string profile;
    std::vector<std::string> chain_files;
};

cli::ExperimentConfig resolve(const Flags& f, const CLI::App& app) {
    KvConfig kv = f.config.empty() ? KvConfig{} : KvConfig::load(f.config);
    if (app.count("--seed")) kv.set("seed", std::to_string(f.seed));
    if (!f.out.empty()) kv.set("out", f.out);
    if (f.rate >= 0.0) kv.set("rate", std::to_string(f.rate));
    if (f.chains > 0) kv.set("chains", std::to_string(f.chains));
    if (!f.mode.empty()) kv.set("defense_mode", f.mode);
    if (f.target_class >= 0) {
        kv.set("objective", "targeted");
        kv.set("target_class", std::to_string(f.target_class));
    }
    cli::ExperimentConfig cfg = cli::ExperimentConfig::from_kv(kv);
    fs::create_directories(cfg.out_dir);
    return cfg;
}

std::string in_out(const cli::ExperimentConfig& cfg, const std::string& given, const std::string& name) {
    return given.empty() ? (fs::path(cfg.out_dir) / name).string() : given;
}

std::string out_path(const cli::ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rowflip: targeted DRAM bit-flip attacks on quantized networks, simulated"};
    app.require_subcommand(1);
    Flags f;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "key = value config file");
        sub->add_option("--seed", f.seed, "global seed");
        sub->add_option("--out", f.out, "output directory");
    };

    auto* train = app.add_subcommand("train", "train and quantize the model");
    auto* templ = app.add_subcommand("template", "synthesize DRAM cells and template attacker memory");
    auto* search = app.add_subcommand("search", "search bit chains against a flip profile");
    auto* exploit = app.add_subcommand("exploit", "run the online phase for searched chains");
    auto* baseline = app.add_subcommand("random-baseline", "accuracy drop from uniformly random bit flips");
    auto* defense = app.add_subcommand("defense", "defense harnesses");
    auto* sensitivity = app.add_subcommand("sensitivity", "attack across profile sampling rates");
    auto* pipeline = app.add_subcommand("pipeline", "train, template, search and exploit in one run");
    for (auto* s : {train, templ, search, exploit, baseline, defense, sensitivity, pipeline}) common(s);
    for (auto* s : {search, exploit, baseline, defense, sensitivity})
        s->add_option("--checkpoint", f.checkpoint, "QNN1 checkpoint (default <out>/model.qnn1)");
    for (auto* s : {search, defense, sensitivity})
        s->add_option("--profile", f.profile, "profile CSV (default <out>/profile.csv)");
    exploit->add_option("--profile", f.profile, "profile the chains were searched with (default <out>/search_profile.csv)");
    exploit->add_option("--chain", f.chain_files, "chain files, tried in order (default <out>/chain*.jsonl)");
    for (auto* s : {search, pipeline}) {
        s->add_option("--rate", f.rate, "profile sampling rate");
        s->add_option("--chains", f.chains, "alternative chains to search");
    }
    for (auto* s : {search, exploit, pipeline}) s->add_option("--target-class", f.target_class, "targeted objective");
    defense->add_option("--mode", f.mode, "width | topn | layer-lock")->check(CLI::IsMember({"width", "topn", "layer-lock"}));

    CLI11_PARSE(app, argc, argv);

    try {
        const CLI::App* sub = app.get_subcommands().front();
        const cli::ExperimentConfig cfg = resolve(f, *sub);
        auto model = [&] { return qnn::load_checkpoint(in_out(cfg, f.checkpoint, "model.qnn1")); };

        if (sub == train) {
            const auto data = cli::load_dataset(cfg);
            const auto r = cli::cmd_train(cfg, data);
            qnn::save_checkpoint(r.model, out_path(cfg, "model.qnn1"));
            cli::write_text(out_path(cfg, "train.json"), cli::to_json(r));
            std::cout << "clean test accuracy " << r.clean_acc << ", " << r.weight_pages << " weight pages\n";
        } else if (sub == templ) {
            const auto r = cli::cmd_template(cfg);
            r.profile.save(out_path(cfg, "profile.csv"));
            cli::write_text(out_path(cfg, "template.json"), cli::to_json(r));
            std::cout << r.profile.size() << " profile entries, estimated templating time " << r.estimated_seconds
                      << " s\n";
        } else if (sub == search) {
            const auto data = cli::load_dataset(cfg);
            const auto profile = dram::FlipProfile::load(in_out(cfg, f.profile, "profile.csv"));
            const auto m = model();
            const auto r = cli::cmd_search(cfg, m, data, profile);
            const auto img = image::WeightImage::build(m);
            r.profile.save(out_path(cfg, "search_profile.csv"));
            bool any = false;
            for (std::size_t i = 0; i < r.chains.size(); ++i) {
                const auto n = std::to_string(i + 1);
                image::write_chain(out_path(cfg, "chain" + n + ".jsonl"), r.chains[i].records(img));
                cli::write_text(out_path(cfg, "trace" + n + ".csv"), search::trace_csv(r.chains[i]));
                std::cout << "chain " << n << ": " << r.chains[i].steps.size() << " flips, accuracy "
                          << r.chains[i].terminal_acc() << (r.chains[i].feasible ? "" : " (infeasible)") << '\n';
                any = any || r.chains[i].feasible;
            }
            cli::write_text(out_path(cfg, "search.json"), cli::to_json(r));
            if (!any) return cli::kExitInfeasible;
        } else if (sub == exploit) {
            const auto data = cli::load_dataset(cfg);
            const auto profile = dram::FlipProfile::load(in_out(cfg, f.profile, "search_profile.csv"));
            std::vector<std::string> files = f.chain_files;
            for (int i = 1; files.empty() || i <= cfg.chains; ++i) {
                if (!f.chain_files.empty()) break;
                const auto p = out_path(cfg, "chain" + std::to_string(i) + ".jsonl");
                if (!fs::exists(p)) break;
                files.push_back(p);
            }
            if (files.empty()) throw ConfigError("no chain files found in " + cfg.out_dir);
            std::vector<search::BitChain> chains;
            for (const auto& p : files) chains.push_back(cli::chain_from_records(image::read_chain(p), cfg.search));
            const auto r = cli::cmd_exploit(cfg, model(), data, profile, chains);
            cli::write_text(out_path(cfg, "exploit.json"), cli::to_json(r));
            cli::write_text(out_path(cfg, "plan.json"), r.plan_json);
            std::cout << "chain " << r.chain_used + 1 << ": " << r.flips_achieved << " flips, accuracy " << r.clean_acc
                      << " -> " << r.achieved_acc << ", estimated hammering " << r.hammer_estimated_seconds << " s\n";
        } else if (sub == baseline) {
            const auto data = cli::load_dataset(cfg);
            const auto r = cli::cmd_random_flip_baseline(model(), data, cfg.random_flips, cfg.random_trials,
                                                         cfg.baseline_seed());
            cli::write_text(out_path(cfg, "baseline.json"), cli::to_json(r));
            cli::write_text(out_path(cfg, "baseline_drops.csv"), cli::drops_csv(r));
            std::cout << "median drop " << r.median_drop << " over " << r.drops.size() << " trials\n";
        } else if (sub == defense) {
            const auto data = cli::load_dataset(cfg);
            const auto profile = dram::FlipProfile::load(in_out(cfg, f.profile, "profile.csv"));
            const auto r = cli::cmd_defense(cfg, cfg.defense_mode, model(), data, profile);
            cli::write_text(out_path(cfg, "defense_" + r.mode + ".json"), cli::to_json(r));
            for (const auto& run : r.runs) {
                std::string name = run.label;
                std::replace(name.begin(), name.end(), '/', '_');
                cli::write_text(out_path(cfg, "defense_" + r.mode + "_" + name + ".csv"), run.trace);
                std::cout << run.label << ": " << run.chain_length << " flips" << (run.feasible ? "" : " (infeasible)")
                          << '\n';
            }
        } else if (sub == sensitivity) {
            const auto data = cli::load_dataset(cfg);
            const auto profile = dram::FlipProfile::load(in_out(cfg, f.profile, "profile.csv"));
            const auto r = cli::cmd_sensitivity(cfg, model(), data, profile);
            cli::write_text(out_path(cfg, "sensitivity.json"), cli::to_json(r));
            for (std::size_t i = 0; i < cfg.rates.size(); ++i)
                std::cout << "rate " << cfg.rates[i] << ": " << r.feasible_count[i] << "/" << cfg.sensitivity_seeds
                          << " feasible, median length " << r.median_length[i] << '\n';
        } else if (sub == pipeline) {
            const auto r = cli::run_pipeline(cfg);
            std::cout << "accuracy " << r.clean_acc << " -> " << r.achieved_acc << " with " << r.flips_achieved
                      << " flips\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "rowflip: " << e.what() << '\n';
        return cli::exit_code_for(e);
    }
    return cli::kExitOk;
}
