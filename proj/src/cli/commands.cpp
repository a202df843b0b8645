#include <algorithm>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "rowflip/cli.hpp"
#include "rowflip/errors.hpp"
#include "rowflip/rng.hpp"

namespace rf::cli {

namespace {

constexpr std::uint64_t kNoiseStream = 101;

// Infeasible runs count as needing more flips than the budget allows.
double effective_length(const search::BitChain& c, const search::SearchConfig& s) {
    return c.feasible ? double(c.steps.size()) : double(s.max_iterations + 1);
}

std::string path_in(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

}  // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitConfig;
    if (dynamic_cast<const Infeasible*>(&e)) return kExitInfeasible;
    if (dynamic_cast<const PrecisionViolation*>(&e)) return kExitPrecision;
    if (dynamic_cast<const Unsatisfiable*>(&e) || dynamic_cast<const ThresholdViolation*>(&e) ||
        dynamic_cast<const MappingMismatch*>(&e))
        return kExitUnsatisfiable;
    if (dynamic_cast<const StaleModeError*>(&e)) return kExitStaleMode;
    if (dynamic_cast<const TrainingFailure*>(&e) || dynamic_cast<const DegenerateQuantizerError*>(&e))
        return kExitTraining;
    return kExitRuntime;
}

TrainReport cmd_train(const ExperimentConfig& cfg, const qnn::Dataset& data) {
    const qnn::Architecture arch = build_architecture(cfg.model, data.input, cfg.width);
    if (arch.class_count != data.class_count)
        throw ConfigError("model ends in " + std::to_string(arch.class_count) + " outputs but the dataset has " +
                          std::to_string(data.class_count) + " classes");
    qnn::TrainResult r = qnn::train_small(arch, data, cfg.train, cfg.train_seed());
    TrainReport rep;
    rep.clean_acc = r.test_acc;
    rep.parameters = arch.parameter_count();
    rep.weight_pages = (r.model.weight_count() + qnn::kPageBytes - 1) / qnn::kPageBytes;
    rep.model = std::move(r.model);
    return rep;
}

TemplateReport cmd_template(const ExperimentConfig& cfg) {
    dram::Dram d = make_dram(cfg);
    const auto rows = dram::attacker_template_rows(d);
    TemplateReport rep;
    rep.profile = dram::template_rows(d, rows, cfg.template_trials);
    rep.rows_templated = rows.size();
    rep.cells_total = d.cells().size();
    rep.estimated_seconds = double(rep.profile.size()) / dram::kTemplatedFlipsPerSecond;
    if (!rows.empty()) {
        const double rows_per_bank = double(cfg.dram.rows_per_bank);
        rep.estimated_seconds_per_bank = rep.estimated_seconds * rows_per_bank / double(rows.size());
    }
    return rep;
}

SearchReport cmd_search(const ExperimentConfig& cfg, const qnn::QuantizedModel& m, const qnn::Dataset& data,
                        const dram::FlipProfile& profile) {
    SearchReport rep;
    rep.rate = cfg.rate;
    rep.profile = dram::sample_profile(profile, cfg.rate, cfg.sample_seed());
    rep.profile_entries = rep.profile.size();
    const search::EvalBatch batch = search::make_eval_batch(data, cfg.search);
    rep.chains = search::search_chains(m, batch, &rep.profile, cfg.search, cfg.chains);
    return rep;
}

search::BitChain chain_from_records(const std::vector<image::ChainRecord>& records, const search::SearchConfig& cfg) {
    search::BitChain c;
    for (const auto& r : records) {
        search::ChainStep s;
        s.bit = r.bit;
        s.acc = r.expected_acc;
        c.steps.push_back(s);
    }
    if (!c.steps.empty()) {
        const double acc = c.steps.back().acc;
        c.feasible = cfg.objective == search::Objective::Untargeted ? acc <= cfg.target_accuracy
                                                                    : acc >= cfg.target_fraction;
    }
    c.stop_reason = "read from chain file";
    return c;
}

AttackReport cmd_exploit(const ExperimentConfig& cfg, const qnn::QuantizedModel& m, const qnn::Dataset& data,
                         const dram::FlipProfile& profile, const std::vector<search::BitChain>& chains) {
    if (std::none_of(chains.begin(), chains.end(), [](const search::BitChain& c) { return c.feasible; }))
        throw Infeasible("no feasible chain to exploit");

    AttackReport rep;
    dram::Dram d = make_dram(cfg);
    const image::WeightImage img = image::WeightImage::build(m);
    const search::EvalBatch batch = search::make_eval_batch(data, cfg.search);
    rep.clean_acc = qnn::loss_and_accuracy(m, batch.x, batch.y, cfg.search.exec).acc;

    if (cfg.reboot_toggle >= 0.0) {
        d.reboot(cfg.boot_seed, cfg.reboot_toggle);
        rep.rebooted = true;
    }

    // 1. Is the offline profile still right about directions?
    const massage::VerifyResult v = massage::verify_template(d, profile, cfg.verify_sample, cfg.verify_seed());
    rep.template_valid = v.valid;
    dram::FlipProfile working = profile;
    if (!v.valid) {
        std::set<int> needed;
        for (const auto& c : chains)
            if (c.feasible)
                for (const auto& s : c.steps) needed.insert(s.bit.bop);
        massage::RetemplateResult rt = massage::retemplate(d, profile, needed);
        working = std::move(rt.profile);
        rep.retemplated = true;
        rep.retemplate_work_ratio = rt.work_ratio();
        rep.retemplate_estimated_seconds = rt.estimated_seconds();
    }

    // 2. Place the first chain the (possibly corrected) profile satisfies.
    massage::MappingPlan plan;
    std::optional<std::size_t> used;
    std::string last_failure;
    std::size_t last_index = 0;
    for (std::size_t i = 0; i < chains.size() && !used; ++i) {
        if (!chains[i].feasible) continue;
        try {
            plan = massage::plan_mapping(chains[i].bits(), working, d, {massage::kRecyclingThreshold, d.config().hammer_mode});
            used = i;
        } catch (const Unsatisfiable& e) {
            ++rep.satisfiability_retries;
            last_failure = e.what();
            last_index = e.failed;
        }
    }
    if (!used) throw Unsatisfiable("no candidate chain can be placed; last: " + last_failure, last_index);
    const search::BitChain& chain = chains[*used];
    rep.chain_used = *used;
    rep.bits = chain.bits();
    for (const auto& s : chain.steps) rep.step_acc.push_back(s.acc);
    rep.recorded_acc = chain.terminal_acc();
    rep.flips_attempted = chain.steps.size();
    rep.memory_fraction = plan.memory_fraction;

    // 3. Aggressors, page positioning, hammering.
    const massage::AggressorPlan agg = massage::plan_aggressors(plan, d);
    rep.plan_json = massage::plan_json(plan, agg);
    massage::PageFrameCache cache;
    massage::release_and_remap(cache, plan, img, d, {cfg.noise_steal, derive_seed(cfg.seed, kNoiseStream)});
    rep.released_frames = massage::release_unneeded(d, agg);
    const massage::HammerReport hr = massage::precise_hammer(d, agg);
    rep.hammer_actions = hr.actions;
    rep.hammer_estimated_seconds = hr.estimated_seconds();

    // 4. The victim reloads its pages from DRAM.
    image::WeightImage after = img;
    for (const auto& e : plan.entries) {
        const auto before = img.page(e.pgid);
        const auto now = d.read_page(e.pfn);
        for (std::size_t b = 0; b < now.size(); ++b)
            rep.flips_achieved += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(before[b] ^ now[b])));
        after.set_page(e.pgid, now);
    }
    const qnn::QuantizedModel attacked = after.to_model();
    rep.achieved_acc = qnn::loss_and_accuracy(attacked, batch.x, batch.y, cfg.search.exec).acc;
    rep.achieved_test_acc = cfg.search.objective == search::Objective::Targeted
                                ? search::class_fraction(attacked, data.test_x, cfg.search.target_class, cfg.search.exec)
                                : qnn::loss_and_accuracy(attacked, data.test_x, data.test_y, cfg.search.exec).acc;
    if (rep.flips_achieved != rep.flips_attempted)
        throw PrecisionViolation("read back " + std::to_string(rep.flips_achieved) + " flipped bits, chain has " +
                                 std::to_string(rep.flips_attempted));
    if (rep.achieved_acc != rep.recorded_acc)
        throw Error("attacked model scores " + std::to_string(rep.achieved_acc) + ", chain recorded " +
                    std::to_string(rep.recorded_acc));
    return rep;
}

BaselineReport cmd_random_flip_baseline(const qnn::QuantizedModel& m, const qnn::Dataset& data, int n, int trials,
                                        std::uint64_t seed) {
    BaselineReport rep;
    rep.flips = n;
    rep.drops = search::random_flip_drops(m, data.test_x, data.test_y, n, trials, seed);
    rep.median_drop = search::median(rep.drops);
    return rep;
}

DefenseReport cmd_defense(const ExperimentConfig& cfg, const std::string& mode, const qnn::QuantizedModel& m,
                          const qnn::Dataset& data, const dram::FlipProfile& profile) {
    DefenseReport rep;
    rep.mode = mode;
    search::EvalBatch batch = search::make_eval_batch(data, cfg.search);
    rep.base_clean_acc = qnn::loss_and_accuracy(m, data.test_x, data.test_y, cfg.search.exec).acc;

    auto record = [&](const std::string& label, const search::BitChain& c) {
        rep.runs.push_back({label, c.steps.size(), c.feasible, c.terminal_acc(), search::trace_csv(c)});
    };

    if (mode == "width") {
        ExperimentConfig wide_cfg = cfg;
        wide_cfg.width = cfg.width * cfg.width_factor;
        const TrainReport wide = cmd_train(wide_cfg, data);
        rep.wide_clean_acc = wide.clean_acc;
        std::vector<double> base_len, wide_len;
        for (int s = 1; s <= cfg.defense_seeds; ++s) {
            search::SearchConfig sc = cfg.search;
            sc.batch_seed = static_cast<std::uint64_t>(s);
            const search::EvalBatch b = search::make_eval_batch(data, sc);
            const auto cb = search::search_chain(m, b, &profile, sc);
            const auto cw = search::search_chain(wide.model, b, &profile, sc);
            record("base/seed" + std::to_string(s), cb);
            record("wide/seed" + std::to_string(s), cw);
            base_len.push_back(effective_length(cb, sc));
            wide_len.push_back(effective_length(cw, sc));
        }
        rep.base_median = search::median(base_len);
        rep.wide_median = search::median(wide_len);
    } else if (mode == "topn") {
        const auto rounds = search::protect_topn_rounds(m, batch, cfg.search, cfg.topn_rounds);
        for (std::size_t r = 0; r < rounds.size(); ++r) record("round" + std::to_string(r + 1), rounds[r]);
    } else if (mode == "layer-lock") {
        const auto weighted = m.weighted_layers();
        search::SearchConfig locked = cfg.search;
        locked.protected_layers = {weighted.front(), weighted.back()};
        const auto open = search::search_chain(m, batch, &profile, cfg.search);
        const auto lock = search::search_chain(m, batch, &profile, locked);
        record("unlocked", open);
        record("first-last-locked", lock);
        rep.base_median = effective_length(open, cfg.search);
        rep.wide_median = effective_length(lock, cfg.search);
    } else {
        throw ConfigError("defense mode must be width, topn or layer-lock, got " + mode);
    }
    return rep;
}

SensitivityReport cmd_sensitivity(const ExperimentConfig& cfg, const qnn::QuantizedModel& m, const qnn::Dataset& data,
                                  const dram::FlipProfile& profile) {
    SensitivityReport rep;
    const search::EvalBatch batch = search::make_eval_batch(data, cfg.search);
    ExperimentConfig ecfg = cfg;
    ecfg.reboot_toggle = -1.0;
    for (double rate : cfg.rates) {
        std::vector<double> lengths;
        std::size_t feasible = 0;
        std::optional<SensitivityRun> identity;  // rate 1 ignores the sampling seed
        for (int s = 1; s <= cfg.sensitivity_seeds; ++s) {
            const std::uint64_t seed = derive_seed(cfg.sample_seed(), static_cast<std::uint64_t>(s));
            SensitivityRun run;
            search::BitChain chain;
            if (rate == 1.0 && identity) {
                run = *identity;
            } else {
                const dram::FlipProfile sampled = dram::sample_profile(profile, rate, seed);
                run.rate = rate;
                run.profile_entries = sampled.size();
                chain = search::search_chain(m, batch, &sampled, cfg.search);
                run.chain_length = chain.steps.size();
                run.feasible = chain.feasible;
                run.terminal_acc = chain.terminal_acc();
                run.outcome = "infeasible";
                if (chain.feasible) {
                    try {
                        const AttackReport a = cmd_exploit(ecfg, m, data, sampled, {chain});
                        run.exploited = true;
                        run.achieved_acc = a.achieved_acc;
                        run.outcome = "success";
                    } catch (const Error& e) {
                        run.outcome = std::string("exploit failed: ") + e.what();
                    }
                }
                if (rate == 1.0) identity = run;
            }
            run.seed = seed;
            feasible += run.feasible;
            lengths.push_back(run.feasible ? double(run.chain_length) : double(cfg.search.max_iterations + 1));
            rep.runs.push_back(run);
        }
        rep.median_length.push_back(search::median(lengths));
        rep.feasible_count.push_back(feasible);
    }
    return rep;
}

AttackReport run_pipeline(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    const qnn::Dataset data = load_dataset(cfg);
    const TrainReport tr = cmd_train(cfg, data);
    qnn::save_checkpoint(tr.model, path_in(cfg.out_dir, "model.qnn1"));
    write_text(path_in(cfg.out_dir, "train.json"), to_json(tr));

    const TemplateReport tp = cmd_template(cfg);
    tp.profile.save(path_in(cfg.out_dir, "profile.csv"));
    write_text(path_in(cfg.out_dir, "template.json"), to_json(tp));

    const SearchReport sr = cmd_search(cfg, tr.model, data, tp.profile);
    sr.profile.save(path_in(cfg.out_dir, "search_profile.csv"));
    const image::WeightImage img = image::WeightImage::build(tr.model);
    for (std::size_t i = 0; i < sr.chains.size(); ++i) {
        image::write_chain(path_in(cfg.out_dir, "chain" + std::to_string(i + 1) + ".jsonl"), sr.chains[i].records(img));
        write_text(path_in(cfg.out_dir, "trace" + std::to_string(i + 1) + ".csv"), search::trace_csv(sr.chains[i]));
    }
    write_text(path_in(cfg.out_dir, "search.json"), to_json(sr));

    const AttackReport ar = cmd_exploit(cfg, tr.model, data, sr.profile, sr.chains);
    write_text(path_in(cfg.out_dir, "exploit.json"), to_json(ar));
    write_text(path_in(cfg.out_dir, "plan.json"), ar.plan_json);
    return ar;
}

}  // namespace rf::cli
