#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rowflip/cli.hpp"
#include "rowflip/errors.hpp"

namespace rf::cli {

using nlohmann::ordered_json;

namespace {

ordered_json bit_json(const image::TargetBit& b) { return {{"page", b.page}, {"bop", b.bop}, {"mode", b.mode}}; }

ordered_json chain_json(const search::BitChain& c) {
    ordered_json j;
    j["feasible"] = c.feasible;
    j["stop_reason"] = c.stop_reason;
    j["length"] = c.steps.size();
    j["clean_acc"] = c.clean_acc;
    j["terminal_acc"] = c.terminal_acc();
    j["mode0_fraction"] = c.mode0_fraction();
    j["steps"] = ordered_json::array();
    for (const auto& s : c.steps) {
        ordered_json t = bit_json(s.bit);
        t["layer"] = s.ref.layer;
        t["index"] = s.ref.index;
        t["bit"] = s.ref.bit;
        t["frame"] = s.frame;
        t["loss"] = s.loss;
        t["acc"] = s.acc;
        t["candidates_evaluated"] = s.evaluated;
        t["p"] = s.p_used;
        j["steps"].push_back(std::move(t));
    }
    return j;
}

}  // namespace

std::string to_json(const TrainReport& r) {
    ordered_json j;
    j["clean_test_acc"] = r.clean_acc;
    j["parameters"] = r.parameters;
    j["weights"] = r.model.weight_count();
    j["weight_pages"] = r.weight_pages;
    j["model_hash"] = qnn::model_hash(r.model);
    return j.dump(2);
}

std::string to_json(const TemplateReport& r) {
    ordered_json j;
    j["entries"] = r.profile.size();
    j["vulnerable_frames"] = r.profile.vulnerable_frames();
    j["rows_templated"] = r.rows_templated;
    j["cells_total"] = r.cells_total;
    j["estimated_templating_seconds"] = r.estimated_seconds;
    j["estimated_seconds_per_bank"] = r.estimated_seconds_per_bank;
    return j.dump(2);
}

std::string to_json(const SearchReport& r) {
    ordered_json j;
    j["rate"] = r.rate;
    j["profile_entries"] = r.profile_entries;
    j["chains"] = ordered_json::array();
    for (const auto& c : r.chains) j["chains"].push_back(chain_json(c));
    return j.dump(2);
}

std::string to_json(const AttackReport& r) {
    ordered_json j;
    j["chain_used"] = r.chain_used;
    j["satisfiability_retries"] = r.satisfiability_retries;
    j["bits"] = ordered_json::array();
    for (const auto& b : r.bits) j["bits"].push_back(bit_json(b));
    j["step_acc"] = r.step_acc;
    j["clean_acc"] = r.clean_acc;
    j["recorded_acc"] = r.recorded_acc;
    j["achieved_acc"] = r.achieved_acc;
    j["achieved_test_acc"] = r.achieved_test_acc;
    j["flips_attempted"] = r.flips_attempted;
    j["flips_achieved"] = r.flips_achieved;
    j["rebooted"] = r.rebooted;
    j["template_valid"] = r.template_valid;
    j["retemplated"] = r.retemplated;
    j["retemplate_work_ratio"] = r.retemplate_work_ratio;
    j["estimated_retemplate_seconds"] = r.retemplate_estimated_seconds;
    j["memory_fraction"] = r.memory_fraction;
    j["released_frames"] = r.released_frames;
    j["hammer_actions"] = r.hammer_actions;
    j["estimated_hammer_seconds"] = r.hammer_estimated_seconds;
    return j.dump(2);
}

std::string to_json(const BaselineReport& r) {
    ordered_json j;
    j["flips"] = r.flips;
    j["trials"] = r.drops.size();
    j["median_drop"] = r.median_drop;
    j["drops"] = r.drops;
    return j.dump(2);
}

std::string drops_csv(const BaselineReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "trial,accuracy_drop\n";
    for (std::size_t i = 0; i < r.drops.size(); ++i) out << i + 1 << ',' << r.drops[i] << '\n';
    return out.str();
}

std::string to_json(const DefenseReport& r) {
    ordered_json j;
    j["mode"] = r.mode;
    j["base_clean_acc"] = r.base_clean_acc;
    if (r.mode == "width") {
        j["wide_clean_acc"] = r.wide_clean_acc;
        j["base_median_length"] = r.base_median;
        j["wide_median_length"] = r.wide_median;
    } else if (r.mode == "layer-lock") {
        j["unlocked_length"] = r.base_median;
        j["locked_length"] = r.wide_median;
    }
    j["runs"] = ordered_json::array();
    for (const auto& run : r.runs)
        j["runs"].push_back({{"label", run.label},
                             {"chain_length", run.chain_length},
                             {"feasible", run.feasible},
                             {"terminal_acc", run.terminal_acc}});
    return j.dump(2);
}

std::string to_json(const SensitivityReport& r) {
    ordered_json j;
    j["runs"] = ordered_json::array();
    for (const auto& run : r.runs)
        j["runs"].push_back({{"rate", run.rate},
                             {"seed", run.seed},
                             {"profile_entries", run.profile_entries},
                             {"chain_length", run.chain_length},
                             {"feasible", run.feasible},
                             {"terminal_acc", run.terminal_acc},
                             {"exploited", run.exploited},
                             {"achieved_acc", run.achieved_acc},
                             {"outcome", run.outcome}});
    j["median_length"] = r.median_length;
    j["feasible_count"] = r.feasible_count;
    return j.dump(2);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << text;
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace rf::cli
