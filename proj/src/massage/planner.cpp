#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

#include <json.hpp>

#include "rowflip/errors.hpp"
#include "rowflip/massage.hpp"

namespace rf::massage {

namespace {

// Aggressor frames for a victim frame, or empty when the attacker cannot
// hammer it. Single-sided prefers the row above, as templating does.
std::vector<std::uint64_t> aggressor_frames(const dram::Dram& d, std::uint64_t pfn, dram::HammerMode mode) {
    const auto& addr = d.address();
    std::uint64_t up = 0, down = 0;
    const bool has_up = addr.neighbour(pfn, -1, up) && d.owner(up) == dram::Owner::Attacker;
    const bool has_down = addr.neighbour(pfn, +1, down) && d.owner(down) == dram::Owner::Attacker;
    if (mode == dram::HammerMode::Double) {
        if (has_up && has_down) return {up, down};
        return {};
    }
    if (has_up) return {up};
    if (has_down) return {down};
    return {};
}

std::string describe(const image::TargetBit& b) {
    return "(" + std::to_string(b.page) + ", " + std::to_string(b.bop) + ", " + std::to_string(b.mode) + ")";
}

}  // namespace

std::vector<std::uint64_t> candidate_frames(const dram::Dram& d, const dram::FlipProfile& profile,
                                            const image::TargetBit& bit, dram::HammerMode mode) {
    std::vector<std::uint64_t> out;
    for (auto pfn : profile.frames(bit.bop, bit.mode)) {
        if (pfn >= d.config().pfn_count() || d.owner(pfn) != dram::Owner::Attacker) continue;
        if (aggressor_frames(d, pfn, mode).empty()) continue;
        out.push_back(pfn);
    }
    return out;
}

MappingPlan plan_mapping(const std::vector<image::TargetBit>& chain, const dram::FlipProfile& profile,
                         const dram::Dram& d, const PlanOptions& opt) {
    if (chain.size() >= opt.threshold)
        throw ThresholdViolation("chain of " + std::to_string(chain.size()) + " pages reaches the recycling threshold " +
                                 std::to_string(opt.threshold));
    std::vector<std::vector<std::uint64_t>> options;
    for (const auto& b : chain) options.push_back(candidate_frames(d, profile, b, opt.mode));

    std::vector<std::size_t> order(chain.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return options[a].size() < options[b].size(); });

    std::set<std::uint64_t> victims, aggressors;
    MappingPlan plan;
    plan.entries.resize(chain.size());
    for (std::size_t i : order) {
        bool placed = false;
        for (auto pfn : options[i]) {
            if (victims.count(pfn) || aggressors.count(pfn)) continue;
            const auto aggr = aggressor_frames(d, pfn, opt.mode);
            if (std::any_of(aggr.begin(), aggr.end(), [&](std::uint64_t a) { return victims.count(a) > 0; })) continue;
            victims.insert(pfn);
            aggressors.insert(aggr.begin(), aggr.end());
            plan.entries[i] = {i, chain[i], chain[i].page, pfn, options[i].size()};
            placed = true;
            break;
        }
        if (!placed)
            throw Unsatisfiable("no physical frame left for chain bit " + std::to_string(i) + " " + describe(chain[i]),
                                i);
    }
    plan.memory_fraction =
        double(d.owned_count(dram::Owner::Attacker)) / double(d.config().pfn_count());
    return plan;
}

AggressorPlan merge_actions(std::vector<AggressorSet> sets) {
    std::sort(sets.begin(), sets.end(), [](const AggressorSet& a, const AggressorSet& b) {
        return std::tie(a.set, a.victim_row, a.col_byte) < std::tie(b.set, b.victim_row, b.col_byte);
    });
    AggressorPlan out;
    std::map<std::tuple<int, int, std::vector<int>>, std::size_t> ids;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        auto& s = sets[i];
        std::sort(s.aggressor_rows.begin(), s.aggressor_rows.end());
        std::sort(s.target_cols.begin(), s.target_cols.end());
        const auto key = std::make_tuple(s.set, s.victim_row, s.aggressor_rows);
        auto it = ids.find(key);
        if (it == ids.end()) {
            it = ids.emplace(key, out.actions.size()).first;
            out.actions.push_back({s.set, s.victim_row, s.aggressor_rows, {}});
        }
        s.action = it->second;
        out.actions[it->second].sets.push_back(i);
    }
    out.sets = std::move(sets);
    return out;
}

AggressorPlan plan_aggressors(const MappingPlan& plan, const dram::Dram& d) {
    const auto& addr = d.address();
    const auto& cfg = d.config();
    std::map<std::tuple<int, int, int>, AggressorSet> by_page;
    for (std::size_t e = 0; e < plan.entries.size(); ++e) {
        const auto& p = plan.entries[e];
        const dram::Location loc = addr.locate(p.pfn, p.bit.bop / 8);
        const int start = loc.col_byte / cfg.in_row_page_size * cfg.in_row_page_size;
        auto [it, fresh] = by_page.try_emplace(std::make_tuple(loc.set, loc.row, start));
        AggressorSet& s = it->second;
        if (fresh) {
            s.set = loc.set;
            s.victim_row = loc.row;
            s.col_byte = start;
            s.bytes = cfg.in_row_page_size;
            for (auto a : aggressor_frames(d, p.pfn, cfg.hammer_mode)) s.aggressor_rows.push_back(addr.row_of(a));
            if (s.aggressor_rows.empty())
                throw Unsatisfiable("aggressor rows of frame " + std::to_string(p.pfn) + " are not attacker-owned",
                                    p.target);
        }
        s.target_cols.push_back(loc.col_byte * 8 + p.bit.bop % 8);
        s.targets.push_back(e);
    }
    std::vector<AggressorSet> sets;
    for (auto& [k, s] : by_page) sets.push_back(std::move(s));
    return merge_actions(std::move(sets));
}

std::string plan_json(const MappingPlan& plan, const AggressorPlan& agg) {
    using nlohmann::ordered_json;
    std::vector<const AggressorSet*> set_of(plan.entries.size(), nullptr);
    for (const auto& s : agg.sets)
        for (auto e : s.targets)
            if (e < set_of.size()) set_of[e] = &s;
    ordered_json j;
    j["memory_fraction"] = plan.memory_fraction;
    j["hammer_actions"] = agg.actions.size();
    j["targets"] = ordered_json::array();
    for (std::size_t e = 0; e < plan.entries.size(); ++e) {
        const auto& p = plan.entries[e];
        ordered_json t;
        t["target"] = p.target;
        t["pgid"] = p.pgid;
        t["bop"] = p.bit.bop;
        t["mode"] = p.bit.mode;
        t["ppn"] = p.pfn;
        t["candidate_frames"] = p.options;
        if (const AggressorSet* s = set_of[e]) {
            t["set"] = s->set;
            t["victim_row"] = s->victim_row;
            t["aggressor_rows"] = s->aggressor_rows;
            t["stripe_columns"] = s->target_cols;
            t["action"] = s->action;
        }
        j["targets"].push_back(std::move(t));
    }
    return j.dump(2);
}

}  // namespace rf::massage
