#include <algorithm>
#include <map>
#include <numeric>

#include "rowflip/errors.hpp"
#include "rowflip/massage.hpp"

namespace rf::massage {

namespace {

struct Cell {
    int set = 0;
    int row = 0;
    int col_bit = 0;
};

Cell cell_of(const dram::AddressMap& addr, std::uint64_t pfn, int bop) {
    const dram::Location l = addr.locate(pfn, bop / 8);
    return {l.set, l.row, l.col_byte * 8 + bop % 8};
}

// Rows that hammer (set, row) for the attacker, or empty if it lacks them.
std::vector<int> own_aggressors(const dram::Dram& d, int set, int row) {
    const auto& c = d.config();
    if (!d.row_owned(set, row, dram::Owner::Attacker)) return {};
    const bool up = row > 0 && d.row_owned(set, row - 1, dram::Owner::Attacker);
    const bool down = row + 1 < c.rows_per_bank && d.row_owned(set, row + 1, dram::Owner::Attacker);
    if (c.hammer_mode == dram::HammerMode::Double) {
        if (up && down) return {row - 1, row + 1};
        return {};
    }
    if (up) return {row - 1};
    if (down) return {row + 1};
    return {};
}

// Stripe the row so cells that flip in direction `dir` can, hammer, clear.
std::vector<dram::FlipEvent> stripe_and_hammer(dram::Dram& d, int set, int row, const std::vector<int>& aggr,
                                               int dir) {
    const std::uint8_t victim = dir == 0 ? 0xFF : 0x00;
    d.fill_row(set, row, victim);
    for (int a : aggr) d.fill_row(set, a, static_cast<std::uint8_t>(~victim));
    auto flips = d.hammer(set, row, aggr);
    d.fill_row(set, row, 0);
    for (int a : aggr) d.fill_row(set, a, 0);
    return flips;
}

}  // namespace

std::vector<std::pair<int, std::uint64_t>> release_and_remap(PageFrameCache& cache, const MappingPlan& plan,
                                                             const image::WeightImage& img, dram::Dram& d,
                                                             const NoiseSpec& noise) {
    const std::size_t k = plan.entries.size();
    if (k >= cache.threshold())
        throw ThresholdViolation("releasing " + std::to_string(k) + " frames would spill the page cache (threshold " +
                                 std::to_string(cache.threshold()) + ")");
    for (const auto& e : plan.entries)
        if (d.owner(e.pfn) != dram::Owner::Attacker)
            throw ConfigError("planned frame " + std::to_string(e.pfn) + " is not attacker-owned");

    for (const auto& e : plan.entries) {
        d.set_owner(e.pfn, dram::Owner::Free);
        cache.free_page(e.pfn);
    }

    Rng rng(noise.seed);
    std::vector<std::pair<int, std::uint64_t>> got(k);
    for (std::size_t i = k; i-- > 0;) {
        if (noise.steal_probability > 0.0 && rng.bernoulli(noise.steal_probability) && cache.size() > 0)
            cache.alloc();  // a foreign task takes the head frame
        if (cache.size() == 0 && cache.global_pool().empty())
            throw MappingMismatch("page cache ran dry while mapping victim page " +
                                  std::to_string(plan.entries[i].pgid));
        const std::uint64_t pfn = cache.alloc();
        d.set_owner(pfn, dram::Owner::Victim);
        d.write_page(pfn, img.page(plan.entries[i].pgid));
        got[i] = {plan.entries[i].pgid, pfn};
    }
    for (std::size_t i = 0; i < k; ++i)
        if (got[i].second != plan.entries[i].pfn)
            throw MappingMismatch("victim page " + std::to_string(got[i].first) + " landed on frame " +
                                  std::to_string(got[i].second) + ", planned " + std::to_string(plan.entries[i].pfn));
    return got;
}

VerifyResult verify_template(dram::Dram& d, const dram::FlipProfile& profile, std::size_t sample,
                             std::uint64_t seed) {
    const auto& addr = d.address();
    std::vector<std::size_t> stable;
    const auto& entries = profile.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (e.prob < 1.0 || e.pfn >= d.config().pfn_count() || d.owner(e.pfn) != dram::Owner::Attacker) continue;
        const Cell c = cell_of(addr, e.pfn, e.bop);
        if (!own_aggressors(d, c.set, c.row).empty()) stable.push_back(i);
    }
    Rng rng(seed);
    rng.shuffle(stable);
    stable.resize(std::min(stable.size(), sample));

    VerifyResult r;
    for (std::size_t s = 0; s < stable.size(); ++s) {
        const auto& e = entries[stable[s]];
        const Cell c = cell_of(addr, e.pfn, e.bop);
        const auto flips = stripe_and_hammer(d, c.set, c.row, own_aggressors(d, c.set, c.row), e.dir);
        ++r.tested;
        const bool hit = std::any_of(flips.begin(), flips.end(),
                                     [&](const dram::FlipEvent& f) { return f.col_bit == c.col_bit; });
        if (!hit) {
            r.valid = false;
            r.failed_entry = s;
            return r;
        }
    }
    return r;
}

RetemplateResult retemplate(dram::Dram& d, const dram::FlipProfile& stale, const std::set<int>& needed_bops) {
    const auto& addr = d.address();
    RetemplateResult r;
    r.total_entries = stale.size();
    r.vulnerable_frames = stale.vulnerable_frames();

    // (set, row) -> entries to re-test there. Direction is ignored on purpose:
    // a reboot may have inverted it, but the location still holds.
    std::map<std::pair<int, int>, std::vector<std::size_t>> rows;
    std::set<std::uint64_t> frames;
    const auto& entries = stale.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!needed_bops.count(entries[i].bop)) continue;
        const Cell c = cell_of(addr, entries[i].pfn, entries[i].bop);
        rows[{c.set, c.row}].push_back(i);
        frames.insert(entries[i].pfn);
        ++r.tested_entries;
    }
    r.tested_frames = frames.size();

    std::vector<dram::ProfileEntry> out;
    for (const auto& [key, idx] : rows) {
        const auto [set, row] = key;
        const auto aggr = own_aggressors(d, set, row);
        if (aggr.empty()) continue;
        for (int dir = 0; dir < 2; ++dir) {
            std::set<int> flipped;
            for (const auto& f : stripe_and_hammer(d, set, row, aggr, dir)) flipped.insert(f.col_bit);
            for (auto i : idx) {
                const auto& e = entries[i];
                if (flipped.count(cell_of(addr, e.pfn, e.bop).col_bit)) out.push_back({e.pfn, e.bop, dir, e.prob});
            }
        }
    }
    r.profile = dram::FlipProfile(std::move(out));
    return r;
}

HammerReport precise_hammer(dram::Dram& d, const AggressorPlan& plan) {
    const auto& addr = d.address();
    HammerReport rep;
    for (const auto& act : plan.actions) {
        bool any = false;
        for (auto si : act.sets) any = any || !plan.sets[si].target_cols.empty();
        if (!any) continue;

        std::vector<dram::FlipEvent> expected;
        for (auto si : act.sets) {
            const auto& s = plan.sets[si];
            for (int a : s.aggressor_rows) {
                for (int c = s.col_byte; c < s.col_byte + s.bytes; ++c) d.set_byte(s.set, a, c, d.byte(s.set, s.victim_row, c));
                for (int t : s.target_cols) d.set_bit(s.set, a, t, 1 - d.bit(s.set, s.victim_row, t));
            }
            for (int t : s.target_cols) expected.push_back({s.set, s.victim_row, t, 1 - d.bit(s.set, s.victim_row, t)});
        }
        const auto flips = d.hammer(act.set, act.victim_row, act.aggressor_rows);
        ++rep.actions;

        std::vector<dram::FlipEvent> seen;
        for (const auto& f : flips) {
            bool inside = false;
            for (auto si : act.sets) {
                const auto& s = plan.sets[si];
                inside = inside || (f.col_bit / 8 >= s.col_byte && f.col_bit / 8 < s.col_byte + s.bytes);
            }
            const auto pfn = addr.resident({f.set, f.row, f.col_bit / 8}).pfn;
            if (inside || d.owner(pfn) == dram::Owner::Victim)
                seen.push_back(f);
            else
                ++rep.collateral;
        }
        std::sort(expected.begin(), expected.end());
        std::sort(seen.begin(), seen.end());
        rep.flips.insert(rep.flips.end(), seen.begin(), seen.end());
        rep.expected.insert(rep.expected.end(), expected.begin(), expected.end());
        if (seen != expected)
            throw PrecisionViolation("hammering row " + std::to_string(act.victim_row) + " of set " +
                                     std::to_string(act.set) + " flipped " + std::to_string(seen.size()) +
                                     " victim bits, expected exactly " + std::to_string(expected.size()));
    }
    return rep;
}

std::size_t release_unneeded(dram::Dram& d, const AggressorPlan& plan) {
    const auto& addr = d.address();
    std::set<std::uint64_t> keep;
    for (const auto& s : plan.sets)
        for (int a : s.aggressor_rows) keep.insert(addr.resident({s.set, a, s.col_byte}).pfn);
    std::size_t n = 0;
    for (std::uint64_t pfn = 0; pfn < d.config().pfn_count(); ++pfn) {
        if (d.owner(pfn) != dram::Owner::Attacker || keep.count(pfn)) continue;
        d.set_owner(pfn, dram::Owner::Free);
        ++n;
    }
    return n;
}

}  // namespace rf::massage
