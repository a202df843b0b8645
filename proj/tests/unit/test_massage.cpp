#include <doctest.h>

#include <algorithm>
#include <bit>
#include <numeric>
#include <map>
#include <random>

#include <json.hpp>

#include "rowflip/errors.hpp"
#include "rowflip/massage.hpp"

using namespace rf;
using namespace rf::massage;
using dram::DramConfig;
using dram::Owner;

namespace {

// A weight image of exactly `pages` pages, page i filled with byte i.
image::WeightImage paged_image(int pages) {
    const auto a = qnn::ModelBuilder({1, 1, 1024}).flatten().fc(4 * pages).build();
    qnn::QuantizedModel m;
    m.class_count = a.class_count;
    m.input = a.input;
    for (const auto& s : a.layers) {
        qnn::QuantizedLayer l;
        l.spec = s;
        if (s.weighted()) {
            l.weight_q.resize(s.weight_count());
            for (std::size_t i = 0; i < l.weight_q.size(); ++i)
                l.weight_q[i] = static_cast<std::int8_t>(static_cast<std::uint8_t>(i / 4096 + 1));
            l.delta_w = 1.0;
            l.bias.assign(s.bias_count(), 0.0);
        }
        m.layers.push_back(l);
    }
    return image::WeightImage::build(m);
}

dram::Dram attacker_dram(const DramConfig& cfg, std::vector<dram::VulnCell> cells = {}) {
    dram::Dram d(cfg, std::move(cells), 1);
    d.assign_attacker(1.0, 1);
    return d;
}

std::uint64_t frame_at(const dram::Dram& d, int set, int row, int slot) {
    return d.address().resident({set, row, slot * d.config().in_row_page_size}).pfn;
}

}  // namespace

TEST_CASE("page cache is LIFO below the threshold") {
    std::mt19937_64 g(1);
    for (int trial = 0; trial < 200; ++trial) {
        PageFrameCache c;
        const std::size_t n = 1 + g() % (kRecyclingThreshold - 1);
        std::vector<std::uint64_t> freed;
        for (std::size_t i = 0; i < n; ++i) {
            freed.push_back(g() % 100000);
            c.free_page(freed.back());
        }
        REQUIRE(c.spills() == 0);
        REQUIRE(c.contents() == std::vector<std::uint64_t>(freed.rbegin(), freed.rend()));
        for (std::size_t i = n; i-- > 0;) REQUIRE(c.alloc() == freed[i]);
        CHECK(c.size() == 0);
    }
    PageFrameCache empty;
    CHECK_THROWS_AS(empty.alloc(), Error);
}

TEST_CASE("reaching the threshold spills the oldest half") {
    PageFrameCache c;
    for (std::uint64_t i = 0; i < kRecyclingThreshold; ++i) c.free_page(i);
    CHECK(c.spills() == 1);
    CHECK(c.size() == kRecyclingThreshold / 2);
    REQUIRE(c.global_pool().size() == kRecyclingThreshold / 2);
    for (std::size_t i = 0; i < c.global_pool().size(); ++i) CHECK(c.global_pool()[i] == i);
    CHECK(c.alloc() == kRecyclingThreshold - 1);
    while (c.size() > 0) c.alloc();
    CHECK(c.alloc() == 0);  // then the global pool, oldest first
}

TEST_CASE("release_and_remap places every victim page on its planned frame") {
    const auto cfg = DramConfig::desk();
    const auto img = paged_image(179);
    std::mt19937_64 g(7);
    for (std::size_t k : {std::size_t{1}, std::size_t{4}, std::size_t{32}, std::size_t{179}}) {
        auto d = attacker_dram(cfg);
        std::vector<std::uint64_t> frames(cfg.pfn_count());
        std::iota(frames.begin(), frames.end(), 0);
        std::shuffle(frames.begin(), frames.end(), g);
        MappingPlan plan;
        for (std::size_t i = 0; i < k; ++i) plan.entries.push_back({i, {}, static_cast<int>(i + 1), frames[i], 1});
        PageFrameCache cache;
        const auto got = release_and_remap(cache, plan, img, d);
        REQUIRE(got.size() == k);
        for (std::size_t i = 0; i < k; ++i) {
            CHECK(got[i] == std::make_pair(static_cast<int>(i + 1), frames[i]));
            CHECK(d.owner(frames[i]) == Owner::Victim);
            CHECK(d.read_page(frames[i]) == img.page(static_cast<int>(i + 1)));
        }
        CHECK(cache.size() == 0);
    }

    auto d = attacker_dram(cfg);
    MappingPlan big;
    for (std::size_t i = 0; i < kRecyclingThreshold; ++i) big.entries.push_back({i, {}, 1, i, 1});
    PageFrameCache cache;
    CHECK_THROWS_AS(release_and_remap(cache, big, img, d), ThresholdViolation);
    CHECK(d.owned_count(Owner::Victim) == 0);
}

TEST_CASE("a foreign allocation in between breaks the mapping") {
    const auto cfg = DramConfig::desk();
    const auto img = paged_image(4);
    auto d = attacker_dram(cfg);
    MappingPlan plan;
    for (std::size_t i = 0; i < 4; ++i) plan.entries.push_back({i, {}, static_cast<int>(i + 1), 10 + i, 1});
    PageFrameCache cache;
    CHECK_THROWS_AS(release_and_remap(cache, plan, img, d, {1.0, 3}), MappingMismatch);
}

TEST_CASE("least-options-first avoids the conflict in the 2x{1,5} instance") {
    const auto cfg = DramConfig::desk();
    const auto d = attacker_dram(cfg);
    // Victim rows 10, 20, ..., 60 in set 0, slot 0: neighbours never overlap.
    std::vector<std::uint64_t> f;
    for (int r = 10; r <= 50; r += 10) f.push_back(frame_at(d, 0, r, 0));
    const int bop_a = 100, bop_b = 200;
    std::vector<dram::ProfileEntry> e{{f[0], bop_a, 0, 1.0}};
    for (auto pfn : f) e.push_back({pfn, bop_b, 0, 1.0});
    const dram::FlipProfile prof(e);
    // B first: taking the chain in order would hand B the shared frame f[0].
    const std::vector<image::TargetBit> chain{{2, bop_b, 0}, {1, bop_a, 0}};
    const auto plan = plan_mapping(chain, prof, d);
    REQUIRE(plan.entries.size() == 2);

    // Oracle: every assignment with a frame from each option list, distinct.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> valid;
    for (auto fb : prof.frames(bop_b, 0))
        for (auto fa : prof.frames(bop_a, 0))
            if (fa != fb) valid.emplace_back(fb, fa);
    CHECK(valid.size() == 4);
    CHECK(std::find(valid.begin(), valid.end(), std::make_pair(plan.entries[0].pfn, plan.entries[1].pfn)) !=
          valid.end());
    CHECK(plan.entries[1].pfn == f[0]);
    CHECK(plan.entries[0].options == 5);
    CHECK(plan.entries[1].options == 1);
    CHECK(plan.entries[0].pgid == 2);

    // One target, one frame.
    const auto single = plan_mapping({{1, bop_a, 0}}, prof, d);
    CHECK(single.entries[0].pfn == f[0]);
}

TEST_CASE("unsatisfiable and threshold errors") {
    const auto cfg = DramConfig::desk();
    const auto d = attacker_dram(cfg);
    const dram::FlipProfile prof({{frame_at(d, 0, 10, 0), 100, 0, 1.0}});
    try {
        plan_mapping({{1, 100, 0}, {2, 101, 0}}, prof, d);
        FAIL("expected Unsatisfiable");
    } catch (const Unsatisfiable& u) {
        CHECK(u.failed == 1);
    }
    // Opposite direction only.
    CHECK_THROWS_AS(plan_mapping({{1, 100, 1}}, prof, d), Unsatisfiable);
    std::vector<image::TargetBit> long_chain(kRecyclingThreshold, image::TargetBit{1, 100, 0});
    CHECK_THROWS_AS(plan_mapping(long_chain, prof, d), ThresholdViolation);
}

TEST_CASE("row 0 victims need single-sided hammering") {
    auto cfg = DramConfig::desk();
    const auto d = attacker_dram(cfg);
    const auto top = frame_at(d, 0, 0, 0);
    const dram::FlipProfile prof({{top, 5, 0, 1.0}});
    CHECK_THROWS_AS(plan_mapping({{1, 5, 0}}, prof, d), Unsatisfiable);
    cfg.hammer_mode = dram::HammerMode::Single;
    const auto s = attacker_dram(cfg);
    const auto plan = plan_mapping({{1, 5, 0}}, prof, s, {kRecyclingThreshold, dram::HammerMode::Single});
    const auto agg = plan_aggressors(plan, s);
    REQUIRE(agg.sets.size() == 1);
    CHECK(agg.sets[0].aggressor_rows == std::vector<int>{1});
}

TEST_CASE("aggressor planning") {
    const auto cfg = DramConfig::desk();
    const auto d = attacker_dram(cfg);
    SUBCASE("single victim: a three-row sandwich") {
        const auto pfn = frame_at(d, 1, 30, 1);
        const dram::FlipProfile prof({{pfn, 77, 1, 1.0}});
        const auto agg = plan_aggressors(plan_mapping({{1, 77, 1}}, prof, d), d);
        REQUIRE(agg.sets.size() == 1);
        REQUIRE(agg.actions.size() == 1);
        CHECK(agg.sets[0].victim_row == 30);
        CHECK(agg.sets[0].aggressor_rows == std::vector<int>{29, 31});
        CHECK(agg.sets[0].col_byte == 4096);
        CHECK(agg.sets[0].target_cols == std::vector<int>{(4096 + 77 / 8) * 8 + 77 % 8});
    }
    SUBCASE("four sets, three actions") {
        auto mk = [](int set, int row, int col, std::vector<int> aggr) {
            AggressorSet s;
            s.set = set;
            s.victim_row = row;
            s.col_byte = col;
            s.bytes = 4096;
            s.aggressor_rows = std::move(aggr);
            s.target_cols = {col * 8 + 3};
            return s;
        };
        // Two victims side by side in row 40 share both aggressor rows; the
        // victims in rows 41 and 44 need their own.
        const auto agg = merge_actions({mk(0, 40, 0, {39, 41}), mk(0, 41, 4096, {40, 42}), mk(0, 40, 4096, {39, 41}),
                                        mk(0, 44, 0, {43, 45})});
        CHECK(agg.sets.size() == 4);
        REQUIRE(agg.actions.size() == 3);
        std::map<int, std::size_t> per_row;
        for (const auto& a : agg.actions) per_row[a.victim_row] = a.sets.size();
        CHECK(per_row[40] == 2);
        CHECK(per_row[41] == 1);
        CHECK(per_row[44] == 1);
        for (std::size_t i = 0; i < agg.sets.size(); ++i)
            CHECK(std::count(agg.actions[agg.sets[i].action].sets.begin(), agg.actions[agg.sets[i].action].sets.end(), i) == 1);
    }
    SUBCASE("two targets in one in-row page share one set") {
        const auto pfn = frame_at(d, 0, 50, 0);
        const auto pfn2 = frame_at(d, 0, 60, 0);
        const dram::FlipProfile prof({{pfn, 8, 0, 1.0}, {pfn2, 9, 0, 1.0}});
        MappingPlan plan;
        plan.entries.push_back({0, {1, 8, 0}, 1, pfn, 1});
        plan.entries.push_back({1, {2, 9, 0}, 2, pfn, 1});
        const auto agg = plan_aggressors(plan, d);
        REQUIRE(agg.sets.size() == 1);
        CHECK(agg.sets[0].target_cols.size() == 2);
        CHECK(agg.actions.size() == 1);
        const auto j = nlohmann::json::parse(plan_json(plan, agg));
        CHECK(j["targets"].size() == 2);
        CHECK(j["hammer_actions"] == 1);
    }
}

TEST_CASE("precise hammering flips exactly the targets") {
    const auto cfg = DramConfig::desk();
    const int row = 20;
    // Four vulnerable columns in the slot-0 in-row page of row 20, set 0.
    const std::vector<int> cols{10, 333, 4000, 20000};
    auto build = [&](const std::vector<int>& dirs) {
        std::vector<dram::VulnCell> cells;
        for (std::size_t i = 0; i < cols.size(); ++i) cells.push_back({0, row, cols[i], dirs[i], dirs[i], 1.0, false});
        auto d = attacker_dram(cfg, cells);
        const auto pfn = frame_at(d, 0, row, 0);
        std::vector<std::uint8_t> page(4096);
        for (std::size_t i = 0; i < page.size(); ++i) page[i] = static_cast<std::uint8_t>(i * 37 + 11);
        d.write_page(pfn, page);
        d.set_owner(pfn, Owner::Victim);
        return std::make_pair(std::move(d), pfn);
    };
    auto dirs_for = [&](const dram::Dram& d) {
        std::vector<int> dirs;
        for (int c : cols) dirs.push_back(d.bit(0, row, c) == 1 ? 0 : 1);
        return dirs;
    };
    const auto probe = build({0, 0, 0, 0});
    const auto dirs = dirs_for(probe.first);

    SUBCASE("one of several vulnerable columns targeted") {
        auto [d, pfn] = build(dirs);
        const auto before = d.read_page(pfn);
        MappingPlan plan;
        plan.entries.push_back({0, {1, cols[1], dirs[1]}, 1, pfn, 1});
        const auto rep = precise_hammer(d, plan_aggressors(plan, d));
        CHECK(rep.flips.size() == 1);
        const auto after = d.read_page(pfn);
        std::size_t diff = 0;
        for (std::size_t i = 0; i < after.size(); ++i) diff += std::popcount(unsigned(after[i] ^ before[i]));
        CHECK(diff == 1);
        CHECK(((after[cols[1] / 8] ^ before[cols[1] / 8]) >> (cols[1] % 8) & 1) == 1);
    }
    SUBCASE("two targets in one in-row page flip in one action") {
        auto [d, pfn] = build(dirs);
        MappingPlan plan;
        plan.entries.push_back({0, {1, cols[0], dirs[0]}, 1, pfn, 1});
        plan.entries.push_back({1, {2, cols[3], dirs[3]}, 2, pfn, 1});
        const auto rep = precise_hammer(d, plan_aggressors(plan, d));
        CHECK(rep.actions == 1);
        CHECK(rep.flips.size() == 2);
        CHECK(rep.flips == rep.expected);
    }
    SUBCASE("no targets: nothing written, nothing flipped") {
        auto [d, pfn] = build(dirs);
        AggressorSet s;
        s.set = 0;
        s.victim_row = row;
        s.bytes = 4096;
        s.aggressor_rows = {row - 1, row + 1};
        const auto agg = merge_actions({s});
        const auto rows_before = d.materialized_rows();
        const auto rep = precise_hammer(d, agg);
        CHECK(rep.actions == 0);
        CHECK(rep.flips.empty());
        CHECK(d.materialized_rows() == rows_before);
    }
    SUBCASE("a target without a vulnerable cell is a precision violation") {
        auto [d, pfn] = build(dirs);
        MappingPlan plan;
        plan.entries.push_back({0, {1, 77, d.bit(0, row, 77) == 1 ? 0 : 1}, 1, pfn, 1});
        CHECK_THROWS_AS(precise_hammer(d, plan_aggressors(plan, d)), PrecisionViolation);
    }
}

TEST_CASE("template verification and re-templating after reboots") {
    const auto cfg = DramConfig::desk();
    dram::CellSpec cs;
    cs.seed = 17;
    dram::Dram d(cfg, dram::synthesize_cells(cfg, cs), 1);
    d.assign_attacker(0.5, 2);
    const auto prof = dram::template_attacker(d);
    REQUIRE(prof.size() > 50);

    CHECK(verify_template(d, prof).valid);
    CHECK(verify_template(d, prof).tested == kVerifySample);
    const auto none = verify_template(d, prof, 0);
    CHECK(none.valid);
    CHECK(none.tested == 0);

    d.reboot(3, 0.0);
    CHECK(verify_template(d, prof).valid);

    d.reboot(4, 1.0);
    const auto bad = verify_template(d, prof);
    CHECK_FALSE(bad.valid);
    CHECK(bad.tested == 1);
    CHECK(bad.failed_entry == 0);

    CHECK(retemplate(d, prof, {}).profile.empty());

    std::set<int> needed;
    for (std::size_t i = 0; i < prof.size(); i += 23) needed.insert(prof.entries()[i].bop);
    const auto rt = retemplate(d, prof, needed);
    std::vector<dram::ProfileEntry> want;
    for (const auto& e : prof.entries())
        if (needed.count(e.bop)) want.push_back({e.pfn, e.bop, 1 - e.dir, e.prob});
    std::sort(want.begin(), want.end());
    CHECK(rt.profile.entries() == want);
    CHECK(rt.work_ratio() < 1.0);
    CHECK(rt.tested_frames <= rt.vulnerable_frames);
    CHECK(rt.estimated_seconds() == doctest::Approx(double(rt.tested_entries) / 2.2));
    // A fresh template now agrees with the corrected entries.
    const auto fresh = dram::template_attacker(d);
    for (const auto& e : rt.profile.entries())
        CHECK(std::binary_search(fresh.entries().begin(), fresh.entries().end(), e));
}

TEST_CASE("release_unneeded keeps aggressor frames") {
    const auto cfg = DramConfig::desk();
    auto d = attacker_dram(cfg);
    const auto pfn = frame_at(d, 0, 30, 0);
    const dram::FlipProfile prof({{pfn, 5, 0, 1.0}});
    const auto agg = plan_aggressors(plan_mapping({{1, 5, 0}}, prof, d), d);
    d.set_owner(pfn, Owner::Victim);
    const auto freed = release_unneeded(d, agg);
    CHECK(d.owned_count(Owner::Attacker) == 2);
    CHECK(freed == cfg.pfn_count() - 3);
    CHECK(d.owner(frame_at(d, 0, 29, 0)) == Owner::Attacker);
    CHECK(d.owner(frame_at(d, 0, 31, 0)) == Owner::Attacker);
}
