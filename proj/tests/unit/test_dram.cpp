#include <doctest.h>

#include <algorithm>
#include <bit>
#include <map>
#include <set>

#include "rowflip/dram.hpp"
#include "rowflip/errors.hpp"

using namespace rf;
using namespace rf::dram;

namespace {

// Single-channel frame and bit offset of a cell, straight from the address
// function: pfn = (row * banks + bank) * pages_per_row + slot.
ProfileEntry project(const DramConfig& c, const VulnCell& cell) {
    const int col_byte = cell.col_bit / 8;
    const int ch = cell.set / c.banks_total(), bank = cell.set % c.banks_total();
    const std::uint64_t pfn = (std::uint64_t(cell.row) * c.banks_total() + bank) * c.pages_per_row() +
                              std::uint64_t(col_byte / c.in_row_page_size);
    const int offset = ch * c.in_row_page_size + col_byte % c.in_row_page_size;
    return {pfn, offset * 8 + cell.col_bit % 8, cell.dir, 1.0};
}

Dram one_cell_dram(int row, int col_bit, int dir, bool single = false) {
    return Dram(DramConfig::desk(), {{0, row, col_bit, dir, dir, 1.0, single}}, 1);
}

}  // namespace

TEST_CASE("address examples") {
    const AddressMap one(DramConfig::desk());
    const auto a = one.locate(0, 0), b = one.locate(1, 0);
    CHECK(a.set == b.set);
    CHECK(a.row == b.row);
    CHECK(a.col_byte == 0);
    CHECK(b.col_byte == 4096);  // the second half of the 8 KiB row

    const AddressMap two(DramConfig::dual());
    const auto parts = two.page_parts(0);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].set != parts[1].set);
    CHECK(parts[0].bytes == 2048);
    CHECK(parts[1].page_offset == 2048);
    CHECK(two.locate(0, 2047).set == parts[0].set);
    CHECK(two.locate(0, 2048).set == parts[1].set);

    CHECK_THROWS_AS(one.locate(one.config().pfn_count(), 0), OutOfRangeError);
    CHECK_THROWS_AS(one.locate(0, 4096), OutOfRangeError);
}

TEST_CASE("address function is a bijection on both channel layouts") {
    for (auto cfg : {DramConfig::desk(), [] {
             auto c = DramConfig::desk();
             c.channels = 2;
             c.in_row_page_size = 2048;
             return c;
         }()}) {
        const AddressMap m(cfg);
        std::set<Location> seen;
        for (std::uint64_t pfn = 0; pfn < cfg.pfn_count(); ++pfn) {
            for (int off : {0, 1, 2047, 2048, 4095}) {
                const auto loc = m.locate(pfn, off);
                const auto back = m.resident(loc);
                REQUIRE(back.pfn == pfn);
                REQUIRE(back.offset == off);
                seen.insert(loc);
            }
        }
        CHECK(seen.size() == cfg.pfn_count() * 5);
        // Enumerating one row's columns recovers exactly its resident frames.
        std::set<std::uint64_t> frames;
        for (int col = 0; col < cfg.row_bytes; ++col) frames.insert(m.resident({1, 7, col}).pfn);
        const auto rf = m.row_frames(1, 7);
        CHECK(frames == std::set<std::uint64_t>(rf.begin(), rf.end()));
    }
}

TEST_CASE("neighbour frames") {
    const AddressMap m(DramConfig::desk());
    std::uint64_t out = 0;
    CHECK_FALSE(m.neighbour(0, -1, out));
    REQUIRE(m.neighbour(5, 1, out));
    CHECK(m.row_of(out) == m.row_of(5) + 1);
    CHECK(m.bank_of(out) == m.bank_of(5));
    CHECK(m.slot_of(out) == m.slot_of(5));
}

TEST_CASE("cell counts per bank") {
    SUBCASE("full geometry, dense preset: 35K..47K per bank") {
        const auto cfg = DramConfig::full();
        CellSpec cs;
        cs.seed = 4;
        const auto cells = synthesize_cells(cfg, cs);
        std::map<int, int> per;
        for (const auto& c : cells) ++per[c.set];
        CHECK(per.size() == 16);
        for (const auto& [set, n] : per) {
            CHECK(n >= 35000);
            CHECK(n <= 47000);
        }
    }
    SUBCASE("desk geometry scales by rows / 32768") {
        const auto cfg = DramConfig::desk();
        const double s = double(cfg.rows_per_bank) / 32768.0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            CellSpec cs;
            cs.seed = seed;
            std::map<int, int> per;
            for (const auto& c : synthesize_cells(cfg, cs)) ++per[c.set];
            for (const auto& [set, n] : per) {
                CHECK(n >= 0.8 * 35000 * s);
                CHECK(n <= 1.2 * 47000 * s);
            }
        }
    }
    SUBCASE("density 0 yields no cells and an empty profile") {
        CellSpec cs;
        cs.density = Density::Explicit;
        cs.per_bank = 0;
        auto cfg = DramConfig::desk();
        const auto cells = synthesize_cells(cfg, cs);
        CHECK(cells.empty());
        Dram d(cfg, cells, 1);
        d.assign_attacker(1.0, 1);
        CHECK(template_attacker(d).empty());
    }
}

TEST_CASE("multi-cell in-row pages appear at the configured rate") {
    // Sparse enough that two page draws rarely land on the same in-row page.
    const auto cfg = DramConfig::full();
    CellSpec cs;
    cs.density = Density::Explicit;
    cs.per_bank = 300;
    cs.seed = 12;
    std::map<std::tuple<int, int, int>, int> pages;
    for (const auto& c : synthesize_cells(cfg, cs)) ++pages[{c.set, c.row, c.col_bit / (cfg.in_row_page_size * 8)}];
    std::size_t multi = 0;
    for (const auto& [k, n] : pages) multi += n >= 2;
    const double frac = double(multi) / double(pages.size());
    INFO("multi-cell fraction " << frac << " over " << pages.size() << " pages");
    CHECK(frac == doctest::Approx(0.7).epsilon(0.06));
}

TEST_CASE("hammer examples") {
    const auto c = DramConfig::desk();
    SUBCASE("0->1 cell flips under 1-aggressors") {
        auto d = one_cell_dram(10, 100, 1);
        d.fill_row(0, 9, 0xFF);
        d.fill_row(0, 11, 0xFF);
        const auto f = d.hammer(0, 10, {9, 11});
        REQUIRE(f.size() == 1);
        CHECK(f[0] == FlipEvent{0, 10, 100, 1});
        CHECK(d.bit(0, 10, 100) == 1);
    }
    SUBCASE("aggressors equal to the victim bit: no flip") {
        auto d = one_cell_dram(10, 100, 1);
        CHECK(d.hammer(0, 10, {9, 11}).empty());
    }
    SUBCASE("stripe over a non-vulnerable column: no flip") {
        auto d = one_cell_dram(10, 100, 1);
        d.set_bit(0, 9, 101, 1);
        d.set_bit(0, 11, 101, 1);
        CHECK(d.hammer(0, 10, {9, 11}).empty());
    }
    SUBCASE("1->0 cell with the bit already 0: no flip") {
        auto d = one_cell_dram(10, 100, 0);
        d.fill_row(0, 9, 0xFF);
        d.fill_row(0, 11, 0xFF);
        CHECK(d.hammer(0, 10, {9, 11}).empty());
    }
    SUBCASE("single-sided needs a capable cell") {
        auto d = one_cell_dram(10, 100, 1);
        d.fill_row(0, 9, 0xFF);
        CHECK(d.hammer(0, 10, {9}).empty());
        auto s = one_cell_dram(10, 100, 1, true);
        s.fill_row(0, 9, 0xFF);
        CHECK(s.hammer(0, 10, {9}).size() == 1);
    }
    SUBCASE("boundary and argument errors") {
        auto d = one_cell_dram(0, 100, 1);
        CHECK_THROWS(d.hammer(0, 0, {-1, 1}));
        CHECK_THROWS(d.hammer(0, 5, {3}));
        CHECK_THROWS(d.hammer(0, 5, {4, 4}));
        CHECK_THROWS(d.hammer(0, c.rows_per_bank, {c.rows_per_bank - 1}));
    }
}

TEST_CASE("hammering only changes the victim row") {
    CellSpec cs;
    cs.seed = 21;
    const auto cfg = DramConfig::desk();
    Dram d(cfg, synthesize_cells(cfg, cs), 1);
    for (int r = 40; r <= 44; ++r) d.fill_row(1, r, static_cast<std::uint8_t>(r % 2 ? 0xFF : 0x00));
    std::vector<std::vector<std::uint8_t>> before;
    for (int r = 40; r <= 44; ++r) {
        std::vector<std::uint8_t> row;
        for (int b = 0; b < cfg.row_bytes; ++b) row.push_back(d.byte(1, r, b));
        before.push_back(row);
    }
    const auto flips = d.hammer(1, 42, {41, 43});
    for (const auto& f : flips) CHECK(f.row == 42);
    for (int r = 40; r <= 44; ++r) {
        if (r == 42) continue;
        for (int b = 0; b < cfg.row_bytes; ++b) REQUIRE(d.byte(1, r, b) == before[r - 40][b]);
    }
    std::size_t changed = 0;
    for (int b = 0; b < cfg.row_bytes; ++b) changed += std::popcount(unsigned(d.byte(1, 42, b) ^ before[2][b]));
    CHECK(changed == flips.size());
}

TEST_CASE("templating") {
    SUBCASE("one cell gives one entry at the right frame and offset") {
        auto d = one_cell_dram(10, 4096 * 8 + 13, 0);
        d.assign_attacker(1.0, 1);
        const auto p = template_attacker(d);
        REQUIRE(p.size() == 1);
        const auto e = p.entries()[0];
        CHECK(e.pfn == d.address().resident({0, 10, 4096 + 1}).pfn);
        CHECK(e.bop == 13);
        CHECK(e.dir == 0);
        CHECK(e.prob == 1.0);
    }
    SUBCASE("template equals the ground-truth cells projected through the address function") {
        for (auto cfg : {DramConfig::desk(), [] {
                 auto c = DramConfig::desk();
                 c.channels = 2;
                 c.in_row_page_size = 2048;
                 return c;
             }()}) {
            CellSpec cs;
            cs.seed = 31;
            Dram d(cfg, synthesize_cells(cfg, cs), 1);
            d.assign_attacker(0.3, 2);
            std::set<std::pair<int, int>> rows;
            for (const auto& r : attacker_template_rows(d)) rows.insert(r);
            std::vector<ProfileEntry> truth;
            for (const auto& cell : d.cells())
                if (rows.count({cell.set, cell.row})) truth.push_back(project(cfg, cell));
            std::sort(truth.begin(), truth.end());
            const auto p = template_attacker(d);
            CHECK(p.entries() == truth);
            CHECK(template_attacker(d).entries() == p.entries());
            CHECK(d.materialized_rows() == 0);  // rows are cleared after templating
        }
    }
    SUBCASE("a row without owned neighbours cannot be templated") {
        auto d = one_cell_dram(10, 5, 0);
        CHECK_THROWS_AS(template_rows(d, {{0, 10}}), ConfigError);
    }
}

TEST_CASE("reboot is keyed, moves no cell, and clears memory") {
    CellSpec cs;
    cs.seed = 41;
    const auto cfg = DramConfig::desk();
    Dram d(cfg, synthesize_cells(cfg, cs), 1);
    const auto base = d.cells();
    d.fill_row(0, 3, 0xAA);
    d.reboot(5, 0.5);
    CHECK(d.byte(0, 3, 0) == 0);
    const auto first = d.cells();
    d.reboot(6, 0.5);
    d.reboot(5, 0.5);
    CHECK(d.cells().size() == base.size());
    std::size_t toggled = 0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        REQUIRE(d.cells()[i].dir == first[i].dir);
        REQUIRE(d.cells()[i].set == base[i].set);
        REQUIRE(d.cells()[i].row == base[i].row);
        REQUIRE(d.cells()[i].col_bit == base[i].col_bit);
        toggled += d.cells()[i].dir != base[i].dir;
    }
    CHECK(toggled > base.size() / 4);
    CHECK(toggled < 3 * base.size() / 4);

    d.reboot(7, 1.0);
    for (std::size_t i = 0; i < base.size(); ++i) REQUIRE(d.cells()[i].dir == 1 - base[i].dir);
    d.reboot(8, 0.0);
    for (std::size_t i = 0; i < base.size(); ++i) REQUIRE(d.cells()[i].dir == base[i].dir);
    CHECK_THROWS_AS(d.reboot(1, 1.5), ConfigError);
}

TEST_CASE("single-sided mode templates a subset of the cells") {
    auto cfg = DramConfig::desk();
    CellSpec cs;
    cs.seed = 51;
    cs.single_sided_rate = 0.2;
    const auto cells = synthesize_cells(cfg, cs);
    Dram dd(cfg, cells, 1);
    dd.assign_attacker(0.5, 3);
    const auto both = template_attacker(dd);
    cfg.hammer_mode = HammerMode::Single;
    Dram ds(cfg, cells, 1);
    ds.assign_attacker(0.5, 3);
    const auto single = template_attacker(ds);
    CHECK(single.size() > 0);
    CHECK(single.size() < both.size());
    // Every single-sided entry is a capable cell.
    std::set<std::pair<std::uint64_t, int>> capable;
    for (const auto& c : cells)
        if (c.single_sided) {
            const auto e = project(cfg, c);
            capable.insert({e.pfn, e.bop});
        }
    for (const auto& e : single.entries()) CHECK(capable.count({e.pfn, e.bop}) == 1);
}

TEST_CASE("probabilistic cells yield probability estimates") {
    auto cfg = DramConfig::desk();
    CellSpec cs;
    cs.seed = 61;
    cs.probabilistic = true;
    Dram d(cfg, synthesize_cells(cfg, cs), 9);
    d.assign_attacker(0.2, 4);
    const auto p = template_attacker(d, 8);
    CHECK(p.size() > 0);
    bool fractional = false;
    for (const auto& e : p.entries()) {
        CHECK(e.prob > 0.0);
        CHECK(e.prob <= 1.0);
        fractional = fractional || e.prob < 1.0;
    }
    CHECK(fractional);
}

TEST_CASE("profile sampling") {
    std::vector<ProfileEntry> big;
    for (std::uint64_t i = 0; i < 600000; ++i) big.push_back({i / 4, int(i % 4) * 97, int(i % 2), 1.0});
    const FlipProfile p(big);
    CHECK(sample_profile(p, 1.0, 3).entries() == p.entries());
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto s = sample_profile(p, 0.01, seed);
        CHECK(s.size() >= 5700);
        CHECK(s.size() <= 6300);
    }
    CHECK(sample_profile(p, 0.01, 2).entries() == sample_profile(p, 0.01, 2).entries());
    const FlipProfile tiny(std::vector<ProfileEntry>(big.begin(), big.begin() + 50));
    CHECK(sample_profile(tiny, 0.001, 1).empty());
    CHECK_THROWS_AS(sample_profile(p, 0.0, 1), ConfigError);
}

TEST_CASE("profile index and CSV round trip") {
    const FlipProfile p({{9, 5, 0, 1.0}, {2, 5, 0, 0.5}, {2, 7, 1, 1.0}, {4, 5, 1, 1.0}});
    CHECK(p.frames(5, 0) == std::vector<std::uint64_t>{2, 9});
    CHECK(p.frames(5, 1) == std::vector<std::uint64_t>{4});
    CHECK(p.frames(6, 0).empty());
    CHECK(p.at_frame(2).size() == 2);
    CHECK(p.vulnerable_frames() == 3);
    const auto back = FlipProfile::from_csv(p.to_csv());
    CHECK(back.entries() == p.entries());
    CHECK_THROWS_AS(FlipProfile::from_csv("pfn,bop,dir,prob\n1,99999,0,1\n"), FormatError);
}
