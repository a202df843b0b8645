#include <algorithm>
#include <cmath>
#include <tuple>

#include "rowflip/dram.hpp"
#include "rowflip/errors.hpp"

namespace rf::dram {

namespace {

bool cell_less(const VulnCell& a, const VulnCell& b) {
    return std::tie(a.set, a.row, a.col_bit) < std::tie(b.set, b.row, b.col_bit);
}

}  // namespace

Dram::Dram(const DramConfig& cfg, std::vector<VulnCell> cells, std::uint64_t hammer_seed)
    : map_(cfg), cells_(std::move(cells)), owner_(cfg.pfn_count(), Owner::Free), draw_(hammer_seed) {
    std::sort(cells_.begin(), cells_.end(), cell_less);
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        const auto& c = cells_[i];
        check_row(c.set, c.row);
        if (c.col_bit < 0 || c.col_bit >= cfg.row_bytes * 8) throw OutOfRangeError("cell column out of range");
        if (c.prob <= 0.0 || c.prob > 1.0) throw ConfigError("cell probability must be in (0, 1]");
        if (i > 0 && !cell_less(cells_[i - 1], c)) throw ConfigError("duplicate vulnerable cell");
    }
}

void Dram::check_row(int set, int row) const {
    const auto& c = config();
    if (set < 0 || set >= c.sets() || row < 0 || row >= c.rows_per_bank)
        throw OutOfRangeError("row (" + std::to_string(set) + ", " + std::to_string(row) + ") out of range");
}

std::pair<std::size_t, std::size_t> Dram::row_cells(int set, int row) const {
    VulnCell lo{set, row, -1, 0, 0, 1.0, false};
    VulnCell hi{set, row, config().row_bytes * 8, 0, 0, 1.0, false};
    const auto b = std::lower_bound(cells_.begin(), cells_.end(), lo, cell_less);
    const auto e = std::lower_bound(b, cells_.end(), hi, cell_less);
    return {static_cast<std::size_t>(b - cells_.begin()), static_cast<std::size_t>(e - cells_.begin())};
}

Dram::Row& Dram::materialize(int set, int row) {
    Row& r = rows_[key(set, row)];
    if (r.solid) {
        r.data.assign(static_cast<std::size_t>(config().row_bytes), r.fill);
        r.solid = false;
    }
    return r;
}

std::uint8_t Dram::byte(int set, int row, int col_byte) const {
    check_row(set, row);
    const auto it = rows_.find(key(set, row));
    if (it == rows_.end()) return 0;
    if (it->second.solid) return it->second.fill;
    return it->second.data[static_cast<std::size_t>(col_byte)];
}

void Dram::set_byte(int set, int row, int col_byte, std::uint8_t v) {
    check_row(set, row);
    if (col_byte < 0 || col_byte >= config().row_bytes) throw OutOfRangeError("column out of range");
    materialize(set, row).data[static_cast<std::size_t>(col_byte)] = v;
}

int Dram::bit(int set, int row, int col_bit) const { return (byte(set, row, col_bit / 8) >> (col_bit % 8)) & 1; }

void Dram::set_bit(int set, int row, int col_bit, int v) {
    std::uint8_t b = byte(set, row, col_bit / 8);
    const auto mask = static_cast<std::uint8_t>(1u << (col_bit % 8));
    b = v ? static_cast<std::uint8_t>(b | mask) : static_cast<std::uint8_t>(b & ~mask);
    set_byte(set, row, col_bit / 8, b);
}

void Dram::fill_row(int set, int row, std::uint8_t v) {
    check_row(set, row);
    if (v == 0) {
        rows_.erase(key(set, row));
        return;
    }
    rows_[key(set, row)] = Row{true, v, {}};
}

std::vector<std::uint8_t> Dram::read_page(std::uint64_t pfn) const {
    std::vector<std::uint8_t> out(kPageBytes);
    for (const auto& p : map_.page_parts(pfn))
        for (int i = 0; i < p.bytes; ++i)
            out[static_cast<std::size_t>(p.page_offset + i)] = byte(p.set, p.row, p.col_byte + i);
    return out;
}

void Dram::write_page(std::uint64_t pfn, const std::vector<std::uint8_t>& data) {
    if (data.size() != kPageBytes) throw ConfigError("page data must be 4096 bytes");
    for (const auto& p : map_.page_parts(pfn)) {
        Row& r = materialize(p.set, p.row);
        std::copy_n(data.begin() + p.page_offset, p.bytes, r.data.begin() + p.col_byte);
    }
}

void Dram::fill_page(std::uint64_t pfn, std::uint8_t v) {
    for (const auto& p : map_.page_parts(pfn)) {
        Row& r = materialize(p.set, p.row);
        std::fill_n(r.data.begin() + p.col_byte, p.bytes, v);
    }
}

std::uint64_t Dram::assign_attacker(double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("attacker fraction must be in (0, 1]");
    const auto& c = config();
    const std::uint64_t stripe = std::uint64_t(c.pages_per_row()) * c.banks_total();
    const auto rows = static_cast<std::uint64_t>(std::ceil(fraction * c.rows_per_bank));
    Rng rng(seed);
    const std::uint64_t first_row = rows >= std::uint64_t(c.rows_per_bank) ? 0 : rng.below(c.rows_per_bank - rows + 1);
    const std::uint64_t first = first_row * stripe;
    for (std::uint64_t p = first; p < first + rows * stripe; ++p) owner_[p] = Owner::Attacker;
    return first;
}

std::size_t Dram::owned_count(Owner o) const { return static_cast<std::size_t>(std::count(owner_.begin(), owner_.end(), o)); }

bool Dram::row_owned(int set, int row, Owner o) const {
    for (auto pfn : map_.row_frames(set, row))
        if (owner_[pfn] != o) return false;
    return true;
}

std::vector<FlipEvent> Dram::hammer(int set, int victim_row, const std::vector<int>& aggressor_rows) {
    check_row(set, victim_row);
    if (aggressor_rows.empty() || aggressor_rows.size() > 2) throw ConfigError("hammer takes one or two aggressor rows");
    for (int a : aggressor_rows) {
        if (a != victim_row - 1 && a != victim_row + 1)
            throw OutOfRangeError("aggressor row " + std::to_string(a) + " is not adjacent to victim row " +
                                  std::to_string(victim_row));
        check_row(set, a);
    }
    if (aggressor_rows.size() == 2 && aggressor_rows[0] == aggressor_rows[1])
        throw ConfigError("double-sided hammering needs both neighbours");
    const bool single = aggressor_rows.size() == 1;

    std::vector<FlipEvent> flips;
    const auto [b, e] = row_cells(set, victim_row);
    for (std::size_t i = b; i < e; ++i) {
        const VulnCell& c = cells_[i];
        const int stored = bit(set, victim_row, c.col_bit);
        if (stored != (c.dir == 0 ? 1 : 0)) continue;
        bool striped = true;
        for (int a : aggressor_rows) striped = striped && bit(set, a, c.col_bit) != stored;
        if (!striped || (single && !c.single_sided)) continue;
        if (c.prob < 1.0 && !(draw_.uniform() < c.prob)) continue;
        set_bit(set, victim_row, c.col_bit, 1 - stored);
        flips.push_back({set, victim_row, c.col_bit, 1 - stored});
    }
    return flips;
}

void Dram::reboot(std::uint64_t boot_seed, double toggle_probability) {
    if (toggle_probability < 0.0 || toggle_probability > 1.0) throw ConfigError("toggle probability must be in [0, 1]");
    boot_seed_ = boot_seed;
    const std::uint64_t k = mix64(boot_seed);
    for (auto& c : cells_) {
        std::uint64_t h = hash_combine(k, std::uint64_t(c.set));
        h = hash_combine(h, std::uint64_t(c.row));
        h = hash_combine(h, std::uint64_t(c.col_bit));
        const bool toggle = unit_from_hash(h) < toggle_probability;
        c.dir = c.base_dir ^ (toggle ? 1 : 0);
    }
    // Memory content does not survive a power cycle.
    rows_.clear();
}

std::vector<std::pair<int, int>> attacker_template_rows(const Dram& d) {
    const auto& c = d.config();
    std::vector<std::pair<int, int>> rows;
    for (int set = 0; set < c.sets(); ++set) {
        std::vector<char> owned(static_cast<std::size_t>(c.rows_per_bank));
        for (int r = 0; r < c.rows_per_bank; ++r) owned[r] = d.row_owned(set, r, Owner::Attacker);
        for (int r = 0; r < c.rows_per_bank; ++r) {
            if (!owned[r]) continue;
            const bool up = r > 0 && owned[r - 1];
            const bool down = r + 1 < c.rows_per_bank && owned[r + 1];
            if (c.hammer_mode == HammerMode::Double ? (up && down) : (up || down)) rows.emplace_back(set, r);
        }
    }
    return rows;
}

FlipProfile template_rows(Dram& d, const std::vector<std::pair<int, int>>& rows, int trials) {
    if (trials < 1) throw ConfigError("templating needs at least one trial");
    const auto& c = d.config();
    const auto& addr = d.address();
    std::vector<ProfileEntry> out;
    for (const auto& [set, row] : rows) {
        std::vector<int> aggr;
        const bool up = row > 0 && d.row_owned(set, row - 1, Owner::Attacker);
        const bool down = row + 1 < c.rows_per_bank && d.row_owned(set, row + 1, Owner::Attacker);
        if (c.hammer_mode == HammerMode::Double) {
            if (!up || !down) throw ConfigError("templated row needs attacker-owned neighbours on both sides");
            aggr = {row - 1, row + 1};
        } else {
            if (!up && !down) throw ConfigError("templated row needs an attacker-owned neighbour");
            aggr = {up ? row - 1 : row + 1};
        }
        if (!d.row_owned(set, row, Owner::Attacker)) throw ConfigError("templated row is not attacker-owned");

        const auto [b, e] = d.row_cells(set, row);
        std::vector<int> hits(e - b, 0);
        for (int polarity = 0; polarity < 2; ++polarity) {
            // polarity 0 stores 0s under 1-aggressors and finds 0->1 cells.
            const std::uint8_t victim = polarity == 0 ? 0x00 : 0xFF;
            std::fill(hits.begin(), hits.end(), 0);
            for (int t = 0; t < trials; ++t) {
                d.fill_row(set, row, victim);
                for (int a : aggr) d.fill_row(set, a, static_cast<std::uint8_t>(~victim));
                // Flips come back in cell order.
                std::size_t i = b;
                for (const auto& f : d.hammer(set, row, aggr)) {
                    while (d.cells()[i].col_bit != f.col_bit) ++i;
                    ++hits[i - b];
                }
            }
            for (std::size_t i = b; i < e; ++i) {
                if (hits[i - b] == 0) continue;
                const auto& cell = d.cells()[i];
                const PageByte pb = addr.resident({set, row, cell.col_bit / 8});
                out.push_back({pb.pfn, pb.offset * 8 + cell.col_bit % 8, polarity == 0 ? 1 : 0,
                               double(hits[i - b]) / double(trials)});
            }
        }
        d.fill_row(set, row, 0);
        for (int a : aggr) d.fill_row(set, a, 0);
    }
    return FlipProfile(std::move(out));
}

FlipProfile template_attacker(Dram& d, int trials) { return template_rows(d, attacker_template_rows(d), trials); }

}  // namespace rf::dram
