#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rowflip/kv_config.hpp"
#include "rowflip/rng.hpp"

namespace rf::dram {

inline constexpr std::size_t kPageBytes = 4096;
inline constexpr int kPageBits = static_cast<int>(kPageBytes * 8);

// Paper constants used only for labelled time estimates.
inline constexpr double kSecondsPerHammerAction = 0.190;
inline constexpr double kTemplatedFlipsPerSecond = 2.2;

enum class HammerMode { Double, Single };

struct DramConfig {
    int channels = 1;
    int dimms = 1;
    int banks_per_dimm = 16;
    int rows_per_bank = 32768;
    int row_bytes = 8192;
    int in_row_page_size = 4096;  // 4096 / channels
    HammerMode hammer_mode = HammerMode::Double;

    // 2 banks x 256 rows x 8 KiB, for tests that run in milliseconds.
    static DramConfig desk();
    // One 16-bank DIMM with 32768 rows per bank.
    static DramConfig full();
    // Two channels of one such DIMM each; a page splits across both.
    static DramConfig dual();
    // Four such DIMMs on one channel; templating 20% of it yields a profile
    // of roughly half a million flips.
    static DramConfig quad();
    static DramConfig preset(const std::string& name);
    // Keys: preset, channels, dimms, banks, rows, row_bytes, hammer_mode.
    static DramConfig from_kv(const KvConfig& kv);

    int banks_total() const { return dimms * banks_per_dimm; }
    int sets() const { return channels * banks_total(); }
    int pages_per_row() const { return row_bytes / in_row_page_size; }
    std::uint64_t pfn_count() const;
    void validate() const;
};

// (set, row, column) of one byte; col_byte counts bytes within the row.
struct Location {
    int set = 0;
    int row = 0;
    int col_byte = 0;
    friend auto operator<=>(const Location&, const Location&) = default;
};

// The part of a physical page that lives in one DRAM row.
struct InRowPage {
    int set = 0;
    int row = 0;
    int col_byte = 0;   // first byte of the part within the row
    int bytes = 0;
    int page_offset = 0;  // first page byte stored here
};

struct PageByte {
    std::uint64_t pfn = 0;
    int offset = 0;
};

// pfn -> (slot, bank, row): slot = pfn % pages_per_row, then bank and row
// from the remaining bits. Byte o of a page goes to channel o / in_row_page_size.
class AddressMap {
public:
    explicit AddressMap(const DramConfig& cfg);

    Location locate(std::uint64_t pfn, int offset) const;
    std::vector<InRowPage> page_parts(std::uint64_t pfn) const;
    PageByte resident(const Location& loc) const;
    // Frames with bytes in (set, row), in slot order.
    std::vector<std::uint64_t> row_frames(int set, int row) const;
    // Frame in the same slot and bank, `drow` rows away; false at the edges.
    bool neighbour(std::uint64_t pfn, int drow, std::uint64_t& out) const;
    int row_of(std::uint64_t pfn) const;
    int bank_of(std::uint64_t pfn) const;
    int slot_of(std::uint64_t pfn) const;
    const DramConfig& config() const { return cfg_; }

private:
    DramConfig cfg_;
};

// Direction convention matches TargetBit::mode: 0 is 1->0, 1 is 0->1.
struct VulnCell {
    int set = 0;
    int row = 0;
    int col_bit = 0;  // col_byte * 8 + bit, bit 7 = byte MSB
    int base_dir = 0;
    int dir = 0;
    double prob = 1.0;
    bool single_sided = false;
};

enum class Density { Dense, Moderate, Low, Rare, Explicit };

struct CellSpec {
    Density density = Density::Dense;
    double per_bank = 0.0;        // Explicit only: cells per bank at this geometry
    double multi_cell_page = 0.7;  // chance a vulnerable in-row page carries >= 2 cells
    double one_to_zero = 0.7;
    double single_sided_rate = 0.0056;
    bool probabilistic = false;    // draw per-cell probabilities in [0.5, 1) instead of 1
    std::uint64_t seed = 1;

    static Density parse_density(const std::string& s);
};

// Per-bank cell count a preset asks for at this geometry, before the draw
// within the 35K..47K band.
double density_scale(Density d);
std::vector<VulnCell> synthesize_cells(const DramConfig& cfg, const CellSpec& spec);

struct ProfileEntry {
    std::uint64_t pfn = 0;
    int bop = 0;
    int dir = 0;
    double prob = 1.0;
    friend auto operator<=>(const ProfileEntry&, const ProfileEntry&) = default;
};

class FlipProfile {
public:
    FlipProfile() = default;
    explicit FlipProfile(std::vector<ProfileEntry> entries);

    const std::vector<ProfileEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    // Frames carrying a cell at (bop, dir), ascending.
    const std::vector<std::uint64_t>& frames(int bop, int dir) const;
    std::vector<ProfileEntry> at_frame(std::uint64_t pfn) const;
    std::size_t vulnerable_frames() const;

    std::string to_csv() const;
    static FlipProfile from_csv(const std::string& text);
    void save(const std::string& path) const;
    static FlipProfile load(const std::string& path);

private:
    void index();

    std::vector<ProfileEntry> entries_;  // sorted by (pfn, bop, dir)
    std::map<int, std::vector<std::uint64_t>> by_key_;  // bop * 2 + dir
};

// Keeps each entry independently with probability `rate`.
FlipProfile sample_profile(const FlipProfile& p, double rate, std::uint64_t seed);

enum class Owner : std::uint8_t { Free = 0, Attacker = 1, Victim = 2 };

struct FlipEvent {
    int set = 0;
    int row = 0;
    int col_bit = 0;
    int new_value = 0;
    friend auto operator<=>(const FlipEvent&, const FlipEvent&) = default;
};

class Dram {
public:
    Dram(const DramConfig& cfg, std::vector<VulnCell> cells, std::uint64_t hammer_seed = 1);

    const DramConfig& config() const { return map_.config(); }
    const AddressMap& address() const { return map_; }
    const std::vector<VulnCell>& cells() const { return cells_; }
    // Cells of one row, as a [first, last) index range into cells().
    std::pair<std::size_t, std::size_t> row_cells(int set, int row) const;

    // ---- storage ----
    int bit(int set, int row, int col_bit) const;
    void set_bit(int set, int row, int col_bit, int v);
    std::uint8_t byte(int set, int row, int col_byte) const;
    void set_byte(int set, int row, int col_byte, std::uint8_t v);
    void fill_row(int set, int row, std::uint8_t v);
    std::vector<std::uint8_t> read_page(std::uint64_t pfn) const;
    void write_page(std::uint64_t pfn, const std::vector<std::uint8_t>& data);
    void fill_page(std::uint64_t pfn, std::uint8_t v);
    std::size_t materialized_rows() const { return rows_.size(); }

    // ---- ownership ----
    Owner owner(std::uint64_t pfn) const { return owner_[pfn]; }
    void set_owner(std::uint64_t pfn, Owner o) { owner_[pfn] = o; }
    // Gives the attacker a contiguous run of frames covering `fraction` of
    // memory, starting at a seeded row boundary. Returns the first frame.
    std::uint64_t assign_attacker(double fraction, std::uint64_t seed);
    std::size_t owned_count(Owner o) const;
    bool row_owned(int set, int row, Owner o) const;

    // ---- disturbance ----
    // Hammers the given neighbours of `victim_row`; two aggressors hammer
    // double-sided, one single-sided. Returns the flips, in column order.
    std::vector<FlipEvent> hammer(int set, int victim_row, const std::vector<int>& aggressor_rows);
    // Direction of every cell becomes base ^ toggle, toggle keyed on (cell, seed).
    void reboot(std::uint64_t boot_seed, double toggle_probability);
    std::uint64_t boot_seed() const { return boot_seed_; }

private:
    struct Row {
        bool solid = true;
        std::uint8_t fill = 0;
        std::vector<std::uint8_t> data;
    };
    static std::uint64_t key(int set, int row) { return (std::uint64_t(set) << 32) | std::uint32_t(row); }
    void check_row(int set, int row) const;
    Row& materialize(int set, int row);

    AddressMap map_;
    std::vector<VulnCell> cells_;  // sorted by (set, row, col_bit)
    std::map<std::uint64_t, Row> rows_;
    std::vector<Owner> owner_;
    Rng draw_;
    std::uint64_t boot_seed_ = 0;
};

// Templates the given victim rows with both stripe polarities. Each row's
// neighbours must be attacker-owned; every touched row is cleared afterwards.
// `trials` hammers per polarity estimate each cell's probability.
FlipProfile template_rows(Dram& d, const std::vector<std::pair<int, int>>& rows, int trials = 1);
// Rows the attacker can template: it owns the row and the aggressors it needs.
std::vector<std::pair<int, int>> attacker_template_rows(const Dram& d);
FlipProfile template_attacker(Dram& d, int trials = 1);

}  // namespace rf::dram
