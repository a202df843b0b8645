#include "rowflip/dram.hpp"

#include "rowflip/errors.hpp"

namespace rf::dram {

DramConfig DramConfig::desk() {
    DramConfig c;
    c.banks_per_dimm = 2;
    c.rows_per_bank = 256;
    return c;
}

DramConfig DramConfig::full() { return DramConfig{}; }

DramConfig DramConfig::dual() {
    DramConfig c;
    c.channels = 2;
    c.in_row_page_size = static_cast<int>(kPageBytes) / 2;
    return c;
}

DramConfig DramConfig::quad() {
    DramConfig c;
    c.dimms = 4;
    return c;
}

DramConfig DramConfig::preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "quad") return quad();
    if (name == "full") return full();
    if (name == "dual") return dual();
    throw ConfigError("unknown geometry preset: " + name);
}

DramConfig DramConfig::from_kv(const KvConfig& kv) {
    DramConfig c = preset(kv.get("preset", "quad"));
    c.channels = static_cast<int>(kv.get_int("channels", c.channels));
    c.dimms = static_cast<int>(kv.get_int("dimms", c.dimms));
    c.banks_per_dimm = static_cast<int>(kv.get_int("banks", c.banks_per_dimm));
    c.rows_per_bank = static_cast<int>(kv.get_int("rows", c.rows_per_bank));
    c.row_bytes = static_cast<int>(kv.get_int("row_bytes", c.row_bytes));
    c.in_row_page_size = static_cast<int>(kPageBytes) / c.channels;
    const std::string mode = kv.get("hammer_mode", "double");
    if (mode == "double")
        c.hammer_mode = HammerMode::Double;
    else if (mode == "single")
        c.hammer_mode = HammerMode::Single;
    else
        throw ConfigError("hammer_mode must be double or single, got " + mode);
    c.validate();
    return c;
}

std::uint64_t DramConfig::pfn_count() const {
    return std::uint64_t(pages_per_row()) * std::uint64_t(banks_total()) * std::uint64_t(rows_per_bank);
}

void DramConfig::validate() const {
    if (channels != 1 && channels != 2) throw ConfigError("channels must be 1 or 2");
    if (dimms < 1 || banks_per_dimm < 1 || rows_per_bank < 3) throw ConfigError("geometry needs banks and >= 3 rows");
    if (in_row_page_size * channels != static_cast<int>(kPageBytes))
        throw ConfigError("in-row page size must split a 4 KiB page evenly across channels");
    if (row_bytes <= 0 || row_bytes % in_row_page_size != 0)
        throw ConfigError("row size must be a multiple of the in-row page size");
}

AddressMap::AddressMap(const DramConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

int AddressMap::slot_of(std::uint64_t pfn) const { return static_cast<int>(pfn % cfg_.pages_per_row()); }

int AddressMap::bank_of(std::uint64_t pfn) const {
    return static_cast<int>((pfn / cfg_.pages_per_row()) % cfg_.banks_total());
}

int AddressMap::row_of(std::uint64_t pfn) const {
    return static_cast<int>(pfn / cfg_.pages_per_row() / cfg_.banks_total());
}

Location AddressMap::locate(std::uint64_t pfn, int offset) const {
    if (pfn >= cfg_.pfn_count()) throw OutOfRangeError("pfn out of range: " + std::to_string(pfn));
    if (offset < 0 || offset >= static_cast<int>(kPageBytes)) throw OutOfRangeError("page offset out of range");
    const int ch = offset / cfg_.in_row_page_size;
    return {ch * cfg_.banks_total() + bank_of(pfn), row_of(pfn),
            slot_of(pfn) * cfg_.in_row_page_size + offset % cfg_.in_row_page_size};
}

std::vector<InRowPage> AddressMap::page_parts(std::uint64_t pfn) const {
    std::vector<InRowPage> parts;
    for (int ch = 0; ch < cfg_.channels; ++ch) {
        const Location l = locate(pfn, ch * cfg_.in_row_page_size);
        parts.push_back({l.set, l.row, l.col_byte, cfg_.in_row_page_size, ch * cfg_.in_row_page_size});
    }
    return parts;
}

PageByte AddressMap::resident(const Location& loc) const {
    if (loc.set < 0 || loc.set >= cfg_.sets() || loc.row < 0 || loc.row >= cfg_.rows_per_bank || loc.col_byte < 0 ||
        loc.col_byte >= cfg_.row_bytes)
        throw OutOfRangeError("DRAM location out of range");
    const int ch = loc.set / cfg_.banks_total();
    const int bank = loc.set % cfg_.banks_total();
    const int slot = loc.col_byte / cfg_.in_row_page_size;
    const std::uint64_t pfn =
        (std::uint64_t(loc.row) * cfg_.banks_total() + std::uint64_t(bank)) * cfg_.pages_per_row() + slot;
    return {pfn, ch * cfg_.in_row_page_size + loc.col_byte % cfg_.in_row_page_size};
}

std::vector<std::uint64_t> AddressMap::row_frames(int set, int row) const {
    std::vector<std::uint64_t> out;
    for (int slot = 0; slot < cfg_.pages_per_row(); ++slot)
        out.push_back(resident({set, row, slot * cfg_.in_row_page_size}).pfn);
    return out;
}

bool AddressMap::neighbour(std::uint64_t pfn, int drow, std::uint64_t& out) const {
    const long long row = static_cast<long long>(row_of(pfn)) + drow;
    if (row < 0 || row >= cfg_.rows_per_bank) return false;
    const std::uint64_t stride = std::uint64_t(cfg_.pages_per_row()) * cfg_.banks_total();
    out = drow >= 0 ? pfn + stride * std::uint64_t(drow) : pfn - stride * std::uint64_t(-drow);
    return true;
}

}  // namespace rf::dram
