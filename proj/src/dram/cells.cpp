#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "rowflip/dram.hpp"
#include "rowflip/errors.hpp"

namespace rf::dram {

Density CellSpec::parse_density(const std::string& s) {
    if (s == "dense") return Density::Dense;
    if (s == "moderate") return Density::Moderate;
    if (s == "low") return Density::Low;
    if (s == "rare") return Density::Rare;
    if (s == "explicit") return Density::Explicit;
    throw ConfigError("unknown density preset: " + s);
}

double density_scale(Density d) {
    switch (d) {
        case Density::Dense: return 1.0;
        case Density::Moderate: return 0.1;
        case Density::Low: return 0.01;
        case Density::Rare: return 0.001;
        case Density::Explicit: return 0.0;
    }
    return 0.0;
}

std::vector<VulnCell> synthesize_cells(const DramConfig& cfg, const CellSpec& spec) {
    cfg.validate();
    const std::uint64_t bank_bits = std::uint64_t(cfg.rows_per_bank) * std::uint64_t(cfg.row_bytes) * 8;
    // Bank size relative to the 32768-row, 8 KiB-row banks the 35K..47K band refers to.
    const double size_ratio = double(bank_bits) / (32768.0 * 8192.0 * 8.0);
    const int page_bits = cfg.in_row_page_size * 8;

    std::vector<VulnCell> cells;
    for (int set = 0; set < cfg.sets(); ++set) {
        Rng rng(derive_seed(spec.seed, std::uint64_t(set)));
        double want = spec.per_bank;
        if (spec.density != Density::Explicit) want = rng.uniform(35000.0, 47000.0) * density_scale(spec.density) * size_ratio;
        if (want < 0) throw ConfigError("cell count must be non-negative");
        const auto n = static_cast<std::uint64_t>(std::llround(want));
        if (n > bank_bits) throw ConfigError("requested cells exceed the bank's capacity");

        std::unordered_set<std::uint64_t> taken;
        std::uint64_t made = 0;
        while (made < n) {
            const int row = static_cast<int>(rng.below(std::uint64_t(cfg.rows_per_bank)));
            const int slot = static_cast<int>(rng.below(std::uint64_t(cfg.pages_per_row())));
            int k = 1;
            if (rng.bernoulli(spec.multi_cell_page)) {
                k = 2;
                while (rng.bernoulli(0.5)) ++k;
            }
            for (int i = 0; i < k && made < n; ++i) {
                const int col = slot * page_bits + static_cast<int>(rng.below(std::uint64_t(page_bits)));
                const int dir = rng.bernoulli(spec.one_to_zero) ? 0 : 1;
                const double prob = spec.probabilistic ? rng.uniform(0.5, 1.0) : 1.0;
                const bool single = rng.bernoulli(spec.single_sided_rate);
                const std::uint64_t id = std::uint64_t(row) * std::uint64_t(cfg.row_bytes) * 8 + std::uint64_t(col);
                if (!taken.insert(id).second) continue;
                cells.push_back({set, row, col, dir, dir, prob, single});
                ++made;
            }
        }
    }
    std::sort(cells.begin(), cells.end(), [](const VulnCell& a, const VulnCell& b) {
        return std::tie(a.set, a.row, a.col_bit) < std::tie(b.set, b.row, b.col_bit);
    });
    return cells;
}

}  // namespace rf::dram
