#include <algorithm>
#include <fstream>
#include <sstream>

#include "rowflip/dram.hpp"
#include "rowflip/errors.hpp"

namespace rf::dram {

FlipProfile::FlipProfile(std::vector<ProfileEntry> entries) : entries_(std::move(entries)) {
    for (const auto& e : entries_) {
        if (e.bop < 0 || e.bop >= kPageBits) throw OutOfRangeError("profile bop out of range");
        if (e.dir != 0 && e.dir != 1) throw ConfigError("profile direction must be 0 or 1");
        if (!(e.prob > 0.0 && e.prob <= 1.0)) throw ConfigError("profile probability must be in (0, 1]");
    }
    std::sort(entries_.begin(), entries_.end());
    index();
}

void FlipProfile::index() {
    by_key_.clear();
    for (const auto& e : entries_) {
        auto& v = by_key_[e.bop * 2 + e.dir];
        if (v.empty() || v.back() != e.pfn) v.push_back(e.pfn);
    }
}

const std::vector<std::uint64_t>& FlipProfile::frames(int bop, int dir) const {
    static const std::vector<std::uint64_t> none;
    const auto it = by_key_.find(bop * 2 + dir);
    return it == by_key_.end() ? none : it->second;
}

std::vector<ProfileEntry> FlipProfile::at_frame(std::uint64_t pfn) const {
    const auto b = std::lower_bound(entries_.begin(), entries_.end(), pfn,
                                    [](const ProfileEntry& e, std::uint64_t p) { return e.pfn < p; });
    std::vector<ProfileEntry> out;
    for (auto it = b; it != entries_.end() && it->pfn == pfn; ++it) out.push_back(*it);
    return out;
}

std::size_t FlipProfile::vulnerable_frames() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (i == 0 || entries_[i].pfn != entries_[i - 1].pfn) ++n;
    return n;
}

std::string FlipProfile::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "pfn,bop,direction,probability\n";
    for (const auto& e : entries_) out << e.pfn << ',' << e.bop << ',' << e.dir << ',' << e.prob << '\n';
    return out.str();
}

FlipProfile FlipProfile::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<ProfileEntry> entries;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (lineno == 1 && line.rfind("pfn", 0) == 0)) continue;
        std::istringstream f(line);
        ProfileEntry e;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(f >> e.pfn >> c1 >> e.bop >> c2 >> e.dir >> c3 >> e.prob) || c1 != ',' || c2 != ',' || c3 != ',')
            throw FormatError("profile line " + std::to_string(lineno) + ": expected pfn,bop,direction,probability");
        entries.push_back(e);
    }
    try {
        return FlipProfile(std::move(entries));
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(std::string("profile: ") + e.what());
    }
}

void FlipProfile::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write profile: " + path);
    f << to_csv();
}

FlipProfile FlipProfile::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open profile: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_csv(ss.str());
}

FlipProfile sample_profile(const FlipProfile& p, double rate, std::uint64_t seed) {
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("sampling rate must be in (0, 1]");
    if (rate == 1.0) return p;
    Rng rng(seed);
    std::vector<ProfileEntry> kept;
    for (const auto& e : p.entries())
        if (rng.bernoulli(rate)) kept.push_back(e);
    return FlipProfile(std::move(kept));
}

}  // namespace rf::dram
