#include "rowflip/errors.hpp"
#include "rowflip/massage.hpp"

namespace rf::massage {

PageFrameCache::PageFrameCache(std::size_t threshold) : threshold_(threshold) {
    if (threshold < 2) throw ConfigError("recycling threshold must be at least 2");
}

void PageFrameCache::free_page(std::uint64_t pfn) {
    lifo_.push_back(pfn);
    if (lifo_.size() < threshold_) return;
    // How much spills is not pinned down anywhere; half keeps the hot end.
    const std::size_t n = lifo_.size() / 2;
    for (std::size_t i = 0; i < n; ++i) {
        global_.push_back(lifo_.front());
        lifo_.pop_front();
    }
    ++spills_;
}

std::uint64_t PageFrameCache::alloc() {
    if (!lifo_.empty()) {
        const std::uint64_t p = lifo_.back();
        lifo_.pop_back();
        return p;
    }
    if (global_.empty()) throw Error("out of free frames");
    const std::uint64_t p = global_.front();
    global_.pop_front();
    return p;
}

std::vector<std::uint64_t> PageFrameCache::contents() const { return {lifo_.rbegin(), lifo_.rend()}; }

}  // namespace rf::massage
