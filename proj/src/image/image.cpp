#include "rowflip/image.hpp"

#include <algorithm>

#include "rowflip/errors.hpp"

namespace rf::image {

WeightImage WeightImage::build(const qnn::QuantizedModel& m) {
    m.validate();
    if (m.bits != 8) throw ConfigError("weight image needs 8-bit weights, model has " + std::to_string(m.bits));
    WeightImage img;
    img.shape_ = m;
    img.bytes_ = qnn::weight_block(m);
    img.weight_bytes_ = img.bytes_.size();
    if (img.weight_bytes_ == 0) throw ConfigError("model has no weights");
    img.bytes_.resize((img.weight_bytes_ + kPageBytes - 1) / kPageBytes * kPageBytes, 0);
    img.header_pages_ = static_cast<int>(qnn::checkpoint_weight_offset(m) / kPageBytes);
    img.layer_offset_.assign(m.layers.size(), 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        img.layer_offset_[i] = off;
        if (!m.layers[i].weight_q.empty()) img.weighted_.push_back(i);
        off += m.layers[i].weight_q.size();
    }
    return img;
}

std::vector<std::uint8_t> WeightImage::page(int page) const {
    if (page < 1 || static_cast<std::size_t>(page) > page_count()) throw OutOfRangeError("page out of range");
    const auto b = bytes_.begin() + static_cast<std::ptrdiff_t>((page - 1) * kPageBytes);
    return {b, b + static_cast<std::ptrdiff_t>(kPageBytes)};
}

PageAddr WeightImage::bit_to_addr(const qnn::BitRef& ref) const {
    qnn::check_ref(shape_, ref);
    const std::size_t gbi = (layer_offset_[ref.layer] + ref.index) * 8 + static_cast<std::size_t>(ref.bit);
    return {1 + static_cast<int>(gbi / kPageBits), static_cast<int>(gbi % kPageBits)};
}

bool WeightImage::addressable(const PageAddr& a) const {
    if (a.page < 1 || a.bop < 0 || a.bop >= kPageBits) return false;
    const std::size_t byte = static_cast<std::size_t>(a.page - 1) * kPageBytes + static_cast<std::size_t>(a.bop / 8);
    return byte < weight_bytes_;
}

void WeightImage::check(const PageAddr& a) const {
    if (!addressable(a))
        throw OutOfRangeError("address (" + std::to_string(a.page) + ", " + std::to_string(a.bop) +
                              ") is not a weight bit");
}

qnn::BitRef WeightImage::addr_to_bit(const PageAddr& a) const {
    check(a);
    const std::size_t byte = static_cast<std::size_t>(a.page - 1) * kPageBytes + static_cast<std::size_t>(a.bop / 8);
    // Last weighted layer whose offset is <= byte.
    auto it = std::upper_bound(weighted_.begin(), weighted_.end(), byte,
                               [&](std::size_t b, std::size_t layer) { return b < layer_offset_[layer]; });
    const std::size_t layer = *(it - 1);
    return {layer, byte - layer_offset_[layer], a.bop % 8};
}

int WeightImage::stored_bit(const PageAddr& a) const {
    check(a);
    const std::size_t byte = static_cast<std::size_t>(a.page - 1) * kPageBytes + static_cast<std::size_t>(a.bop / 8);
    return (bytes_[byte] >> (a.bop % 8)) & 1;
}

TargetBit WeightImage::target_for(const qnn::BitRef& ref) const {
    const PageAddr a = bit_to_addr(ref);
    return {a.page, a.bop, stored_bit(a) == 1 ? 0 : 1};
}

void WeightImage::apply_flips(const std::vector<TargetBit>& flips) {
    for (const auto& f : flips) {
        if (f.mode != 0 && f.mode != 1) throw ConfigError("flip mode must be 0 or 1");
        if (stored_bit(f.addr()) != from_bit(f.mode))
            throw StaleModeError("stored bit at (" + std::to_string(f.page) + ", " + std::to_string(f.bop) +
                                 ") does not match mode " + std::to_string(f.mode));
    }
    std::vector<TargetBit> sorted = flips;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].addr() == sorted[i - 1].addr()) throw ConfigError("flip list names a bit twice");
    for (const auto& f : flips) {
        const std::size_t byte = static_cast<std::size_t>(f.page - 1) * kPageBytes + static_cast<std::size_t>(f.bop / 8);
        bytes_[byte] = static_cast<std::uint8_t>(bytes_[byte] ^ (1u << (f.bop % 8)));
    }
}

void WeightImage::set_page(int page, const std::vector<std::uint8_t>& data) {
    if (page < 1 || static_cast<std::size_t>(page) > page_count()) throw OutOfRangeError("page out of range");
    if (data.size() != kPageBytes) throw ConfigError("page data must be 4096 bytes");
    std::copy(data.begin(), data.end(), bytes_.begin() + static_cast<std::ptrdiff_t>((page - 1) * kPageBytes));
}

qnn::QuantizedModel WeightImage::to_model() const {
    qnn::QuantizedModel m = shape_;
    qnn::load_weight_block(m, bytes_.data(), weight_bytes_);
    return m;
}

qnn::QuantizedModel apply_to_model(const qnn::QuantizedModel& m, const std::vector<TargetBit>& flips) {
    WeightImage img = WeightImage::build(m);
    img.apply_flips(flips);
    return img.to_model();
}

}  // namespace rf::image
