#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rowflip/qnn.hpp"

namespace rf::image {

inline constexpr std::size_t kPageBytes = qnn::kPageBytes;
inline constexpr int kPageBits = static_cast<int>(kPageBytes * 8);

// 1-based weight-block page and bit offset inside it. bop = byte * 8 + bit,
// with bit 7 the byte's most significant bit.
struct PageAddr {
    int page = 1;
    int bop = 0;
    friend auto operator<=>(const PageAddr&, const PageAddr&) = default;
};

// mode 0 flips a stored 1 to 0, mode 1 flips a stored 0 to 1.
struct TargetBit {
    int page = 1;
    int bop = 0;
    int mode = 0;
    friend auto operator<=>(const TargetBit&, const TargetBit&) = default;
    PageAddr addr() const { return {page, bop}; }
};

// Bit value a flip of this mode expects to find before it fires.
inline int from_bit(int mode) { return mode == 0 ? 1 : 0; }

class WeightImage {
public:
    // Requires an 8-bit model: one weight per byte.
    static WeightImage build(const qnn::QuantizedModel& m);

    std::size_t page_count() const { return bytes_.size() / kPageBytes; }
    std::size_t weight_bytes() const { return weight_bytes_; }
    // Padded to a whole number of pages.
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> page(int page) const;
    // Checkpoint page holding weight page `page`; both are 1-based.
    int file_page(int page) const { return page + header_pages_; }
    int header_pages() const { return header_pages_; }

    PageAddr bit_to_addr(const qnn::BitRef& ref) const;
    qnn::BitRef addr_to_bit(const PageAddr& a) const;
    bool addressable(const PageAddr& a) const;
    int stored_bit(const PageAddr& a) const;

    TargetBit target_for(const qnn::BitRef& ref) const;

    // Toggles each flip's bit; throws StaleModeError (leaving the image
    // untouched) when a stored bit does not match its mode.
    void apply_flips(const std::vector<TargetBit>& flips);
    // Overwrites one page, e.g. with bytes read back from DRAM.
    void set_page(int page, const std::vector<std::uint8_t>& data);

    // The model with its weights replaced by the image content.
    qnn::QuantizedModel to_model() const;

private:
    void check(const PageAddr& a) const;

    qnn::QuantizedModel shape_;
    std::vector<std::uint8_t> bytes_;
    std::size_t weight_bytes_ = 0;
    int header_pages_ = 0;
    std::vector<std::size_t> layer_offset_;  // byte offset per model layer
    std::vector<std::size_t> weighted_;      // weighted layer indices in order
};

// Model obtained by applying flips to a model through its image.
qnn::QuantizedModel apply_to_model(const qnn::QuantizedModel& m, const std::vector<TargetBit>& flips);

// ---- Chain files: one JSON object per line ----

struct ChainRecord {
    TargetBit bit;
    double expected_acc = 0.0;
    int file_page = 0;  // 0 when unknown
};

std::string chain_to_jsonl(const std::vector<ChainRecord>& chain);
std::vector<ChainRecord> chain_from_jsonl(const std::string& text);
void write_chain(const std::string& path, const std::vector<ChainRecord>& chain);
std::vector<ChainRecord> read_chain(const std::string& path);

}  // namespace rf::image
