#include <cstring>
#include <fstream>
#include <iterator>

#include "rowflip/errors.hpp"
#include "rowflip/qnn.hpp"

namespace rf::qnn {

namespace {

constexpr char kMagic[4] = {'Q', 'N', 'N', '1'};

struct Writer {
    std::vector<std::uint8_t> out;
    void u32(std::uint32_t v) {
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void u64(std::uint64_t v) {
        for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    }
    void f64(double d) {
        std::uint64_t u;
        std::memcpy(&u, &d, sizeof u);
        u64(u);
    }
};

struct Reader {
    const std::vector<std::uint8_t>& in;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > in.size()) throw FormatError("truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= std::uint32_t{in[pos + k]} << (8 * k);
        pos += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= std::uint64_t{in[pos + k]} << (8 * k);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t u = u64();
        double d;
        std::memcpy(&d, &u, sizeof d);
        return d;
    }
};

std::size_t round_up(std::size_t n) { return (n + kPageBytes - 1) / kPageBytes * kPageBytes; }

// Header bytes, excluding the trailing offset/length pair and padding.
Writer write_header(const QuantizedModel& m) {
    Writer w;
    w.out.insert(w.out.end(), kMagic, kMagic + 4);
    w.u32(static_cast<std::uint32_t>(m.bits));
    w.u32(static_cast<std::uint32_t>(m.class_count));
    w.u32(static_cast<std::uint32_t>(m.input.c));
    w.u32(static_cast<std::uint32_t>(m.input.h));
    w.u32(static_cast<std::uint32_t>(m.input.w));
    w.u32(static_cast<std::uint32_t>(m.layers.size()));
    for (const auto& l : m.layers) {
        const auto& s = l.spec;
        w.u32(static_cast<std::uint32_t>(s.kind));
        for (int v : {s.in.c, s.in.h, s.in.w, s.out.c, s.out.h, s.out.w, s.kernel, s.stride, s.pad, s.skip_from})
            w.i32(v);
        w.f64(l.delta_w);
        w.u64(l.weight_q.size());
        w.u64(l.bias.size());
        for (double b : l.bias) w.f64(b);
    }
    return w;
}

}  // namespace

std::size_t checkpoint_weight_offset(const QuantizedModel& m) { return round_up(write_header(m).out.size() + 16); }

std::vector<std::uint8_t> weight_block(const QuantizedModel& m) {
    std::vector<std::uint8_t> out;
    out.reserve(m.weight_count());
    for (const auto& l : m.layers)
        for (auto q : l.weight_q) out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(q)));
    return out;
}

void load_weight_block(QuantizedModel& m, const std::uint8_t* data, std::size_t n) {
    if (n < m.weight_count()) throw FormatError("weight block shorter than the model");
    std::size_t pos = 0;
    for (auto& l : m.layers)
        for (auto& q : l.weight_q) {
            const std::int32_t full = static_cast<std::int8_t>(data[pos++]);
            // Narrower widths keep the sign-extended value in each byte.
            q = full;
        }
}

std::vector<std::uint8_t> serialize_checkpoint(const QuantizedModel& m) {
    m.validate();
    Writer w = write_header(m);
    const std::size_t offset = round_up(w.out.size() + 16);
    const auto block = weight_block(m);
    w.u64(offset);
    w.u64(block.size());
    w.out.resize(offset, 0);
    w.out.insert(w.out.end(), block.begin(), block.end());
    w.out.resize(round_up(w.out.size()), 0);
    return w.out;
}

QuantizedModel parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
    r.pos = 4;
    QuantizedModel m;
    m.bits = static_cast<int>(r.u32());
    m.class_count = static_cast<int>(r.u32());
    m.input.c = static_cast<int>(r.u32());
    m.input.h = static_cast<int>(r.u32());
    m.input.w = static_cast<int>(r.u32());
    const std::uint32_t layers = r.u32();
    if (layers > 4096) throw FormatError("implausible layer count");
    m.layers.resize(layers);
    for (auto& l : m.layers) {
        auto& s = l.spec;
        const std::uint32_t kind = r.u32();
        if (kind < 1 || kind > 6) throw FormatError("unknown layer kind tag");
        s.kind = static_cast<LayerKind>(kind);
        s.in.c = r.i32();
        s.in.h = r.i32();
        s.in.w = r.i32();
        s.out.c = r.i32();
        s.out.h = r.i32();
        s.out.w = r.i32();
        s.kernel = r.i32();
        s.stride = r.i32();
        s.pad = r.i32();
        s.skip_from = r.i32();
        l.delta_w = r.f64();
        const std::uint64_t nw = r.u64(), nb = r.u64();
        if (nw != s.weight_count() || nb != s.bias_count()) throw FormatError("layer parameter counts disagree");
        l.weight_q.resize(nw);
        l.bias.resize(nb);
        for (auto& b : l.bias) b = r.f64();
    }
    const std::uint64_t offset = r.u64(), len = r.u64();
    if (offset % kPageBytes != 0 || offset < r.pos) throw FormatError("weight block is not page aligned");
    if (len != m.weight_count() || offset + len > bytes.size()) throw FormatError("weight block size mismatch");
    load_weight_block(m, bytes.data() + offset, len);
    m.validate();
    return m;
}

void save_checkpoint(const QuantizedModel& m, const std::string& path) {
    const auto bytes = serialize_checkpoint(m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

QuantizedModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint: " + path);
    std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(f), {});
    return parse_checkpoint(bytes);
}

}  // namespace rf::qnn
