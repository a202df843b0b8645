#include <algorithm>
#include <cmath>

#include "rowflip/errors.hpp"
#include "rowflip/qnn.hpp"

namespace rf::qnn {

namespace {

void check_bits(int bits) {
    if (bits < 2 || bits > 16) throw OutOfRangeError("bit width must be in [2,16]");
}

}  // namespace

std::int64_t round_half_away(double x) { return std::llround(x); }

Quantized quantize(const std::vector<double>& w, int bits) {
    check_bits(bits);
    if (w.empty()) throw DegenerateQuantizerError("cannot quantize an empty tensor");
    double mx = w.front();
    for (double v : w) {
        if (!std::isfinite(v)) throw ShapeError("non-finite weight");
        mx = std::max(mx, v);
    }
    // The step follows max(W); a tensor with no positive entry has no usable step.
    if (!(mx > 0.0))
        throw DegenerateQuantizerError("max(W) must be positive for a quantizer step, got " +
                                       std::to_string(mx));
    const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
    const std::int64_t lo = -(std::int64_t{1} << (bits - 1));
    Quantized out;
    out.delta_w = mx / static_cast<double>(hi);
    out.q.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const std::int64_t r = round_half_away(w[i] / out.delta_w);
        out.q[i] = static_cast<std::int32_t>(std::clamp(r, lo, hi));
    }
    return out;
}

Quantized quantize(const Tensor& w, int bits) {
    w.validate();
    return quantize(w.values, bits);
}

std::vector<double> dequantize(const std::vector<std::int32_t>& q, double delta_w) {
    std::vector<double> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<double>(q[i]) * delta_w;
    return out;
}

std::int32_t decode_bits(const std::vector<int>& bits_msb_first) {
    const int n = static_cast<int>(bits_msb_first.size());
    check_bits(n);
    std::int64_t v = 0;
    for (int k = 0; k < n; ++k) {
        const int b = bits_msb_first[k];
        if (b != 0 && b != 1) throw OutOfRangeError("bit vector entries must be 0 or 1");
        const int i = n - 1 - k;
        if (i == n - 1)
            v -= static_cast<std::int64_t>(b) << i;
        else
            v += static_cast<std::int64_t>(b) << i;
    }
    return static_cast<std::int32_t>(v);
}

std::vector<int> encode_bits(std::int32_t value, int bits) {
    check_bits(bits);
    const std::int32_t lo = -(1 << (bits - 1)), hi = (1 << (bits - 1)) - 1;
    if (value < lo || value > hi) throw OutOfRangeError("value outside the signed bit range");
    std::vector<int> out(bits);
    for (int i = 0; i < bits; ++i) out[bits - 1 - i] = bit_of(value, i);
    return out;
}

int bit_of(std::int32_t value, int bit) {
    return static_cast<int>((static_cast<std::uint32_t>(value) >> bit) & 1u);
}

std::int32_t flip_value(std::int32_t value, int bit, int bits) {
    const std::uint32_t mask = (bits >= 32) ? ~0u : ((1u << bits) - 1u);
    std::uint32_t u = static_cast<std::uint32_t>(value) & mask;
    u ^= (1u << bit);
    if (u & (1u << (bits - 1))) return static_cast<std::int32_t>(static_cast<std::int64_t>(u) - (std::int64_t{1} << bits));
    return static_cast<std::int32_t>(u);
}

double bit_coefficient(int bit, int bits) {
    const double mag = std::ldexp(1.0, bit);
    return bit == bits - 1 ? -mag : mag;
}

void check_ref(const QuantizedModel& m, const BitRef& ref) {
    if (ref.layer >= m.layers.size() || !m.layers[ref.layer].spec.weighted())
        throw OutOfRangeError("bit reference names an unweighted or missing layer");
    if (ref.index >= m.layers[ref.layer].weight_q.size())
        throw OutOfRangeError("bit reference weight index out of range");
    if (ref.bit < 0 || ref.bit >= m.bits) throw OutOfRangeError("bit reference bit position out of range");
}

void flip_bit(QuantizedModel& m, const BitRef& ref) {
    check_ref(m, ref);
    auto& q = m.layers[ref.layer].weight_q[ref.index];
    q = flip_value(q, ref.bit, m.bits);
}

BitGradients bit_gradients(const Params& weight_grads, const QuantizedModel& m) {
    BitGradients out;
    out.bits = m.bits;
    out.g.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& layer = m.layers[l];
        if (!layer.spec.weighted()) continue;
        const auto& gw = weight_grads.w[l];
        auto& dst = out.g[l];
        dst.resize(gw.size() * m.bits);
        for (std::size_t i = 0; i < gw.size(); ++i) {
            const double scaled = gw[i] * layer.delta_w;
            for (int b = 0; b < m.bits; ++b) dst[i * m.bits + b] = scaled * bit_coefficient(b, m.bits);
        }
    }
    return out;
}

}  // namespace rf::qnn
