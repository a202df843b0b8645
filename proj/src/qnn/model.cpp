#include <cmath>
#include <cstring>

#include "rowflip/errors.hpp"
#include "rowflip/qnn.hpp"
#include "rowflip/rng.hpp"

namespace rf::qnn {

Tensor::Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {}

Tensor Tensor::zeros(std::vector<int> s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

void Tensor::validate() const {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    if (n != values.size()) throw ShapeError("tensor shape does not match value count");
    for (double v : values)
        if (!std::isfinite(v)) throw ShapeError("tensor holds a non-finite value");
}

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::FullyConnected: return "fc";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::ResidualAdd: return "residual-add";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

std::size_t LayerSpec::weight_count() const {
    if (kind == LayerKind::FullyConnected) return static_cast<std::size_t>(out.size()) * in.size();
    if (kind == LayerKind::Conv2d) return static_cast<std::size_t>(out.c) * in.c * kernel * kernel;
    return 0;
}

std::size_t LayerSpec::bias_count() const {
    if (kind == LayerKind::FullyConnected) return static_cast<std::size_t>(out.size());
    if (kind == LayerKind::Conv2d) return static_cast<std::size_t>(out.c);
    return 0;
}

std::size_t Architecture::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight_count() + l.bias_count();
    return n;
}

void Architecture::validate() const {
    if (class_count < 2) throw ShapeError("class count must be at least 2");
    if (layers.empty()) throw ShapeError("architecture has no layers");
    Shape3 cur = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (!(l.in == cur)) throw ShapeError("layer " + std::to_string(i) + " input shape does not chain");
        if (l.kind == LayerKind::ResidualAdd) {
            if (l.skip_from < -1 || l.skip_from >= static_cast<int>(i))
                throw ShapeError("residual source must precede the residual layer");
            const Shape3 src = l.skip_from < 0 ? input : layers[l.skip_from].out;
            if (!(src == l.in)) throw ShapeError("residual operand shapes differ");
        }
        if (l.kind == LayerKind::Conv2d || l.kind == LayerKind::MaxPool) {
            if (l.kernel < 1 || l.stride < 1 || l.pad < 0) throw ShapeError("bad kernel geometry");
        }
        cur = l.out;
    }
    if (cur.h != 1 || cur.w != 1 || cur.c != class_count)
        throw ShapeError("final layer must produce one logit per class");
}

ModelBuilder& ModelBuilder::fc(int out) {
    LayerSpec l;
    l.kind = LayerKind::FullyConnected;
    l.in = cur_;
    l.out = {out, 1, 1};
    layers_.push_back(l);
    cur_ = l.out;
    return *this;
}

ModelBuilder& ModelBuilder::conv(int out_channels, int kernel, int stride, int pad) {
    LayerSpec l;
    l.kind = LayerKind::Conv2d;
    l.in = cur_;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    l.out = {out_channels, (cur_.h + 2 * pad - kernel) / stride + 1, (cur_.w + 2 * pad - kernel) / stride + 1};
    if (l.out.h < 1 || l.out.w < 1) throw ShapeError("convolution output is empty");
    layers_.push_back(l);
    cur_ = l.out;
    return *this;
}

ModelBuilder& ModelBuilder::relu() {
    LayerSpec l;
    l.kind = LayerKind::Relu;
    l.in = l.out = cur_;
    layers_.push_back(l);
    return *this;
}

ModelBuilder& ModelBuilder::maxpool(int kernel, int stride) {
    LayerSpec l;
    l.kind = LayerKind::MaxPool;
    l.in = cur_;
    l.kernel = kernel;
    l.stride = stride;
    l.out = {cur_.c, (cur_.h - kernel) / stride + 1, (cur_.w - kernel) / stride + 1};
    if (l.out.h < 1 || l.out.w < 1) throw ShapeError("pooling output is empty");
    layers_.push_back(l);
    cur_ = l.out;
    return *this;
}

Shape3 ModelBuilder::shape_after(int idx) const { return idx < 0 ? input_ : layers_.at(idx).out; }

ModelBuilder& ModelBuilder::residual(int from) {
    if (from >= static_cast<int>(layers_.size())) throw ShapeError("residual source does not exist yet");
    if (!(shape_after(from) == cur_)) throw ShapeError("residual operand shapes differ");
    LayerSpec l;
    l.kind = LayerKind::ResidualAdd;
    l.in = l.out = cur_;
    l.skip_from = from;
    layers_.push_back(l);
    return *this;
}

ModelBuilder& ModelBuilder::flatten() {
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    l.in = cur_;
    l.out = {cur_.size(), 1, 1};
    layers_.push_back(l);
    cur_ = l.out;
    return *this;
}

Architecture ModelBuilder::build() const {
    Architecture a;
    a.input = input_;
    a.class_count = cur_.c;
    a.layers = layers_;
    a.validate();
    return a;
}

Architecture QuantizedModel::architecture() const {
    Architecture a;
    a.input = input;
    a.class_count = class_count;
    a.layers.reserve(layers.size());
    for (const auto& l : layers) a.layers.push_back(l.spec);
    return a;
}

std::vector<std::size_t> QuantizedModel::weighted_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].spec.weighted()) out.push_back(i);
    return out;
}

std::size_t QuantizedModel::weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight_q.size();
    return n;
}

void QuantizedModel::validate() const {
    if (bits < 2 || bits > 8) throw ShapeError("model bit width must be in [2,8]");
    architecture().validate();
    const std::int32_t lo = -(1 << (bits - 1)), hi = (1 << (bits - 1)) - 1;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight_q.size() != l.spec.weight_count() || l.bias.size() != l.spec.bias_count())
            throw ShapeError("layer " + std::to_string(i) + " parameter count mismatch");
        if (l.spec.weighted() && !(l.delta_w > 0.0)) throw ShapeError("weighted layer needs delta_w > 0");
        for (auto q : l.weight_q)
            if (q < lo || q > hi) throw ShapeError("weight outside the signed bit range");
        for (double b : l.bias)
            if (!std::isfinite(b)) throw ShapeError("non-finite bias");
    }
}

bool operator==(const QuantizedModel& a, const QuantizedModel& b) { return model_hash(a) == model_hash(b); }

std::uint64_t model_hash(const QuantizedModel& m) {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(m.bits));
    h = hash_combine(h, static_cast<std::uint64_t>(m.class_count));
    h = hash_combine(h, static_cast<std::uint64_t>(m.input.c) << 40 | static_cast<std::uint64_t>(m.input.h) << 20 |
                            static_cast<std::uint64_t>(m.input.w));
    auto dbits = [](double d) {
        std::uint64_t u;
        std::memcpy(&u, &d, sizeof u);
        return u;
    };
    for (const auto& l : m.layers) {
        const auto& s = l.spec;
        h = hash_combine(h, static_cast<std::uint64_t>(s.kind));
        for (int v : {s.in.c, s.in.h, s.in.w, s.out.c, s.out.h, s.out.w, s.kernel, s.stride, s.pad, s.skip_from})
            h = hash_combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
        h = hash_combine(h, dbits(l.delta_w));
        for (auto q : l.weight_q) h = hash_combine(h, static_cast<std::uint32_t>(q));
        for (double b : l.bias) h = hash_combine(h, dbits(b));
    }
    return h;
}

Params Params::zeros_like(const Architecture& a) {
    Params p;
    p.w.resize(a.layers.size());
    p.b.resize(a.layers.size());
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        p.w[i].assign(a.layers[i].weight_count(), 0.0);
        p.b[i].assign(a.layers[i].bias_count(), 0.0);
    }
    return p;
}

Params dequantize(const QuantizedModel& m) {
    Params p;
    p.w.resize(m.layers.size());
    p.b.resize(m.layers.size());
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto& l = m.layers[i];
        p.w[i] = dequantize(l.weight_q, l.delta_w);
        p.b[i] = l.bias;
    }
    return p;
}

QuantizedModel quantize_params(const Architecture& a, const Params& p, int bits) {
    QuantizedModel m;
    m.bits = bits;
    m.class_count = a.class_count;
    m.input = a.input;
    m.layers.resize(a.layers.size());
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        auto& l = m.layers[i];
        l.spec = a.layers[i];
        l.bias = p.b[i];
        if (l.spec.weighted()) {
            auto qz = quantize(p.w[i], bits);
            l.weight_q = std::move(qz.q);
            l.delta_w = qz.delta_w;
        }
    }
    return m;
}

}  // namespace rf::qnn
