#include <algorithm>
#include <cmath>

#include "rowflip/errors.hpp"
#include "rowflip/qnn.hpp"

namespace rf::qnn {

namespace {

// Samples per reduction chunk. Fixed so the summation order never depends on
// the thread count.
constexpr std::size_t kChunk = 16;

struct SampleState {
    std::vector<std::vector<double>> act;   // act[0] = input, act[i+1] = output of layer i
    std::vector<std::vector<int>> argmax;   // maxpool winners per layer
    std::vector<std::vector<double>> dact;  // gradients w.r.t. act

    explicit SampleState(const Architecture& a) {
        const std::size_t L = a.layers.size();
        act.resize(L + 1);
        dact.resize(L + 1);
        argmax.resize(L);
        act[0].resize(a.input.size());
        for (std::size_t i = 0; i < L; ++i) {
            act[i + 1].resize(a.layers[i].out.size());
            if (a.layers[i].kind == LayerKind::MaxPool) argmax[i].resize(a.layers[i].out.size());
        }
    }
};

// Output units [o0, o1) only; o1 < 0 means all.
void fc_forward(const LayerSpec& l, const std::vector<double>& w, const std::vector<double>& b, const double* x,
                double* y, int o0 = 0, int o1 = -1) {
    const int in = l.in.size();
    if (o1 < 0) o1 = l.out.size();
    for (int o = o0; o < o1; ++o) {
        const double* row = w.data() + static_cast<std::size_t>(o) * in;
        double s = 0.0;
        for (int i = 0; i < in; ++i) s += row[i] * x[i];
        y[o] = s + b[o];
    }
}

// Output channels [c0, c1) only; c1 < 0 means all.
void conv_forward(const LayerSpec& l, const std::vector<double>& w, const std::vector<double>& b, const double* x,
                  double* y, int c0 = 0, int c1 = -1) {
    const int IC = l.in.c, H = l.in.h, W = l.in.w, K = l.kernel, S = l.stride, P = l.pad;
    const int OH = l.out.h, OW = l.out.w;
    if (c1 < 0) c1 = l.out.c;
    for (int oc = c0; oc < c1; ++oc) {
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                double s = 0.0;
                for (int ic = 0; ic < IC; ++ic) {
                    const double* wk = w.data() + (static_cast<std::size_t>(oc) * IC + ic) * K * K;
                    const double* xc = x + static_cast<std::size_t>(ic) * H * W;
                    for (int ky = 0; ky < K; ++ky) {
                        const int iy = oy * S - P + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < K; ++kx) {
                            const int ix = ox * S - P + kx;
                            if (ix < 0 || ix >= W) continue;
                            s += wk[ky * K + kx] * xc[iy * W + ix];
                        }
                    }
                }
                y[(oc * OH + oy) * OW + ox] = s + b[oc];
            }
        }
    }
}

void maxpool_forward(const LayerSpec& l, const double* x, double* y, int* arg) {
    const int C = l.in.c, H = l.in.h, W = l.in.w, K = l.kernel, S = l.stride;
    const int OH = l.out.h, OW = l.out.w;
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                int best = (c * H + oy * S) * W + ox * S;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        const int idx = (c * H + oy * S + ky) * W + ox * S + kx;
                        if (x[idx] > x[best]) best = idx;
                    }
                const int o = (c * OH + oy) * OW + ox;
                y[o] = x[best];
                arg[o] = best;
            }
}

// Computes layer i's output into y. `skip` is the residual operand when used.
void layer_forward(const LayerSpec& l, const std::vector<double>& w, const std::vector<double>& b, const double* x,
                   double* y, std::size_t n, int* argmax, const double* skip) {
    switch (l.kind) {
        case LayerKind::FullyConnected: fc_forward(l, w, b, x, y); break;
        case LayerKind::Conv2d: conv_forward(l, w, b, x, y); break;
        case LayerKind::Relu:
            for (std::size_t k = 0; k < n; ++k) y[k] = x[k] > 0.0 ? x[k] : 0.0;
            break;
        case LayerKind::MaxPool: maxpool_forward(l, x, y, argmax); break;
        case LayerKind::ResidualAdd:
            for (std::size_t k = 0; k < n; ++k) y[k] = x[k] + skip[k];
            break;
        case LayerKind::Flatten: std::copy(x, x + n, y); break;
    }
}

void forward_sample(const Architecture& a, const Params& p, SampleState& st) {
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const auto& l = a.layers[i];
        const double* skip = l.kind == LayerKind::ResidualAdd ? st.act[l.skip_from + 1].data() : nullptr;
        layer_forward(l, p.w[i], p.b[i], st.act[i].data(), st.act[i + 1].data(), st.act[i + 1].size(),
                      st.argmax[i].data(), skip);
    }
}

// Accumulates parameter gradients into g given dL/dlogits in st.dact.back().
void backward_sample(const Architecture& a, const Params& p, SampleState& st, Params& g) {
    const std::size_t L = a.layers.size();
    for (std::size_t i = 1; i < L; ++i) std::fill(st.dact[i].begin(), st.dact[i].end(), 0.0);
    for (std::size_t ii = L; ii-- > 0;) {
        const auto& l = a.layers[ii];
        const double* x = st.act[ii].data();
        const double* dy = st.dact[ii + 1].data();
        // The input gradient is never needed.
        double* dx = ii > 0 ? st.dact[ii].data() : nullptr;
        switch (l.kind) {
            case LayerKind::FullyConnected: {
                const int in = l.in.size(), out = l.out.size();
                auto& gw = g.w[ii];
                auto& gb = g.b[ii];
                const auto& w = p.w[ii];
                for (int o = 0; o < out; ++o) {
                    const double d = dy[o];
                    if (d == 0.0) continue;
                    gb[o] += d;
                    double* grow = gw.data() + static_cast<std::size_t>(o) * in;
                    for (int k = 0; k < in; ++k) grow[k] += d * x[k];
                    if (dx) {
                        const double* wrow = w.data() + static_cast<std::size_t>(o) * in;
                        for (int k = 0; k < in; ++k) dx[k] += wrow[k] * d;
                    }
                }
                break;
            }
            case LayerKind::Conv2d: {
                const int IC = l.in.c, H = l.in.h, W = l.in.w, K = l.kernel, S = l.stride, P = l.pad;
                const int OC = l.out.c, OH = l.out.h, OW = l.out.w;
                auto& gw = g.w[ii];
                auto& gb = g.b[ii];
                const auto& w = p.w[ii];
                for (int oc = 0; oc < OC; ++oc)
                    for (int oy = 0; oy < OH; ++oy)
                        for (int ox = 0; ox < OW; ++ox) {
                            const double d = dy[(oc * OH + oy) * OW + ox];
                            if (d == 0.0) continue;
                            gb[oc] += d;
                            for (int ic = 0; ic < IC; ++ic) {
                                const std::size_t wbase = (static_cast<std::size_t>(oc) * IC + ic) * K * K;
                                const int xbase = ic * H * W;
                                for (int ky = 0; ky < K; ++ky) {
                                    const int iy = oy * S - P + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int kx = 0; kx < K; ++kx) {
                                        const int ix = ox * S - P + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        const int xi = xbase + iy * W + ix;
                                        gw[wbase + ky * K + kx] += d * x[xi];
                                        if (dx) dx[xi] += w[wbase + ky * K + kx] * d;
                                    }
                                }
                            }
                        }
                break;
            }
            case LayerKind::Relu:
                if (dx) {
                    const std::size_t n = st.dact[ii + 1].size();
                    for (std::size_t k = 0; k < n; ++k)
                        if (x[k] > 0.0) dx[k] += dy[k];
                }
                break;
            case LayerKind::MaxPool:
                if (dx) {
                    const auto& arg = st.argmax[ii];
                    for (std::size_t k = 0; k < arg.size(); ++k) dx[arg[k]] += dy[k];
                }
                break;
            case LayerKind::ResidualAdd: {
                const std::size_t n = st.dact[ii + 1].size();
                if (dx)
                    for (std::size_t k = 0; k < n; ++k) dx[k] += dy[k];
                if (l.skip_from >= 0) {
                    double* ds = st.dact[l.skip_from + 1].data();
                    for (std::size_t k = 0; k < n; ++k) ds[k] += dy[k];
                }
                break;
            }
            case LayerKind::Flatten:
                if (dx) {
                    const std::size_t n = st.dact[ii + 1].size();
                    for (std::size_t k = 0; k < n; ++k) dx[k] += dy[k];
                }
                break;
        }
    }
}

std::size_t check_batch(const Architecture& a, const Tensor& batch) {
    if (batch.shape.empty()) throw ShapeError("batch tensor has no shape");
    std::size_t per = 1;
    for (std::size_t k = 1; k < batch.shape.size(); ++k) per *= static_cast<std::size_t>(batch.shape[k]);
    const std::size_t n = static_cast<std::size_t>(batch.shape[0]);
    if (per != static_cast<std::size_t>(a.input.size()) || n * per != batch.values.size())
        throw ShapeError("batch shape does not match the model input");
    return n;
}

void check_params(const Architecture& a, const Params& p) {
    if (p.w.size() != a.layers.size() || p.b.size() != a.layers.size())
        throw ShapeError("parameter set does not match the architecture");
    for (std::size_t i = 0; i < a.layers.size(); ++i)
        if (p.w[i].size() != a.layers[i].weight_count() || p.b[i].size() != a.layers[i].bias_count())
            throw ShapeError("parameter set does not match the architecture");
}

// Mean softmax cross-entropy term for one sample; writes (softmax - onehot) * scale into dz when given.
double sample_loss(const double* z, int classes, int label, double scale, double* dz, bool& correct) {
    double mx = z[0];
    int arg = 0;
    for (int k = 1; k < classes; ++k)
        if (z[k] > mx) {
            mx = z[k];
            arg = k;
        }
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) sum += std::exp(z[k] - mx);
    const double lse = mx + std::log(sum);
    correct = (arg == label);
    if (dz) {
        for (int k = 0; k < classes; ++k) {
            const double pk = std::exp(z[k] - lse);
            dz[k] = (pk - (k == label ? 1.0 : 0.0)) * scale;
        }
    }
    return lse - z[label];
}

double sum_in_order(const std::vector<double>& parts) {
    double total = 0.0;
    for (double v : parts) total += v;
    return total;
}

struct ChunkResult {
    double loss = 0.0;
    std::size_t correct = 0;
    Params grad;
};

Gradients run_batch(const Architecture& a, const Params& p, const Tensor& inputs, const std::vector<int>& labels,
                    bool want_grad, Exec exec) {
    check_params(a, p);
    const std::size_t n = check_batch(a, inputs);
    if (n == 0) throw ShapeError("empty batch");
    if (labels.size() != n) throw ShapeError("label count does not match batch size");
    for (int y : labels)
        if (y < 0 || y >= a.class_count) throw OutOfRangeError("label outside [0, class_count)");

    const std::size_t per = a.input.size();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    const double scale = 1.0 / static_cast<double>(n);
    std::vector<ChunkResult> parts(chunks);
    parallel_for(static_cast<std::ptrdiff_t>(chunks), exec, [&](std::ptrdiff_t c) {
        SampleState st(a);
        ChunkResult& r = parts[c];
        if (want_grad) r.grad = Params::zeros_like(a);
        const std::size_t begin = c * kChunk, end = std::min(n, begin + kChunk);
        for (std::size_t s = begin; s < end; ++s) {
            std::copy_n(inputs.values.data() + s * per, per, st.act[0].data());
            forward_sample(a, p, st);
            bool ok = false;
            double* dz = nullptr;
            if (want_grad) {
                st.dact.back().resize(a.class_count);
                for (std::size_t i = 1; i < a.layers.size(); ++i) st.dact[i].resize(st.act[i].size());
                dz = st.dact.back().data();
            }
            r.loss += sample_loss(st.act.back().data(), a.class_count, labels[s], scale, dz, ok);
            r.correct += ok ? 1 : 0;
            if (want_grad) backward_sample(a, p, st, r.grad);
        }
    });

    Gradients out;
    std::vector<double> losses;
    std::size_t correct = 0;
    for (const auto& r : parts) {
        losses.push_back(r.loss);
        correct += r.correct;
    }
    const double loss = sum_in_order(losses);
    if (want_grad) {
        out.grad = std::move(parts[0].grad);
        for (std::size_t c = 1; c < chunks; ++c)
            for (std::size_t i = 0; i < a.layers.size(); ++i) {
                auto& gw = out.grad.w[i];
                const auto& pw = parts[c].grad.w[i];
                for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += pw[k];
                auto& gb = out.grad.b[i];
                const auto& pb = parts[c].grad.b[i];
                for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += pb[k];
            }
    }
    out.stats.loss = loss / static_cast<double>(n);
    out.stats.correct = correct;
    out.stats.count = n;
    out.stats.acc = static_cast<double>(correct) / static_cast<double>(n);
    return out;
}

}  // namespace

struct CachedBatch::Impl {
    Architecture a;
    Params p;
    std::vector<int> labels;
    std::vector<SampleState> states;
    LossAcc base;
};

CachedBatch::CachedBatch(const Architecture& a, const Params& p, const Tensor& inputs, const std::vector<int>& labels,
                         Exec exec) {
    auto impl = std::make_shared<Impl>();
    impl->a = a;
    impl->p = p;
    impl->labels = labels;
    impl->base = loss_and_accuracy(a, p, inputs, labels, exec);
    const std::size_t n = labels.size(), per = a.input.size();
    impl->states.assign(n, SampleState(a));
    parallel_for(static_cast<std::ptrdiff_t>(n), exec, [&](std::ptrdiff_t s) {
        auto& st = impl->states[s];
        std::copy_n(inputs.values.data() + s * per, per, st.act[0].data());
        forward_sample(a, p, st);
    });
    impl_ = std::move(impl);
}

const LossAcc& CachedBatch::base() const { return impl_->base; }

std::size_t CachedBatch::size() const { return impl_->labels.size(); }

LossAcc CachedBatch::with_weight(std::size_t layer, std::size_t index, double value) const {
    const Impl& im = *impl_;
    const Architecture& a = im.a;
    if (layer >= a.layers.size() || !a.layers[layer].weighted() || index >= im.p.w[layer].size())
        throw OutOfRangeError("weight reference out of range");
    const LayerSpec& l = a.layers[layer];
    std::vector<double> w = im.p.w[layer];
    w[index] = value;
    int u0, u1;
    if (l.kind == LayerKind::FullyConnected) {
        u0 = static_cast<int>(index / l.in.size());
    } else {
        u0 = static_cast<int>(index / (static_cast<std::size_t>(l.in.c) * l.kernel * l.kernel));
    }
    u1 = u0 + 1;

    const std::size_t L = a.layers.size();
    const std::size_t n = im.labels.size();
    const double scale = 1.0 / static_cast<double>(n);
    SampleState scratch(a);
    std::vector<double> losses;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += kChunk) {
        const std::size_t end = std::min(n, begin + kChunk);
        double chunk_loss = 0.0;
        for (std::size_t s = begin; s < end; ++s) {
            const SampleState& cached = im.states[s];
            auto act_at = [&](std::size_t k) -> const double* {
                return k > layer ? scratch.act[k].data() : cached.act[k].data();
            };
            scratch.act[layer + 1] = cached.act[layer + 1];
            if (l.kind == LayerKind::FullyConnected)
                fc_forward(l, w, im.p.b[layer], cached.act[layer].data(), scratch.act[layer + 1].data(), u0, u1);
            else
                conv_forward(l, w, im.p.b[layer], cached.act[layer].data(), scratch.act[layer + 1].data(), u0, u1);
            for (std::size_t i = layer + 1; i < L; ++i) {
                const auto& li = a.layers[i];
                const double* skip = li.kind == LayerKind::ResidualAdd ? act_at(li.skip_from + 1) : nullptr;
                layer_forward(li, im.p.w[i], im.p.b[i], act_at(i), scratch.act[i + 1].data(),
                              scratch.act[i + 1].size(), scratch.argmax[i].data(), skip);
            }
            bool ok = false;
            chunk_loss += sample_loss(act_at(L), a.class_count, im.labels[s], scale, nullptr, ok);
            correct += ok ? 1 : 0;
        }
        losses.push_back(chunk_loss);
    }
    LossAcc out;
    out.loss = sum_in_order(losses) / static_cast<double>(n);
    out.correct = correct;
    out.count = n;
    out.acc = static_cast<double>(correct) / static_cast<double>(n);
    return out;
}

Tensor forward(const Architecture& a, const Params& p, const Tensor& batch, Exec exec) {
    check_params(a, p);
    const std::size_t n = check_batch(a, batch);
    const std::size_t per = a.input.size();
    Tensor out = Tensor::zeros({static_cast<int>(n), a.class_count});
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    parallel_for(static_cast<std::ptrdiff_t>(chunks), exec, [&](std::ptrdiff_t c) {
        SampleState st(a);
        const std::size_t begin = c * kChunk, end = std::min(n, begin + kChunk);
        for (std::size_t s = begin; s < end; ++s) {
            std::copy_n(batch.values.data() + s * per, per, st.act[0].data());
            forward_sample(a, p, st);
            std::copy_n(st.act.back().data(), a.class_count, out.values.data() + s * a.class_count);
        }
    });
    return out;
}

LossAcc loss_and_accuracy(const Architecture& a, const Params& p, const Tensor& inputs,
                          const std::vector<int>& labels, Exec exec) {
    return run_batch(a, p, inputs, labels, false, exec).stats;
}

Gradients loss_gradients(const Architecture& a, const Params& p, const Tensor& inputs,
                         const std::vector<int>& labels, Exec exec) {
    return run_batch(a, p, inputs, labels, true, exec);
}

Tensor forward(const QuantizedModel& m, const Tensor& batch, Exec exec) {
    return forward(m.architecture(), dequantize(m), batch, exec);
}

LossAcc loss_and_accuracy(const QuantizedModel& m, const Tensor& inputs, const std::vector<int>& labels,
                          Exec exec) {
    return loss_and_accuracy(m.architecture(), dequantize(m), inputs, labels, exec);
}

Gradients weight_gradients(const QuantizedModel& m, const Tensor& inputs, const std::vector<int>& labels,
                           Exec exec) {
    return loss_gradients(m.architecture(), dequantize(m), inputs, labels, exec);
}

}  // namespace rf::qnn
