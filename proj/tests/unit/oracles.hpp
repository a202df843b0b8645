#pragma once
// Slow, obviously-correct reimplementations used as test oracles. Nothing
// here calls into the library code it checks.

#include <cmath>
#include <cstdint>
#include <vector>

#include "rowflip/qnn.hpp"

namespace oracle {

using rf::qnn::Architecture;
using rf::qnn::LayerKind;
using rf::qnn::Params;

// Two's complement value of bits given most significant first.
inline std::int64_t twos_complement(const std::vector<int>& msb_first) {
    const int n = static_cast<int>(msb_first.size());
    std::int64_t v = 0;
    for (int i = 0; i < n; ++i) {
        const std::int64_t weight = std::int64_t{1} << (n - 1 - i);
        v += msb_first[i] ? (i == 0 ? -weight : weight) : 0;
    }
    return v;
}

// One sample through the network, straight from the layer definitions.
inline std::vector<double> forward(const Architecture& a, const Params& p, const std::vector<double>& input) {
    std::vector<std::vector<double>> acts{input};
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
        const auto& l = a.layers[li];
        const auto& x = acts.back();
        std::vector<double> y(static_cast<std::size_t>(l.out.size()), 0.0);
        switch (l.kind) {
            case LayerKind::FullyConnected:
                for (int o = 0; o < l.out.size(); ++o) {
                    double s = p.b[li][o];
                    for (int i = 0; i < l.in.size(); ++i) s += p.w[li][o * l.in.size() + i] * x[i];
                    y[o] = s;
                }
                break;
            case LayerKind::Conv2d:
                for (int oc = 0; oc < l.out.c; ++oc)
                    for (int oy = 0; oy < l.out.h; ++oy)
                        for (int ox = 0; ox < l.out.w; ++ox) {
                            double s = p.b[li][oc];
                            for (int ic = 0; ic < l.in.c; ++ic)
                                for (int ky = 0; ky < l.kernel; ++ky)
                                    for (int kx = 0; kx < l.kernel; ++kx) {
                                        const int iy = oy * l.stride - l.pad + ky, ix = ox * l.stride - l.pad + kx;
                                        if (iy < 0 || ix < 0 || iy >= l.in.h || ix >= l.in.w) continue;
                                        s += p.w[li][((oc * l.in.c + ic) * l.kernel + ky) * l.kernel + kx] *
                                             x[(ic * l.in.h + iy) * l.in.w + ix];
                                    }
                            y[(oc * l.out.h + oy) * l.out.w + ox] = s;
                        }
                break;
            case LayerKind::Relu:
                for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0 ? x[i] : 0.0;
                break;
            case LayerKind::MaxPool:
                for (int c = 0; c < l.out.c; ++c)
                    for (int oy = 0; oy < l.out.h; ++oy)
                        for (int ox = 0; ox < l.out.w; ++ox) {
                            double m = -INFINITY;
                            for (int ky = 0; ky < l.kernel; ++ky)
                                for (int kx = 0; kx < l.kernel; ++kx)
                                    m = std::max(m, x[(c * l.in.h + oy * l.stride + ky) * l.in.w + ox * l.stride + kx]);
                            y[(c * l.out.h + oy) * l.out.w + ox] = m;
                        }
                break;
            case LayerKind::Flatten:
                y = x;
                break;
            case LayerKind::ResidualAdd: {
                const auto& s = acts[static_cast<std::size_t>(l.skip_from + 1)];
                for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + s[i];
                break;
            }
        }
        acts.push_back(std::move(y));
    }
    return acts.back();
}

// Mean softmax cross-entropy and accuracy over a batch.
inline std::pair<double, double> loss_acc(const Architecture& a, const Params& p, const rf::qnn::Tensor& x,
                                          const std::vector<int>& y) {
    const std::size_t per = static_cast<std::size_t>(a.input.size());
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < y.size(); ++s) {
        std::vector<double> in(x.values.begin() + s * per, x.values.begin() + (s + 1) * per);
        const auto z = forward(a, p, in);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v);
        loss += std::log(sum) - z[y[s]];
        std::size_t best = 0;
        for (std::size_t k = 1; k < z.size(); ++k)
            if (z[k] > z[best]) best = k;
        correct += best == static_cast<std::size_t>(y[s]);
    }
    return {loss / double(y.size()), double(correct) / double(y.size())};
}

}  // namespace oracle
