#include <algorithm>
#include <cmath>
#include <numeric>

#include "rowflip/errors.hpp"
#include "rowflip/rng.hpp"
#include "rowflip/search.hpp"

namespace rf::search {

EvalBatch make_eval_batch(const qnn::Dataset& d, const SearchConfig& cfg) {
    const std::size_t n = d.test_y.size();
    if (n == 0) throw ConfigError("dataset has no test samples");
    if (cfg.batch_size == 0) throw ConfigError("evaluation batch must be nonempty");
    if (cfg.objective == Objective::Targeted && (cfg.target_class < 0 || cfg.target_class >= d.class_count))
        throw ConfigError("target class out of range");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(cfg.batch_seed);
    rng.shuffle(idx);
    idx.resize(std::min(n, cfg.batch_size));
    EvalBatch b;
    b.x = qnn::gather_rows(d.test_x, idx);
    for (auto i : idx) b.y.push_back(cfg.objective == Objective::Targeted ? cfg.target_class : d.test_y[i]);
    return b;
}

std::vector<Candidate> gbr_rank(const qnn::QuantizedModel& m, const qnn::BitGradients& g, const image::WeightImage& img,
                                int p, Objective objective) {
    if (p < 1) throw ConfigError("p must be at least 1");
    std::vector<Candidate> out;
    for (std::size_t li : m.weighted_layers()) {
        const auto& q = m.layers[li].weight_q;
        const auto& gl = g.g[li];
        struct Slot {
            double mag;
            std::size_t key;  // index * bits + bit
        };
        std::vector<Slot> eligible;
        eligible.reserve(gl.size() / 2 + 1);
        for (std::size_t k = 0; k < gl.size(); ++k) {
            const int bit = static_cast<int>(k % static_cast<std::size_t>(m.bits));
            const int v = qnn::bit_of(q[k / static_cast<std::size_t>(m.bits)], bit);
            // First-order loss change of toggling this bit.
            const double dl = gl[k] * (v == 0 ? 1.0 : -1.0);
            if (objective == Objective::Untargeted ? dl >= 0.0 : dl <= 0.0) eligible.push_back({std::abs(gl[k]), k});
        }
        const std::size_t take = std::min(eligible.size(), static_cast<std::size_t>(p));
        std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take), eligible.end(),
                          [](const Slot& a, const Slot& b) { return a.mag != b.mag ? a.mag > b.mag : a.key < b.key; });
        for (std::size_t i = 0; i < take; ++i) {
            Candidate c;
            c.ref = {li, eligible[i].key / static_cast<std::size_t>(m.bits),
                     static_cast<int>(eligible[i].key % static_cast<std::size_t>(m.bits))};
            c.grad = gl[eligible[i].key];
            const image::PageAddr a = img.bit_to_addr(c.ref);
            c.bit = {a.page, a.bop, qnn::bit_of(q[c.ref.index], c.ref.bit) == 1 ? 0 : 1};
            out.push_back(c);
        }
    }
    return out;
}

bool better(const Candidate& a, const Candidate& b, Objective objective) {
    if (a.acc != b.acc) return objective == Objective::Untargeted ? a.acc < b.acc : a.acc > b.acc;
    if (a.loss != b.loss) return objective == Objective::Untargeted ? a.loss > b.loss : a.loss < b.loss;
    if (a.locations != b.locations) return a.locations > b.locations;
    return a.ref < b.ref;
}

qnn::LossAcc evaluate_candidate(const qnn::QuantizedModel& m, const qnn::BitRef& ref, const EvalBatch& batch,
                                Exec exec) {
    qnn::QuantizedModel copy = m;
    qnn::flip_bit(copy, ref);
    return qnn::loss_and_accuracy(copy, batch.x, batch.y, exec);
}

double class_fraction(const qnn::QuantizedModel& m, const qnn::Tensor& x, int cls, Exec exec) {
    const std::vector<int> labels(static_cast<std::size_t>(x.rows()), cls);
    return qnn::loss_and_accuracy(m, x, labels, exec).acc;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace rf::search
