// Serial vs OpenMP timings for the kernels the search loop spends its time in.

#include <benchmark/benchmark.h>

#include "rowflip/cli.hpp"

using namespace rf;

namespace {

struct Fixture {
    qnn::QuantizedModel model;
    qnn::Tensor x;
    std::vector<int> y;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        const auto cfg = cli::ExperimentConfig::from_kv(KvConfig{});
        const auto data = cli::load_dataset(cfg);
        const auto arch = cli::build_architecture(cfg.model, data.input, cfg.width);
        Fixture out;
        out.model = qnn::quantize_params(arch, qnn::init_params(arch, 1), 8);
        std::vector<std::size_t> rows(256);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        out.x = qnn::gather_rows(data.test_x, rows);
        out.y.assign(data.test_y.begin(), data.test_y.begin() + 256);
        return out;
    }();
    return f;
}

Exec mode(const benchmark::State& s) { return s.range(0) ? Exec::Parallel : Exec::Serial; }

void BM_Forward(benchmark::State& s) {
    const auto& f = fixture();
    for (auto _ : s) benchmark::DoNotOptimize(qnn::loss_and_accuracy(f.model, f.x, f.y, mode(s)));
}

void BM_WeightGradients(benchmark::State& s) {
    const auto& f = fixture();
    for (auto _ : s) benchmark::DoNotOptimize(qnn::weight_gradients(f.model, f.x, f.y, mode(s)));
}

// One candidate evaluation against a cached prefix, as in each search iteration.
void BM_CandidateEval(benchmark::State& s) {
    const auto& f = fixture();
    const qnn::CachedBatch cached(f.model.architecture(), qnn::dequantize(f.model), f.x, f.y, mode(s));
    const std::size_t last = f.model.weighted_layers().back();
    std::size_t i = 0;
    for (auto _ : s) {
        benchmark::DoNotOptimize(cached.with_weight(last, i, 0.5));
        i = (i + 1) % f.model.layers[last].weight_q.size();
    }
}

}  // namespace

BENCHMARK(BM_Forward)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WeightGradients)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CandidateEval)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
