#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "rowflip/dram.hpp"
#include "rowflip/image.hpp"
#include "rowflip/qnn.hpp"

namespace rf::search {

enum class Objective {
    Untargeted,  // push accuracy down
    Targeted,    // pull every input into one class
};

struct SearchConfig {
    int p = 20;                  // bits per layer taken from the gradient ranking
    int p_max = 1 << 16;         // p doubles up to this while too few candidates are flippable
    int min_flippable = 20;      // flippable candidates wanted per iteration before p stops growing
    double target_accuracy = 0.11;
    int max_iterations = 30;
    Objective objective = Objective::Untargeted;
    int target_class = 0;
    double target_fraction = 0.9;  // targeted success threshold
    std::size_t batch_size = 256;
    std::uint64_t batch_seed = 1;
    // false: any bit may flip, no profile and no page rule (GBR-only rounds).
    bool use_profile = true;
    std::set<qnn::BitRef> protected_bits;
    std::set<std::size_t> protected_layers;
    // Frames other chains already claimed.
    std::set<std::uint64_t> reserved_frames;
    bool record_candidates = false;
    Exec exec = Exec::Parallel;
};

struct Candidate {
    qnn::BitRef ref;
    image::TargetBit bit;
    double grad = 0.0;
    double loss = 0.0;
    double acc = 0.0;  // accuracy, or the target-class fraction when targeted
    std::size_t locations = 0;
};

struct ChainStep {
    qnn::BitRef ref;
    image::TargetBit bit;
    std::uint64_t frame = 0;  // physical frame reserved for this bit; 0 without a profile
    double loss = 0.0;
    double acc = 0.0;
    std::size_t evaluated = 0;
    int p_used = 0;
    std::vector<Candidate> candidates;  // filled when record_candidates is set
};

struct BitChain {
    std::vector<ChainStep> steps;
    double clean_loss = 0.0;
    double clean_acc = 0.0;
    bool feasible = false;
    std::string stop_reason;

    double terminal_acc() const { return steps.empty() ? clean_acc : steps.back().acc; }
    std::vector<image::TargetBit> bits() const;
    std::vector<image::ChainRecord> records(const image::WeightImage& img) const;
    // Fraction of steps that flip 1 -> 0.
    double mode0_fraction() const;
};

// Evaluation batch and labels a search uses: a seeded sample of the test
// split, relabelled to the target class for the targeted objective.
struct EvalBatch {
    qnn::Tensor x;
    std::vector<int> y;
};
EvalBatch make_eval_batch(const qnn::Dataset& d, const SearchConfig& cfg);

// Per weighted layer, the p loss-raising bits (loss-lowering when targeted)
// with the largest |dL/db|; ties go to the lower (index, bit).
std::vector<Candidate> gbr_rank(const qnn::QuantizedModel& m, const qnn::BitGradients& g, const image::WeightImage& img,
                                int p, Objective objective);

// Ranking order after evaluation. True when a should be committed before b.
bool better(const Candidate& a, const Candidate& b, Objective objective);

// Loss and accuracy with one extra bit flipped; the model is not modified.
qnn::LossAcc evaluate_candidate(const qnn::QuantizedModel& m, const qnn::BitRef& ref, const EvalBatch& batch,
                                Exec exec = Exec::Parallel);

BitChain search_chain(const qnn::QuantizedModel& m, const EvalBatch& batch, const dram::FlipProfile* profile,
                      const SearchConfig& cfg);

// k chains, each barred from the bits and frames earlier ones used.
std::vector<BitChain> search_chains(const qnn::QuantizedModel& m, const EvalBatch& batch,
                                    const dram::FlipProfile* profile, const SearchConfig& cfg, int k);

// Round i searches without a profile and may not reuse any bit chosen in
// rounds before it.
std::vector<BitChain> protect_topn_rounds(const qnn::QuantizedModel& m, const EvalBatch& batch,
                                          const SearchConfig& cfg, int rounds);

// Accuracy drop on (x, y) after `n` uniformly drawn distinct bit flips,
// once per trial, each trial on a fresh copy.
std::vector<double> random_flip_drops(const qnn::QuantizedModel& m, const qnn::Tensor& x, const std::vector<int>& y,
                                      int n, int trials, std::uint64_t seed, Exec exec = Exec::Parallel);

// Per-iteration trace: iteration, candidates evaluated, chosen bit, loss, accuracy.
std::string trace_csv(const BitChain& c);

// Fraction of the inputs the model assigns to `cls`.
double class_fraction(const qnn::QuantizedModel& m, const qnn::Tensor& x, int cls, Exec exec = Exec::Parallel);

double median(std::vector<double> v);

}  // namespace rf::search
