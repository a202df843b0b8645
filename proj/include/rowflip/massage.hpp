#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rowflip/dram.hpp"
#include "rowflip/image.hpp"
#include "rowflip/rng.hpp"

namespace rf::massage {

inline constexpr std::size_t kRecyclingThreshold = 180;
inline constexpr std::size_t kVerifySample = 8;

// Per-cpu free-page cache. Frees push the head, allocations pop it. Once the
// cache holds `threshold` frames the oldest half spills to the global pool.
class PageFrameCache {
public:
    explicit PageFrameCache(std::size_t threshold = kRecyclingThreshold);

    void free_page(std::uint64_t pfn);
    // Head of the cache, or the oldest global frame when the cache is empty.
    std::uint64_t alloc();

    std::size_t size() const { return lifo_.size(); }
    std::size_t threshold() const { return threshold_; }
    std::size_t spills() const { return spills_; }
    const std::deque<std::uint64_t>& global_pool() const { return global_; }
    // Head first.
    std::vector<std::uint64_t> contents() const;

private:
    std::size_t threshold_;
    std::deque<std::uint64_t> lifo_;  // back is the head
    std::deque<std::uint64_t> global_;
    std::size_t spills_ = 0;
};

// Target bit i of a chain placed on physical frame pfn; pgid is the victim
// image page holding the bit.
struct Placement {
    std::size_t target = 0;  // position in the chain
    image::TargetBit bit;
    int pgid = 0;
    std::uint64_t pfn = 0;
    std::size_t options = 0;  // candidate frames the bit had before assignment
};

struct MappingPlan {
    std::vector<Placement> entries;  // chain order
    double memory_fraction = 0.0;    // share of frames the attacker holds
};

struct PlanOptions {
    std::size_t threshold = kRecyclingThreshold;
    dram::HammerMode mode = dram::HammerMode::Double;
};

// Frames that can host `bit`: attacker-owned, carrying a profiled cell at
// (bop, mode), with the aggressor frames the hammer mode needs also owned.
std::vector<std::uint64_t> candidate_frames(const dram::Dram& d, const dram::FlipProfile& profile,
                                            const image::TargetBit& bit, dram::HammerMode mode);

// Least-options-first greedy. Throws Unsatisfiable naming the chain position
// that ran out of frames, ThresholdViolation when the chain is too long.
MappingPlan plan_mapping(const std::vector<image::TargetBit>& chain, const dram::FlipProfile& profile,
                         const dram::Dram& d, const PlanOptions& opt = {});

// One victim in-row page and its neighbours at the same columns.
struct AggressorSet {
    int set = 0;
    int victim_row = 0;
    int col_byte = 0;
    int bytes = 0;
    std::vector<int> aggressor_rows;
    std::vector<int> target_cols;  // col_bit of each targeted cell, ascending
    std::vector<std::size_t> targets;  // plan entries placed in this in-row page
    std::size_t action = 0;
};

// Sets that share a victim row and both aggressor rows are hammered together.
struct HammerAction {
    int set = 0;
    int victim_row = 0;
    std::vector<int> aggressor_rows;
    std::vector<std::size_t> sets;
};

struct AggressorPlan {
    std::vector<AggressorSet> sets;
    std::vector<HammerAction> actions;
};

// Builds actions from sets that already carry rows and target columns.
AggressorPlan merge_actions(std::vector<AggressorSet> sets);

AggressorPlan plan_aggressors(const MappingPlan& plan, const dram::Dram& d);

struct NoiseSpec {
    double steal_probability = 0.0;  // chance a foreign allocation runs before each of ours
    std::uint64_t seed = 1;
};

// Frees the plan's frames in order, then maps victim pages in reverse order,
// copying each page's bytes into DRAM. Returns (pgid, pfn) in plan order.
// Throws MappingMismatch when the result differs from the plan.
std::vector<std::pair<int, std::uint64_t>> release_and_remap(PageFrameCache& cache, const MappingPlan& plan,
                                                             const image::WeightImage& img, dram::Dram& d,
                                                             const NoiseSpec& noise = {});

struct VerifyResult {
    bool valid = true;
    std::size_t tested = 0;
    std::size_t failed_entry = 0;  // index into the sample, meaningful when !valid
};

// Hammers up to `sample` stable profiled cells whose rows the attacker owns
// and checks each flips in its recorded direction. Stops at the first miss.
VerifyResult verify_template(dram::Dram& d, const dram::FlipProfile& profile, std::size_t sample = kVerifySample,
                             std::uint64_t seed = 1);

struct RetemplateResult {
    dram::FlipProfile profile;
    std::size_t tested_entries = 0;
    std::size_t total_entries = 0;
    std::size_t tested_frames = 0;
    std::size_t vulnerable_frames = 0;
    double work_ratio() const { return total_entries ? double(tested_entries) / double(total_entries) : 0.0; }
    double estimated_seconds() const { return double(tested_entries) / dram::kTemplatedFlipsPerSecond; }
};

// Re-hammers only stale entries at the needed bops, in both polarities,
// and keeps each with the direction it flips in now.
RetemplateResult retemplate(dram::Dram& d, const dram::FlipProfile& stale, const std::set<int>& needed_bops);

struct HammerReport {
    std::vector<dram::FlipEvent> flips;      // in victim-owned frames or at target columns
    std::vector<dram::FlipEvent> expected;
    std::size_t collateral = 0;              // flips in frames the victim does not own
    std::size_t actions = 0;
    double estimated_seconds() const { return double(actions) * dram::kSecondsPerHammerAction; }
};

// Writes each aggressor in-row page as a copy of its victim columns with the
// target columns complemented, then runs every action. Throws
// PrecisionViolation when the flips differ from the targets.
HammerReport precise_hammer(dram::Dram& d, const AggressorPlan& plan);

// Frees attacker frames that are neither victims nor aggressors. Returns the count.
std::size_t release_unneeded(dram::Dram& d, const AggressorPlan& plan);

std::string plan_json(const MappingPlan& plan, const AggressorPlan& agg);

}  // namespace rf::massage
