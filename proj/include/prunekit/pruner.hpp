#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/depgraph.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/nir.hpp"
#include "prunekit/tensorstore.hpp"

namespace prunekit {

// A: plain magnitude threshold, no structural hints (may empty a layer).
// B: A + depth floor. C: B + MAC/weight scaling. D: C + pruned-ratio balance.
enum class PruneMethod { A, B, C, D };

const char* to_string(PruneMethod method);
std::optional<PruneMethod> prune_method_from_string(std::string_view name);

struct PruneConfig {
    PruneMethod method = PruneMethod::D;
    double threshold_increment = 0.0;  // T_i, > 0
    double sparsity_increment = 0.0;   // S_i, in (0, 1)
    int depth_floor = 1;               // min surviving output channels (B/C/D)
    int bytes_per_element = 4;
    // Quality gate; a metric participates when its target is set.
    std::optional<double> target_psnr;
    std::optional<double> target_ssim;
    int64_t max_steps = 0;  // G, total training step budget
    bool stop_on_saturation = true;
    uint64_t seed = 0;
};

// Per-layer threshold of the balanced adaptive rule:
//   A, B: T_b      C: T_b * r_l      D: T_b * (1 - S_l) * r_l
double layer_threshold(double threshold_base, double pruned_ratio, double mac_per_weight,
                       PruneMethod method);

// Mutable pruning state. `mask` and `groups` index the original graph;
// `current`/`store` are the physically shrunk network that retraining sees.
struct PruneState {
    NetworkGraph original;
    ShapeMap original_shapes;
    GroupSet groups;
    ChannelMask mask;  // original indexing, monotone keep->prune

    NetworkGraph current;
    WeightStore store;
    // Per conv-like node: current channel index -> original channel index.
    std::map<std::string, std::vector<int>> current_to_original;

    double threshold_base = 0.0;              // T_b after the last pass
    double sparsity = 0.0;                    // S_c vs the original network
    std::map<std::string, double> pruned_ratio;  // S_l per layer
    int64_t step = 0;                         // g, cumulative training steps
};

PruneState make_state(NetworkGraph graph, WeightStore store);

struct PassTrace {
    double threshold_base = 0.0;
    std::map<std::string, double> layer_thresholds;
    std::vector<ChannelRef> pruned;  // original indexing, sorted
    double sparsity_after = 0.0;
};

// One pruning sweep over all layers at a fixed threshold base:
// recomputes S_l/M_l/W_l/R_l per layer, then prunes every group whose
// members all fall below their own layer's threshold, subject to the depth
// floor (methods B/C/D) and frozen layers. Returns pruned group count.
int prune_pass(PruneState& state, const PruneConfig& config, double threshold_base,
               PassTrace* trace);

enum class PruneStatus { ReachedTarget, Saturated };

// Ratchets the threshold base by threshold_increment until sparsity exceeds
// S_i + entry sparsity, then physically shrinks graph and store. Saturated
// means floors/barriers cap sparsity below the target.
PruneStatus prune_to_target(PruneState& state, const PruneConfig& config,
                            std::vector<PassTrace>* traces);

// Physical rewrite: kernels shrink along output then input axes, biases
// along output, conv attrs updated. The mask must be group-consistent.
std::pair<NetworkGraph, WeightStore> apply_mask(const NetworkGraph& graph,
                                                const WeightStore& store,
                                                const ChannelMask& mask);

struct TrainStepResult {
    int64_t steps = 0;
    double loss = 0.0;
};
// Performs up to step_budget optimizer steps on the store.
using Trainer = std::function<TrainStepResult(const NetworkGraph&, WeightStore&,
                                              int64_t step_budget)>;

struct QualityValues {
    double psnr = 0.0;
    double ssim = 0.0;
};
using Evaluator = std::function<QualityValues(const NetworkGraph&, const WeightStore&)>;

struct RetrainLog {
    int64_t step = 0;  // g after this retrain call
    double loss = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    bool passed = false;
};

struct LayerPruneSummary {
    std::string node;
    int original_channels = 0;
    int pruned_channels = 0;
    double pruned_ratio = 0.0;
    std::vector<int> pruned_indices;  // original indexing
};

struct RoundLog {
    int round = 0;
    double target_sparsity = 0.0;
    std::string prune_status;  // "reached" | "saturated"
    double threshold_base = 0.0;
    double sparsity = 0.0;
    std::map<std::string, double> layer_pruned_ratio;
    std::vector<PassTrace> passes;
    std::vector<RetrainLog> retrains;
};

struct PruneReport {
    std::vector<RoundLog> rounds;
    std::vector<LayerPruneSummary> layers;
    double final_sparsity = 0.0;
    QualityValues final_quality;
    bool quality_passed = false;
    bool budget_exhausted = false;
    bool saturated = false;
    int64_t steps_used = 0;
};

struct LoopResult {
    NetworkGraph graph;
    WeightStore store;
    ChannelMask mask;  // original indexing
    PruneReport report;
};

// The outer loop. Alternates prune_to_target with retraining until
// the quality gate passes, then starts the next round; stops for good when
// the step budget is exhausted (returning the last snapshot that passed) or,
// when stop_on_saturation is set, once no further pruning is possible and
// quality holds.
LoopResult run_loop(NetworkGraph graph, WeightStore store, const PruneConfig& config,
                    const Trainer& trainer, const Evaluator& evaluator);

}  // namespace prunekit
