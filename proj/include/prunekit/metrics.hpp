#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/depgraph.hpp"
#include "prunekit/nir.hpp"

namespace prunekit {

// Floor for the MAC/weight indicator so threshold products stay positive at
// degenerate spatial extents.
inline constexpr double kMacPerWeightFloor = 0.01;

struct LayerCost {
    std::string node;
    uint64_t macs = 0;
    uint64_t weights = 0;    // surviving kernel elements (biases excluded)
    uint64_t acts_out = 0;   // output tensor elements
    uint64_t acts_in = 0;    // input tensor elements (0 if fed by the Input node)
    // log10(macs / weights), clamped to kMacPerWeightFloor; absent for a
    // fully pruned layer.
    std::optional<double> mac_per_weight;
};

struct NetworkCost {
    std::vector<LayerCost> layers;  // conv-like layers in graph order
    uint64_t total_macs = 0;
    uint64_t total_weights = 0;
    uint64_t total_acts = 0;  // sum of acts_in + acts_out

    uint64_t bandwidth_bytes(int bytes_per_element) const {
        return (total_weights + total_acts) * static_cast<uint64_t>(bytes_per_element);
    }
};

// Cost of one conv-like layer with the given surviving channel counts.
// MAC uses the output extent for Conv2d and the input extent for
// Conv2dTranspose (each input position fires all k*k taps).
LayerCost layer_cost(const Node& node, const Shape& in_shape, const Shape& out_shape,
                     int64_t in_survivors, int64_t out_survivors, bool fed_by_input_node);

NetworkCost network_cost(const NetworkGraph& graph, const ShapeMap& shapes);
NetworkCost network_cost(const NetworkGraph& graph, const ShapeMap& shapes,
                         const SurvivorMap& survivors);

// 1 - ((i-i')(o-o'))/(i*o)
double layer_sparsity(int64_t in_total, int64_t out_total, int64_t in_pruned,
                      int64_t out_pruned);

// Removed kernel weights over the reference graph's total kernel weights,
// counting input-channel removals implied by the mask.
double network_sparsity(const NetworkGraph& reference, const ChannelMask& mask);

}  // namespace prunekit
