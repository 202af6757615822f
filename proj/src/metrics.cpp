#include "prunekit/metrics.hpp"

#include <cmath>

namespace prunekit {

LayerCost layer_cost(const Node& node, const Shape& in_shape, const Shape& out_shape,
                     int64_t in_survivors, int64_t out_survivors, bool fed_by_input_node) {
    LayerCost cost;
    cost.node = node.id;
    const int64_t k = node.attrs.kernel;
    const uint64_t weights = uint64_t(in_survivors) * uint64_t(out_survivors) * uint64_t(k * k);
    const int64_t mac_extent = node.kind == NodeKind::Conv2dTranspose
                                   ? in_shape.h * in_shape.w
                                   : out_shape.h * out_shape.w;
    cost.weights = weights;
    cost.macs = weights * static_cast<uint64_t>(mac_extent);
    cost.acts_out = uint64_t(out_survivors) * uint64_t(out_shape.h * out_shape.w);
    cost.acts_in = fed_by_input_node
                       ? 0
                       : uint64_t(in_survivors) * uint64_t(in_shape.h * in_shape.w);
    if (cost.weights > 0 && cost.macs > 0) {
        const double r = std::log10(static_cast<double>(cost.macs) /
                                    static_cast<double>(cost.weights));
        cost.mac_per_weight = std::max(r, kMacPerWeightFloor);
    }
    return cost;
}

namespace {

NetworkCost accumulate(const NetworkGraph& graph, const ShapeMap& shapes,
                       const SurvivorMap* survivors) {
    NetworkCost total;
    for (const Node& n : graph.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        const Edge* in_edge = graph.inputs_of(n.id)[0];
        const Shape& in_shape = shapes.at(in_edge->from);
        const Shape& out_shape = shapes.at(n.id);
        int64_t in_s = in_shape.c;
        int64_t out_s = n.attrs.out_channels;
        if (survivors) {
            const LayerIo& io = survivors->at(n.id);
            in_s = io.in_survivors;
            out_s = io.out_survivors;
        }
        const bool fed_by_input = graph.at(in_edge->from).kind == NodeKind::Input;
        LayerCost c = layer_cost(n, in_shape, out_shape, in_s, out_s, fed_by_input);
        total.total_macs += c.macs;
        total.total_weights += c.weights;
        total.total_acts += c.acts_in + c.acts_out;
        total.layers.push_back(std::move(c));
    }
    return total;
}

}  // namespace

NetworkCost network_cost(const NetworkGraph& graph, const ShapeMap& shapes) {
    return accumulate(graph, shapes, nullptr);
}

NetworkCost network_cost(const NetworkGraph& graph, const ShapeMap& shapes,
                         const SurvivorMap& survivors) {
    return accumulate(graph, shapes, &survivors);
}

double layer_sparsity(int64_t in_total, int64_t out_total, int64_t in_pruned,
                      int64_t out_pruned) {
    if (in_total <= 0 || out_total <= 0) return 0.0;
    const double surviving = static_cast<double>((in_total - in_pruned) *
                                                 (out_total - out_pruned));
    return 1.0 - surviving / static_cast<double>(in_total * out_total);
}

double network_sparsity(const NetworkGraph& reference, const ChannelMask& mask) {
    const SurvivorMap survivors = survivors_for_mask(reference, mask);
    uint64_t original = 0, surviving = 0;
    for (const Node& n : reference.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        const uint64_t kk = uint64_t(n.attrs.kernel) * n.attrs.kernel;
        const LayerIo& io = survivors.at(n.id);
        original += uint64_t(io.in_total) * uint64_t(io.out_total) * kk;
        surviving += uint64_t(io.in_survivors) * uint64_t(io.out_survivors) * kk;
    }
    if (original == 0) return 0.0;
    return 1.0 - static_cast<double>(surviving) / static_cast<double>(original);
}

}  // namespace prunekit
