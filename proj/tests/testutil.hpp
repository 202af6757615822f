#pragma once

// Shared fixtures: random graph generators, group-respecting masks, and
// independent reference implementations used as oracles. The references
// here must stay naive (plain nested loops, double accumulation) and never
// call into the engine's kernel paths.

#include <cmath>
#include <string>
#include <vector>

#include "prunekit/depgraph.hpp"
#include "prunekit/engine.hpp"
#include "prunekit/nir.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/tensorstore.hpp"

namespace testutil {

using namespace prunekit;

inline NodeAttrs conv_attrs(int in_c, int out_c, int k, int stride = 1, int pad = -1) {
    NodeAttrs a;
    a.kernel = k;
    a.stride = stride;
    a.padding = pad < 0 ? k / 2 : pad;
    a.in_channels = in_c;
    a.out_channels = out_c;
    a.has_bias = true;
    return a;
}

inline NodeAttrs input_attrs(int channels) {
    NodeAttrs a;
    a.channels = channels;
    return a;
}

// input -> N x (conv [+act]) -> conv_out -> output
inline NetworkGraph random_chain(Rng& rng) {
    NetworkGraph g;
    const int spatial = 8 + 2 * rng.uniform_int(0, 3);
    g.input_height = spatial;
    g.input_width = spatial;
    const int c_in = rng.uniform_int(1, 3);
    g.add_node("input", NodeKind::Input, input_attrs(c_in));
    std::string cur = "input";
    int c = c_in;
    const int depth = rng.uniform_int(1, 3);
    for (int i = 0; i < depth; ++i) {
        const int next = rng.uniform_int(2, 6);
        const int k = rng.uniform_int(0, 1) ? 3 : 1;
        const std::string id = "conv" + std::to_string(i);
        g.add_node(id, NodeKind::Conv2d, conv_attrs(c, next, k));
        g.add_edge(cur, id);
        cur = id;
        c = next;
        if (rng.uniform_int(0, 1)) {
            const std::string act = id + "_act";
            if (rng.uniform_int(0, 1)) {
                g.add_node(act, NodeKind::Relu);
            } else {
                NodeAttrs a;
                a.slope = 0.2;
                g.add_node(act, NodeKind::LeakyRelu, a);
            }
            g.add_edge(cur, act);
            cur = act;
        }
    }
    g.add_node("conv_out", NodeKind::Conv2d, conv_attrs(c, rng.uniform_int(1, 3), 3));
    g.add_edge(cur, "conv_out");
    g.add_node("output", NodeKind::Output);
    g.add_edge("conv_out", "output");
    return g;
}

// input -> head -> blocks(conv-relu-conv-add) [-> long add] -> tail -> output
inline NetworkGraph random_residual(Rng& rng) {
    NetworkGraph g;
    const int spatial = 8 + 2 * rng.uniform_int(0, 3);
    g.input_height = spatial;
    g.input_width = spatial;
    const int c_in = rng.uniform_int(1, 3);
    const int width = rng.uniform_int(3, 6);
    g.add_node("input", NodeKind::Input, input_attrs(c_in));
    g.add_node("head", NodeKind::Conv2d, conv_attrs(c_in, width, 3));
    g.add_edge("input", "head");
    std::string cur = "head";
    const int blocks = rng.uniform_int(1, 3);
    for (int b = 0; b < blocks; ++b) {
        const std::string pre = "b" + std::to_string(b);
        const int mid = rng.uniform_int(2, 6);
        g.add_node(pre + "_conv1", NodeKind::Conv2d, conv_attrs(width, mid, 3));
        g.add_edge(cur, pre + "_conv1");
        g.add_node(pre + "_relu", NodeKind::Relu);
        g.add_edge(pre + "_conv1", pre + "_relu");
        g.add_node(pre + "_conv2", NodeKind::Conv2d, conv_attrs(mid, width, 3));
        g.add_edge(pre + "_relu", pre + "_conv2");
        g.add_node(pre + "_add", NodeKind::EltwiseAdd);
        g.add_edge(pre + "_conv2", pre + "_add", 0);
        g.add_edge(cur, pre + "_add", 1);
        cur = pre + "_add";
    }
    if (rng.uniform_int(0, 1)) {
        g.add_node("long_add", NodeKind::EltwiseAdd);
        g.add_edge(cur, "long_add", 0);
        g.add_edge("head", "long_add", 1);
        cur = "long_add";
    }
    g.add_node("tail", NodeKind::Conv2d, conv_attrs(width, rng.uniform_int(1, 3), 3));
    g.add_edge(cur, "tail");
    g.add_node("output", NodeKind::Output);
    g.add_edge("tail", "output");
    return g;
}

// Encoder/decoder with a concat skip:
// input -> convA -> pool -> convB -> up (deconv) -> concat(up, convA) -> convC -> output
inline NetworkGraph random_concat_skip(Rng& rng) {
    NetworkGraph g;
    const int spatial = 8 + 4 * rng.uniform_int(0, 2);
    g.input_height = spatial;
    g.input_width = spatial;
    const int c_in = rng.uniform_int(1, 3);
    const int c_a = rng.uniform_int(2, 5);
    const int c_b = rng.uniform_int(2, 6);
    const int c_up = rng.uniform_int(2, 5);
    g.add_node("input", NodeKind::Input, input_attrs(c_in));
    g.add_node("convA", NodeKind::Conv2d, conv_attrs(c_in, c_a, 3));
    g.add_edge("input", "convA");
    NodeAttrs pool;
    pool.kernel = 2;
    pool.stride = 2;
    g.add_node("pool", NodeKind::MaxPool2d, pool);
    g.add_edge("convA", "pool");
    g.add_node("convB", NodeKind::Conv2d, conv_attrs(c_a, c_b, 3));
    g.add_edge("pool", "convB");
    g.add_node("up", NodeKind::Conv2dTranspose, conv_attrs(c_b, c_up, 2, 2, 0));
    g.add_edge("convB", "up");
    g.add_node("concat", NodeKind::Concat);
    g.add_edge("up", "concat", 0);
    g.add_edge("convA", "concat", 1);
    g.add_node("convC", NodeKind::Conv2d, conv_attrs(c_up + c_a, rng.uniform_int(1, 3), 3));
    g.add_edge("concat", "convC");
    g.add_node("output", NodeKind::Output);
    g.add_edge("convC", "output");
    return g;
}

inline NetworkGraph random_graph(Rng& rng) {
    switch (rng.uniform_int(0, 2)) {
        case 0: return random_chain(rng);
        case 1: return random_residual(rng);
        default: return random_concat_skip(rng);
    }
}

// Random group-respecting mask. floor < 1 allows emptying a layer.
inline ChannelMask random_mask(const NetworkGraph& g, const GroupSet& groups, Rng& rng,
                               double prune_prob, int floor) {
    ChannelMask mask = full_mask(g);
    std::map<std::string, int64_t> remaining;
    for (const auto& [node, m] : mask) remaining[node] = static_cast<int64_t>(m.size());
    for (const ChannelGroup& grp : groups.groups) {
        if (!grp.prunable) continue;
        if (rng.uniform() >= prune_prob) continue;
        std::map<std::string, int> demand;
        for (const ChannelRef& r : grp.members) ++demand[r.node];
        bool ok = true;
        for (const auto& [node, count] : demand)
            if (remaining[node] - count < floor) ok = false;
        if (!ok) continue;
        for (const ChannelRef& r : grp.members) {
            mask[r.node][static_cast<size_t>(r.channel)] = false;
            --remaining[r.node];
        }
    }
    return mask;
}

// Zeroes pruned channels' kernel rows and biases, keeping shapes: the dense
// counterpart of the physically shrunk network.
inline WeightStore zero_masked(const NetworkGraph& g, const WeightStore& store,
                               const ChannelMask& mask) {
    WeightStore out = store;
    for (const auto& [node, m] : mask) {
        Tensor& kernel = out.at(kernel_name(node));
        const size_t per_channel = kernel.dims[1] * size_t(kernel.dims[2]) * kernel.dims[3];
        for (size_t c = 0; c < m.size(); ++c) {
            if (m[c]) continue;
            std::fill_n(kernel.data.begin() + static_cast<long>(c * per_channel), per_channel,
                        0.0f);
            if (g.at(node).attrs.has_bias) out.at(bias_name(node)).data[c] = 0.0f;
        }
    }
    return out;
}

inline TensorBuf random_tensor(Rng& rng, int64_t c, int64_t h, int64_t w, double lo = -1.0,
                               double hi = 1.0) {
    TensorBuf t = TensorBuf::zeros(1, c, h, w);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// ---------------------------------------------------------------------------
// Reference (oracle) implementations

inline TensorBuf conv2d_reference(const Node& node, const TensorBuf& in, const Tensor& kernel,
                                  const std::vector<float>* bias) {
    const auto& a = node.attrs;
    const int64_t ho = (in.h + 2 * a.padding - a.kernel) / a.stride + 1;
    const int64_t wo = (in.w + 2 * a.padding - a.kernel) / a.stride + 1;
    TensorBuf out = TensorBuf::zeros(in.n, a.out_channels, ho, wo);
    for (int64_t ni = 0; ni < in.n; ++ni)
        for (int64_t oc = 0; oc < a.out_channels; ++oc)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    double acc = bias ? (*bias)[static_cast<size_t>(oc)] : 0.0;
                    for (int64_t ic = 0; ic < a.in_channels; ++ic)
                        for (int64_t ky = 0; ky < a.kernel; ++ky)
                            for (int64_t kx = 0; kx < a.kernel; ++kx) {
                                const int64_t yi = y * a.stride + ky - a.padding;
                                const int64_t xi = x * a.stride + kx - a.padding;
                                if (yi < 0 || yi >= in.h || xi < 0 || xi >= in.w) continue;
                                acc += static_cast<double>(
                                           kernel.data[static_cast<size_t>(
                                               ((oc * a.in_channels + ic) * a.kernel + ky) *
                                                   a.kernel +
                                               kx)]) *
                                       in.at(ni, ic, yi, xi);
                            }
                    out.at(ni, oc, y, x) = static_cast<float>(acc);
                }
    return out;
}

inline TensorBuf convt_reference(const Node& node, const TensorBuf& in, const Tensor& kernel,
                                 const std::vector<float>* bias) {
    const auto& a = node.attrs;
    const int64_t ho = (in.h - 1) * a.stride - 2 * a.padding + a.kernel;
    const int64_t wo = (in.w - 1) * a.stride - 2 * a.padding + a.kernel;
    TensorBuf out = TensorBuf::zeros(in.n, a.out_channels, ho, wo);
    for (int64_t ni = 0; ni < in.n; ++ni)
        for (int64_t oc = 0; oc < a.out_channels; ++oc) {
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x)
                    out.at(ni, oc, y, x) = bias ? (*bias)[static_cast<size_t>(oc)] : 0.0f;
            for (int64_t ic = 0; ic < a.in_channels; ++ic)
                for (int64_t y = 0; y < in.h; ++y)
                    for (int64_t x = 0; x < in.w; ++x)
                        for (int64_t ky = 0; ky < a.kernel; ++ky)
                            for (int64_t kx = 0; kx < a.kernel; ++kx) {
                                const int64_t yo = y * a.stride + ky - a.padding;
                                const int64_t xo = x * a.stride + kx - a.padding;
                                if (yo < 0 || yo >= ho || xo < 0 || xo >= wo) continue;
                                out.at(ni, oc, yo, xo) +=
                                    kernel.data[static_cast<size_t>(
                                        ((oc * a.in_channels + ic) * a.kernel + ky) * a.kernel +
                                        kx)] *
                                    in.at(ni, ic, y, x);
                            }
        }
    return out;
}

inline double max_rel_diff(const TensorBuf& a, const TensorBuf& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double denom = std::max({std::fabs(double(a.data[i])),
                                       std::fabs(double(b.data[i])), 1.0});
        worst = std::max(worst, std::fabs(double(a.data[i]) - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace testutil
