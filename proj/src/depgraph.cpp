#include "prunekit/depgraph.hpp"

#include <algorithm>

#include "json.hpp"

namespace prunekit {

namespace {

// Per output channel of a node: the conv output channels whose values it
// carries, plus whether an unprunable source (network input, anything behind
// a PixelShuffle's channel mixing) also feeds it. EltwiseAdd merges origins;
// that merge is exactly what forms prune groups, and an external contributor
// pins the whole merged set (removing only the conv side would misalign the
// add).
struct ChannelOrigin {
    std::vector<ChannelRef> refs;
    bool external = false;
};
using Sources = std::vector<ChannelOrigin>;

std::map<std::string, Sources> channel_flow(const NetworkGraph& graph, const ShapeMap& shapes) {
    std::map<std::string, Sources> flow;
    for (const std::string& id : graph.topo_order()) {
        const Node& n = graph.at(id);
        const auto in_edges = graph.inputs_of(id);
        const int64_t out_c = shapes.at(id).c;
        Sources src;
        switch (n.kind) {
            case NodeKind::Input:
            case NodeKind::PixelShuffle:
                src.assign(static_cast<size_t>(out_c), ChannelOrigin{{}, true});
                break;
            case NodeKind::Conv2d:
            case NodeKind::Conv2dTranspose:
                src.resize(static_cast<size_t>(out_c));
                for (int64_t c = 0; c < out_c; ++c)
                    src[c].refs = {ChannelRef{id, static_cast<int>(c)}};
                break;
            case NodeKind::EltwiseAdd: {
                src.assign(static_cast<size_t>(out_c), {});
                for (const Edge* e : in_edges) {
                    const Sources& op = flow.at(e->from);
                    for (int64_t c = 0; c < out_c; ++c) {
                        auto& dst = src[c];
                        dst.external = dst.external || op[c].external;
                        for (const ChannelRef& r : op[c].refs)
                            if (std::find(dst.refs.begin(), dst.refs.end(), r) ==
                                dst.refs.end())
                                dst.refs.push_back(r);
                    }
                }
                for (auto& s : src) std::sort(s.refs.begin(), s.refs.end());
                break;
            }
            case NodeKind::Concat:
                for (const Edge* e : in_edges) {
                    const Sources& part = flow.at(e->from);
                    src.insert(src.end(), part.begin(), part.end());
                }
                break;
            default:  // activations, pools, Output: channel-transparent
                src = flow.at(in_edges[0]->from);
                break;
        }
        flow[id] = std::move(src);
    }
    return flow;
}

}  // namespace

std::set<std::string> frozen_nodes(const NetworkGraph& graph) {
    const ShapeMap shapes = infer_shapes(graph);
    const auto flow = channel_flow(graph, shapes);
    std::set<std::string> frozen;
    for (const Node& n : graph.nodes()) {
        if (n.kind != NodeKind::PixelShuffle && n.kind != NodeKind::Output) continue;
        for (const Edge* e : graph.inputs_of(n.id)) {
            for (const auto& channel : flow.at(e->from))
                for (const ChannelRef& r : channel.refs) frozen.insert(r.node);
        }
    }
    return frozen;
}

GroupSet build_groups(const NetworkGraph& graph) {
    const ShapeMap shapes = infer_shapes(graph);
    const auto flow = channel_flow(graph, shapes);
    const auto frozen = frozen_nodes(graph);

    // Dense indexing of all conv-like (node, channel) pairs, in node
    // insertion order so group ids are deterministic.
    std::vector<ChannelRef> refs;
    std::map<ChannelRef, int> ref_index;
    for (const Node& n : graph.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        for (int c = 0; c < n.attrs.out_channels; ++c) {
            ref_index[ChannelRef{n.id, c}] = static_cast<int>(refs.size());
            refs.push_back(ChannelRef{n.id, c});
        }
    }

    std::vector<int> parent(refs.size());
    std::vector<bool> pinned(refs.size(), false);  // tied to an unprunable source
    for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    auto find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    auto unite = [&](int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };

    for (const Node& n : graph.nodes()) {
        if (n.kind != NodeKind::EltwiseAdd) continue;
        const int64_t out_c = shapes.at(n.id).c;
        for (int64_t c = 0; c < out_c; ++c) {
            int first = -1;
            bool external = false;
            std::vector<int> touched;
            for (const Edge* e : graph.inputs_of(n.id)) {
                const ChannelOrigin& origin = flow.at(e->from)[c];
                external = external || origin.external;
                for (const ChannelRef& r : origin.refs) {
                    const int idx = ref_index.at(r);
                    touched.push_back(idx);
                    if (first < 0)
                        first = idx;
                    else
                        unite(first, idx);
                }
            }
            if (external)
                for (int idx : touched) pinned[static_cast<size_t>(idx)] = true;
        }
    }

    std::map<int, std::vector<int>> buckets;  // root -> member indices
    for (size_t i = 0; i < refs.size(); ++i)
        buckets[find(static_cast<int>(i))].push_back(static_cast<int>(i));

    GroupSet out;
    for (auto& [root, members] : buckets) {
        ChannelGroup g;
        g.id = static_cast<int>(out.groups.size());
        bool any_pinned = false;
        for (int m : members) {
            g.members.push_back(refs[m]);
            any_pinned = any_pinned || pinned[static_cast<size_t>(m)];
        }
        std::sort(g.members.begin(), g.members.end());
        g.prunable =
            !any_pinned &&
            std::none_of(g.members.begin(), g.members.end(),
                         [&](const ChannelRef& r) { return frozen.count(r.node) != 0; });
        for (const ChannelRef& r : g.members) out.index[r] = g.id;
        out.groups.push_back(std::move(g));
    }
    return out;
}

double group_stat(const ChannelGroup& group, const WeightStore& store) {
    double stat = 0.0;
    std::map<std::string, std::vector<float>> cache;
    for (const ChannelRef& r : group.members) {
        auto it = cache.find(r.node);
        if (it == cache.end())
            it = cache.emplace(r.node, max_abs_per_output_channel(store, r.node)).first;
        stat = std::max(stat, static_cast<double>(it->second.at(r.channel)));
    }
    return stat;
}

RemovalPlan propagate_removal(const NetworkGraph& graph, const ChannelMask& mask) {
    const ShapeMap shapes = infer_shapes(graph);
    const GroupSet groups = build_groups(graph);

    auto kept = [&](const ChannelRef& r) {
        auto it = mask.find(r.node);
        if (it == mask.end()) return true;
        if (r.channel < 0 || static_cast<size_t>(r.channel) >= it->second.size())
            throw GraphError("mask for " + r.node + " has wrong length");
        return static_cast<bool>(it->second[r.channel]);
    };

    for (const ChannelGroup& g : groups.groups) {
        bool any_removed = false, any_kept = false;
        for (const ChannelRef& r : g.members) (kept(r) ? any_kept : any_removed) = true;
        if (any_removed && any_kept)
            throw GraphError("mask splits channel group " + std::to_string(g.id) +
                             " (member " + g.members.front().node + ")");
        if (any_removed && !g.prunable)
            throw GraphError("mask prunes frozen layer " + g.members.front().node);
    }

    const auto flow = channel_flow(graph, shapes);
    RemovalPlan plan;
    for (const Node& n : graph.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        const auto in_edges = graph.inputs_of(n.id);
        std::vector<int> removed;
        const Sources& src = flow.at(in_edges[0]->from);
        for (size_t c = 0; c < src.size(); ++c) {
            const ChannelOrigin& origin = src[c];
            if (origin.external || origin.refs.empty()) continue;  // unprunable source
            const bool dead = std::all_of(origin.refs.begin(), origin.refs.end(),
                                          [&](const ChannelRef& r) { return !kept(r); });
            if (dead) removed.push_back(static_cast<int>(c));
        }
        plan[n.id] = std::move(removed);
    }
    return plan;
}

SurvivorMap survivors_for_mask(const NetworkGraph& graph, const ChannelMask& mask) {
    const ShapeMap shapes = infer_shapes(graph);
    const RemovalPlan plan = propagate_removal(graph, mask);
    SurvivorMap out;
    for (const Node& n : graph.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        LayerIo io;
        io.in_total = shapes.at(graph.inputs_of(n.id)[0]->from).c;
        io.in_survivors = io.in_total - static_cast<int64_t>(plan.at(n.id).size());
        io.out_total = n.attrs.out_channels;
        auto it = mask.find(n.id);
        io.out_survivors = it == mask.end() ? io.out_total : kept_count(it->second);
        out[n.id] = io;
    }
    return out;
}

std::string groups_to_json(const GroupSet& groups) {
    nlohmann::ordered_json j;
    j["groups"] = nlohmann::ordered_json::array();
    for (const ChannelGroup& g : groups.groups) {
        nlohmann::ordered_json jg;
        jg["id"] = g.id;
        jg["prunable"] = g.prunable;
        jg["members"] = nlohmann::ordered_json::array();
        for (const ChannelRef& r : g.members) jg["members"].push_back({r.node, r.channel});
        j["groups"].push_back(jg);
    }
    return j.dump(2) + "\n";
}

}  // namespace prunekit
