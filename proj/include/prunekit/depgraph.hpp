#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "prunekit/nir.hpp"
#include "prunekit/tensorstore.hpp"

namespace prunekit {

struct ChannelRef {
    std::string node;
    int channel = 0;
    auto operator<=>(const ChannelRef&) const = default;
};

// Output channels that must share a single keep/prune decision. Channels end
// up in one group when an element-wise add sums them at the same index,
// transitively across chained adds.
struct ChannelGroup {
    int id = 0;
    std::vector<ChannelRef> members;  // sorted
    bool prunable = true;             // false when any member layer is frozen
};

struct GroupSet {
    std::vector<ChannelGroup> groups;  // groups[i].id == i
    std::map<ChannelRef, int> index;

    const ChannelGroup& group_of(const ChannelRef& ref) const {
        return groups[index.at(ref)];
    }
};

// Conv-like layers whose output channel structure is load-bearing: producers
// feeding a PixelShuffle (channel-to-space contract) or an Output node,
// reached through channel-transparent routing.
std::set<std::string> frozen_nodes(const NetworkGraph& graph);

GroupSet build_groups(const NetworkGraph& graph);

// Max over members of the member channel's max-abs kernel weight.
double group_stat(const ChannelGroup& group, const WeightStore& store);

// For every conv-like consumer, the input channel indices (current graph
// indexing) that disappear under the mask. Rejects masks that split a group
// or touch a frozen layer.
using RemovalPlan = std::map<std::string, std::vector<int>>;
RemovalPlan propagate_removal(const NetworkGraph& graph, const ChannelMask& mask);

// Surviving input/output channel counts per conv-like node under a mask.
struct LayerIo {
    int64_t in_total = 0;
    int64_t in_survivors = 0;
    int64_t out_total = 0;
    int64_t out_survivors = 0;
};
using SurvivorMap = std::map<std::string, LayerIo>;
SurvivorMap survivors_for_mask(const NetworkGraph& graph, const ChannelMask& mask);

std::string groups_to_json(const GroupSet& groups);

}  // namespace prunekit
