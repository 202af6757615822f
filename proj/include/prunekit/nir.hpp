#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prunekit {

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class NodeKind {
    Input,
    Output,
    Conv2d,
    Conv2dTranspose,
    EltwiseAdd,
    Concat,
    PixelShuffle,
    LeakyRelu,
    Relu,
    MaxPool2d,
};

const char* to_string(NodeKind kind);
std::optional<NodeKind> node_kind_from_string(std::string_view name);

inline bool is_conv_like(NodeKind kind) {
    return kind == NodeKind::Conv2d || kind == NodeKind::Conv2dTranspose;
}

// Per-kind attributes; only the fields relevant to a node's kind are used.
struct NodeAttrs {
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    int in_channels = 0;   // conv-like
    int out_channels = 0;  // conv-like
    bool has_bias = true;  // conv-like
    int upscale = 1;       // PixelShuffle
    double slope = 0.0;    // LeakyRelu
    int channels = 0;      // Input
};

struct Node {
    std::string id;
    NodeKind kind = NodeKind::Input;
    NodeAttrs attrs;
};

struct Edge {
    std::string from;
    int from_slot = 0;
    std::string to;
    int to_slot = 0;
};

struct Shape {
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;
    int64_t elems() const { return c * h * w; }
    bool operator==(const Shape&) const = default;
};

struct Violation {
    std::string node;
    std::string rule;
    std::string detail;
};

// Directed acyclic operator graph. Node and edge order is preserved so that
// serialization round-trips byte-identically. Immutable once built.
class NetworkGraph {
public:
    int64_t input_height = 0;
    int64_t input_width = 0;

    Node& add_node(std::string id, NodeKind kind, NodeAttrs attrs = {});
    void add_edge(std::string from, std::string to, int to_slot = 0);

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }

    const Node* find(const std::string& id) const;
    const Node& at(const std::string& id) const;  // throws GraphError
    Node& at(const std::string& id);
    bool has(const std::string& id) const { return find(id) != nullptr; }

    // Incoming edges sorted by to_slot; outgoing in insertion order.
    std::vector<const Edge*> inputs_of(const std::string& id) const;
    std::vector<const Edge*> outputs_of(const std::string& id) const;

    // Node ids in a deterministic topological order (ties broken by
    // insertion order). Throws GraphError if the graph has a cycle.
    std::vector<std::string> topo_order() const;

private:
    std::vector<Node> nodes_;
    std::vector<Edge> edges_;
    std::map<std::string, size_t> index_;
};

// Output shape of every node, keyed by producer id (each node has a single
// output, so this annotates every edge as well).
using ShapeMap = std::map<std::string, Shape>;

// Structural and shape invariants as data; empty means the graph is valid.
std::vector<Violation> validate(const NetworkGraph& graph);

// Requires a valid graph; throws GraphError otherwise.
ShapeMap infer_shapes(const NetworkGraph& graph);

// node id -> keep flag per original output channel (conv-like nodes only).
using ChannelMask = std::map<std::string, std::vector<bool>>;

ChannelMask full_mask(const NetworkGraph& graph);
int64_t kept_count(const std::vector<bool>& mask);

// Graph JSON, schema version 1.
std::string graph_to_json(const NetworkGraph& graph);
NetworkGraph graph_from_json(const std::string& text);
NetworkGraph load_graph(const std::filesystem::path& path);
void save_graph(const NetworkGraph& graph, const std::filesystem::path& path);

// Reference topologies.
NetworkGraph build_sid_topology();
NetworkGraph build_edsr_topology();

}  // namespace prunekit
