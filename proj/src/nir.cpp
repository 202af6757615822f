#include "prunekit/nir.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace prunekit {

using ordered_json = nlohmann::ordered_json;

const char* to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::Input: return "Input";
        case NodeKind::Output: return "Output";
        case NodeKind::Conv2d: return "Conv2d";
        case NodeKind::Conv2dTranspose: return "Conv2dTranspose";
        case NodeKind::EltwiseAdd: return "EltwiseAdd";
        case NodeKind::Concat: return "Concat";
        case NodeKind::PixelShuffle: return "PixelShuffle";
        case NodeKind::LeakyRelu: return "LeakyRelu";
        case NodeKind::Relu: return "Relu";
        case NodeKind::MaxPool2d: return "MaxPool2d";
    }
    return "?";
}

std::optional<NodeKind> node_kind_from_string(std::string_view name) {
    static const std::pair<std::string_view, NodeKind> table[] = {
        {"Input", NodeKind::Input},
        {"Output", NodeKind::Output},
        {"Conv2d", NodeKind::Conv2d},
        {"Conv2dTranspose", NodeKind::Conv2dTranspose},
        {"EltwiseAdd", NodeKind::EltwiseAdd},
        {"Concat", NodeKind::Concat},
        {"PixelShuffle", NodeKind::PixelShuffle},
        {"LeakyRelu", NodeKind::LeakyRelu},
        {"Relu", NodeKind::Relu},
        {"MaxPool2d", NodeKind::MaxPool2d},
    };
    for (const auto& [key, kind] : table) {
        if (key == name) return kind;
    }
    return std::nullopt;
}

Node& NetworkGraph::add_node(std::string id, NodeKind kind, NodeAttrs attrs) {
    if (index_.count(id)) throw GraphError("duplicate node id: " + id);
    index_[id] = nodes_.size();
    nodes_.push_back(Node{std::move(id), kind, attrs});
    return nodes_.back();
}

void NetworkGraph::add_edge(std::string from, std::string to, int to_slot) {
    edges_.push_back(Edge{std::move(from), 0, std::move(to), to_slot});
}

const Node* NetworkGraph::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &nodes_[it->second];
}

const Node& NetworkGraph::at(const std::string& id) const {
    const Node* n = find(id);
    if (!n) throw GraphError("unknown node id: " + id);
    return *n;
}

Node& NetworkGraph::at(const std::string& id) {
    auto it = index_.find(id);
    if (it == index_.end()) throw GraphError("unknown node id: " + id);
    return nodes_[it->second];
}

std::vector<const Edge*> NetworkGraph::inputs_of(const std::string& id) const {
    std::vector<const Edge*> in;
    for (const Edge& e : edges_) {
        if (e.to == id) in.push_back(&e);
    }
    std::stable_sort(in.begin(), in.end(),
                     [](const Edge* a, const Edge* b) { return a->to_slot < b->to_slot; });
    return in;
}

std::vector<const Edge*> NetworkGraph::outputs_of(const std::string& id) const {
    std::vector<const Edge*> out;
    for (const Edge& e : edges_) {
        if (e.from == id) out.push_back(&e);
    }
    return out;
}

std::vector<std::string> NetworkGraph::topo_order() const {
    std::map<std::string, int> indegree;
    for (const Node& n : nodes_) indegree[n.id] = 0;
    for (const Edge& e : edges_) {
        if (indegree.count(e.to)) ++indegree[e.to];
    }
    // Kahn's algorithm; the ready set is scanned in insertion order so the
    // result is deterministic.
    std::vector<std::string> order;
    std::vector<bool> done(nodes_.size(), false);
    order.reserve(nodes_.size());
    while (order.size() < nodes_.size()) {
        bool progressed = false;
        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (done[i] || indegree[nodes_[i].id] != 0) continue;
            done[i] = true;
            progressed = true;
            order.push_back(nodes_[i].id);
            for (const Edge& e : edges_) {
                if (e.from == nodes_[i].id && indegree.count(e.to)) --indegree[e.to];
            }
        }
        if (!progressed) throw GraphError("graph contains a cycle");
    }
    return order;
}

namespace {

int expected_arity(NodeKind kind) {
    switch (kind) {
        case NodeKind::Input: return 0;
        case NodeKind::EltwiseAdd:
        case NodeKind::Concat: return -2;  // at least two
        default: return 1;
    }
}

// Shape of one node given its input shapes; null detail on success.
std::optional<std::string> node_output_shape(const NetworkGraph& graph, const Node& node,
                                             const std::vector<Shape>& in, Shape* out) {
    const NodeAttrs& a = node.attrs;
    switch (node.kind) {
        case NodeKind::Input:
            *out = Shape{a.channels, graph.input_height, graph.input_width};
            return std::nullopt;
        case NodeKind::Output:
            *out = in[0];
            return std::nullopt;
        case NodeKind::Conv2d: {
            if (in[0].c != a.in_channels)
                return "in_channels " + std::to_string(a.in_channels) + " but producer has " +
                       std::to_string(in[0].c) + " channels";
            const int64_t h = (in[0].h + 2 * a.padding - a.kernel) / a.stride + 1;
            const int64_t w = (in[0].w + 2 * a.padding - a.kernel) / a.stride + 1;
            if (in[0].h + 2 * a.padding < a.kernel || in[0].w + 2 * a.padding < a.kernel ||
                h < 1 || w < 1)
                return "non-positive output extent";
            *out = Shape{a.out_channels, h, w};
            return std::nullopt;
        }
        case NodeKind::Conv2dTranspose: {
            if (in[0].c != a.in_channels)
                return "in_channels " + std::to_string(a.in_channels) + " but producer has " +
                       std::to_string(in[0].c) + " channels";
            const int64_t h = (in[0].h - 1) * a.stride - 2 * a.padding + a.kernel;
            const int64_t w = (in[0].w - 1) * a.stride - 2 * a.padding + a.kernel;
            if (h < 1 || w < 1) return "non-positive output extent";
            *out = Shape{a.out_channels, h, w};
            return std::nullopt;
        }
        case NodeKind::EltwiseAdd: {
            for (size_t i = 1; i < in.size(); ++i) {
                if (!(in[i] == in[0]))
                    return "operand shapes differ: (" + std::to_string(in[0].c) + "," +
                           std::to_string(in[0].h) + "," + std::to_string(in[0].w) + ") vs (" +
                           std::to_string(in[i].c) + "," + std::to_string(in[i].h) + "," +
                           std::to_string(in[i].w) + ")";
            }
            *out = in[0];
            return std::nullopt;
        }
        case NodeKind::Concat: {
            int64_t c = 0;
            for (const Shape& s : in) {
                if (s.h != in[0].h || s.w != in[0].w) return "spatial extents differ across inputs";
                c += s.c;
            }
            *out = Shape{c, in[0].h, in[0].w};
            return std::nullopt;
        }
        case NodeKind::PixelShuffle: {
            const int64_t rr = int64_t(a.upscale) * a.upscale;
            if (in[0].c % rr != 0)
                return std::to_string(in[0].c) + " channels not divisible by r^2=" +
                       std::to_string(rr);
            *out = Shape{in[0].c / rr, in[0].h * a.upscale, in[0].w * a.upscale};
            return std::nullopt;
        }
        case NodeKind::LeakyRelu:
        case NodeKind::Relu:
            *out = in[0];
            return std::nullopt;
        case NodeKind::MaxPool2d: {
            const int64_t h = (in[0].h - a.kernel) / a.stride + 1;
            const int64_t w = (in[0].w - a.kernel) / a.stride + 1;
            if (in[0].h < a.kernel || in[0].w < a.kernel) return "window larger than input";
            *out = Shape{in[0].c, h, w};
            return std::nullopt;
        }
    }
    return "unhandled node kind";
}

void check_attrs(const Node& n, std::vector<Violation>* out) {
    const NodeAttrs& a = n.attrs;
    auto bad = [&](const std::string& detail) {
        out->push_back({n.id, "attr", detail});
    };
    switch (n.kind) {
        case NodeKind::Conv2d:
        case NodeKind::Conv2dTranspose:
            if (a.kernel < 1) bad("kernel must be positive");
            if (a.stride < 1) bad("stride must be positive");
            if (a.padding < 0) bad("padding must be non-negative");
            if (a.in_channels < 0 || a.out_channels < 0) bad("negative channel count");
            break;
        case NodeKind::PixelShuffle:
            if (a.upscale < 1) bad("upscale must be >= 1");
            break;
        case NodeKind::MaxPool2d:
            if (a.kernel < 1 || a.stride < 1) bad("kernel and stride must be positive");
            break;
        case NodeKind::Input:
            if (a.channels < 1) bad("input channels must be positive");
            break;
        default:
            break;
    }
}

}  // namespace

std::vector<Violation> validate(const NetworkGraph& graph) {
    std::vector<Violation> v;

    std::set<std::string> seen;
    int inputs = 0, outputs = 0;
    for (const Node& n : graph.nodes()) {
        if (n.id.empty()) v.push_back({n.id, "node-id", "empty node id"});
        if (!seen.insert(n.id).second) v.push_back({n.id, "node-id", "duplicate node id"});
        if (n.kind == NodeKind::Input) ++inputs;
        if (n.kind == NodeKind::Output) ++outputs;
        check_attrs(n, &v);
    }
    if (inputs != 1)
        v.push_back({"", "single-input", "graph must have exactly one Input node, found " +
                                             std::to_string(inputs)});
    if (outputs < 1) v.push_back({"", "has-output", "graph must have at least one Output node"});
    if (graph.input_height < 1 || graph.input_width < 1)
        v.push_back({"", "input-resolution", "input resolution must be positive"});

    for (const Edge& e : graph.edges()) {
        if (!graph.has(e.from)) v.push_back({e.from, "edge-endpoint", "edge from unknown node"});
        if (!graph.has(e.to)) v.push_back({e.to, "edge-endpoint", "edge to unknown node"});
        if (e.from_slot != 0) v.push_back({e.from, "edge-slot", "nodes have a single output slot"});
    }
    if (!v.empty()) return v;  // later checks assume endpoints resolve

    for (const Node& n : graph.nodes()) {
        auto in = graph.inputs_of(n.id);
        std::set<int> slots;
        for (const Edge* e : in) {
            if (!slots.insert(e->to_slot).second)
                v.push_back({n.id, "input-arity", "duplicate input slot " +
                                                      std::to_string(e->to_slot)});
        }
        for (size_t i = 0; i < in.size(); ++i) {
            if (!slots.count(static_cast<int>(i))) {
                v.push_back({n.id, "input-arity", "input slots are not contiguous"});
                break;
            }
        }
        const int want = expected_arity(n.kind);
        const int got = static_cast<int>(in.size());
        if (want >= 0 && got != want)
            v.push_back({n.id, "input-arity", std::string(to_string(n.kind)) + " expects " +
                                                  std::to_string(want) + " inputs, has " +
                                                  std::to_string(got)});
        if (want < 0 && got < -want)
            v.push_back({n.id, "input-arity", std::string(to_string(n.kind)) + " expects at least " +
                                                  std::to_string(-want) + " inputs, has " +
                                                  std::to_string(got)});
        if (n.kind == NodeKind::Output && !graph.outputs_of(n.id).empty())
            v.push_back({n.id, "output-sink", "Output node must not have outgoing edges"});
    }
    if (!v.empty()) return v;

    std::vector<std::string> order;
    try {
        order = graph.topo_order();
    } catch (const GraphError&) {
        v.push_back({"", "acyclicity", "graph contains a cycle"});
        return v;
    }

    // Shape pass: best effort, skipping nodes whose inputs failed.
    ShapeMap shapes;
    for (const std::string& id : order) {
        const Node& n = graph.at(id);
        std::vector<Shape> in;
        bool ready = true;
        for (const Edge* e : graph.inputs_of(id)) {
            auto it = shapes.find(e->from);
            if (it == shapes.end()) {
                ready = false;
                break;
            }
            in.push_back(it->second);
        }
        if (!ready) continue;
        Shape out;
        if (auto err = node_output_shape(graph, n, in, &out)) {
            v.push_back({id, "shape", *err});
        } else {
            shapes[id] = out;
        }
    }
    return v;
}

ShapeMap infer_shapes(const NetworkGraph& graph) {
    auto violations = validate(graph);
    if (!violations.empty()) {
        const Violation& first = violations.front();
        throw GraphError("invalid graph: [" + first.rule + "] " +
                         (first.node.empty() ? "" : first.node + ": ") + first.detail);
    }
    ShapeMap shapes;
    for (const std::string& id : graph.topo_order()) {
        const Node& n = graph.at(id);
        std::vector<Shape> in;
        for (const Edge* e : graph.inputs_of(id)) in.push_back(shapes.at(e->from));
        Shape out;
        if (auto err = node_output_shape(graph, n, in, &out))
            throw GraphError(id + ": " + *err);
        shapes[id] = out;
    }
    return shapes;
}

ChannelMask full_mask(const NetworkGraph& graph) {
    ChannelMask mask;
    for (const Node& n : graph.nodes()) {
        if (is_conv_like(n.kind))
            mask[n.id] = std::vector<bool>(static_cast<size_t>(n.attrs.out_channels), true);
    }
    return mask;
}

int64_t kept_count(const std::vector<bool>& mask) {
    return std::count(mask.begin(), mask.end(), true);
}

// ---------------------------------------------------------------------------
// JSON serialization (schema version 1)

std::string graph_to_json(const NetworkGraph& graph) {
    ordered_json j;
    j["version"] = 1;
    j["input_resolution"] = {graph.input_height, graph.input_width};
    j["nodes"] = ordered_json::array();
    for (const Node& n : graph.nodes()) {
        ordered_json jn;
        jn["id"] = n.id;
        jn["kind"] = to_string(n.kind);
        ordered_json attrs = ordered_json::object();
        switch (n.kind) {
            case NodeKind::Conv2d:
            case NodeKind::Conv2dTranspose:
                attrs["kernel"] = n.attrs.kernel;
                attrs["stride"] = n.attrs.stride;
                attrs["padding"] = n.attrs.padding;
                attrs["in_channels"] = n.attrs.in_channels;
                attrs["out_channels"] = n.attrs.out_channels;
                attrs["has_bias"] = n.attrs.has_bias;
                break;
            case NodeKind::PixelShuffle:
                attrs["upscale"] = n.attrs.upscale;
                break;
            case NodeKind::LeakyRelu:
                attrs["slope"] = n.attrs.slope;
                break;
            case NodeKind::MaxPool2d:
                attrs["kernel"] = n.attrs.kernel;
                attrs["stride"] = n.attrs.stride;
                break;
            case NodeKind::Input:
                attrs["channels"] = n.attrs.channels;
                break;
            default:
                break;
        }
        jn["attrs"] = attrs;
        j["nodes"].push_back(jn);
    }
    j["edges"] = ordered_json::array();
    for (const Edge& e : graph.edges()) {
        j["edges"].push_back({{"from", e.from},
                              {"from_slot", e.from_slot},
                              {"to", e.to},
                              {"to_slot", e.to_slot}});
    }
    return j.dump(2) + "\n";
}

NetworkGraph graph_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw GraphError(std::string("graph JSON parse error: ") + e.what());
    }
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw GraphError("unsupported graph JSON version");
    NetworkGraph g;
    const auto& res = j.at("input_resolution");
    g.input_height = res.at(0).get<int64_t>();
    g.input_width = res.at(1).get<int64_t>();
    for (const auto& jn : j.at("nodes")) {
        const std::string id = jn.at("id").get<std::string>();
        const std::string kind_name = jn.at("kind").get<std::string>();
        auto kind = node_kind_from_string(kind_name);
        if (!kind) throw GraphError("unknown node kind: " + kind_name);
        NodeAttrs attrs;
        const auto& ja = jn.at("attrs");
        switch (*kind) {
            case NodeKind::Conv2d:
            case NodeKind::Conv2dTranspose:
                attrs.kernel = ja.at("kernel").get<int>();
                attrs.stride = ja.at("stride").get<int>();
                attrs.padding = ja.at("padding").get<int>();
                attrs.in_channels = ja.at("in_channels").get<int>();
                attrs.out_channels = ja.at("out_channels").get<int>();
                attrs.has_bias = ja.at("has_bias").get<bool>();
                break;
            case NodeKind::PixelShuffle:
                attrs.upscale = ja.at("upscale").get<int>();
                break;
            case NodeKind::LeakyRelu:
                attrs.slope = ja.at("slope").get<double>();
                break;
            case NodeKind::MaxPool2d:
                attrs.kernel = ja.at("kernel").get<int>();
                attrs.stride = ja.at("stride").get<int>();
                break;
            case NodeKind::Input:
                attrs.channels = ja.at("channels").get<int>();
                break;
            default:
                break;
        }
        g.add_node(id, *kind, attrs);
    }
    for (const auto& je : j.at("edges")) {
        Edge e;
        e.from = je.at("from").get<std::string>();
        e.from_slot = je.at("from_slot").get<int>();
        e.to = je.at("to").get<std::string>();
        e.to_slot = je.at("to_slot").get<int>();
        if (e.from_slot != 0) throw GraphError("from_slot must be 0");
        g.add_edge(e.from, e.to, e.to_slot);
    }
    return g;
}

NetworkGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw GraphError("cannot open graph file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return graph_from_json(ss.str());
}

void save_graph(const NetworkGraph& graph, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw GraphError("cannot write graph file: " + path.string());
    out << graph_to_json(graph);
}

// ---------------------------------------------------------------------------
// Reference topologies

namespace {

NodeAttrs conv_attrs(int in_c, int out_c, int k, int stride = 1, int padding = 0) {
    NodeAttrs a;
    a.kernel = k;
    a.stride = stride;
    a.padding = padding;
    a.in_channels = in_c;
    a.out_channels = out_c;
    a.has_bias = true;
    return a;
}

}  // namespace

// Low-light U-Net: 4-channel packed-raw input, five encoder levels
// (32/64/128/256/512) with 2x2 max pools, decoder of 2x2 transposed convs
// with concat skip connections, 1x1 projection to 12 channels and a final
// pixel shuffle to RGB at twice the input resolution.
NetworkGraph build_sid_topology() {
    NetworkGraph g;
    g.input_height = 1424;
    g.input_width = 2128;
    g.add_node("input", NodeKind::Input, [] {
        NodeAttrs a;
        a.channels = 4;
        return a;
    }());

    auto lrelu = [&](const std::string& id, const std::string& src) {
        NodeAttrs a;
        a.slope = 0.2;
        g.add_node(id, NodeKind::LeakyRelu, a);
        g.add_edge(src, id);
        return id;
    };
    auto conv3 = [&](const std::string& id, const std::string& src, int in_c, int out_c) {
        g.add_node(id, NodeKind::Conv2d, conv_attrs(in_c, out_c, 3, 1, 1));
        g.add_edge(src, id);
        return lrelu(id + "_act", id);
    };

    const int enc[5] = {32, 64, 128, 256, 512};
    std::string cur = "input";
    std::string skips[5];
    int in_c = 4;
    for (int lv = 0; lv < 5; ++lv) {
        const std::string tag = std::to_string(lv + 1);
        cur = conv3("conv" + tag + "_1", cur, in_c, enc[lv]);
        cur = conv3("conv" + tag + "_2", cur, enc[lv], enc[lv]);
        skips[lv] = cur;
        if (lv < 4) {
            NodeAttrs p;
            p.kernel = 2;
            p.stride = 2;
            g.add_node("pool" + tag, NodeKind::MaxPool2d, p);
            g.add_edge(cur, "pool" + tag);
            cur = "pool" + tag;
        }
        in_c = enc[lv];
    }

    for (int j = 0; j < 4; ++j) {
        const int lvl = 3 - j;               // skip level joining this stage
        const int out_c = enc[lvl];          // 256, 128, 64, 32
        const std::string tag = std::to_string(6 + j);
        g.add_node("up" + tag, NodeKind::Conv2dTranspose, conv_attrs(out_c * 2, out_c, 2, 2, 0));
        g.add_edge(cur, "up" + tag);
        g.add_node("concat" + tag, NodeKind::Concat);
        g.add_edge("up" + tag, "concat" + tag, 0);
        g.add_edge(skips[lvl], "concat" + tag, 1);
        cur = conv3("conv" + tag + "_1", "concat" + tag, out_c * 2, out_c);
        cur = conv3("conv" + tag + "_2", cur, out_c, out_c);
    }

    g.add_node("conv10", NodeKind::Conv2d, conv_attrs(32, 12, 1, 1, 0));
    g.add_edge(cur, "conv10");
    g.add_node("shuffle", NodeKind::PixelShuffle, [] {
        NodeAttrs a;
        a.upscale = 2;
        return a;
    }());
    g.add_edge("conv10", "shuffle");
    g.add_node("output", NodeKind::Output);
    g.add_edge("shuffle", "output");
    return g;
}

// Super-resolution baseline x2: head conv, 16 residual blocks, after-body
// conv with a long shortcut, 64->256 upsample conv + pixel shuffle, RGB tail.
NetworkGraph build_edsr_topology() {
    NetworkGraph g;
    g.input_height = 1020;
    g.input_width = 1020;
    g.add_node("input", NodeKind::Input, [] {
        NodeAttrs a;
        a.channels = 3;
        return a;
    }());
    g.add_node("head", NodeKind::Conv2d, conv_attrs(3, 64, 3, 1, 1));
    g.add_edge("input", "head");

    std::string cur = "head";
    for (int b = 1; b <= 16; ++b) {
        char tag[8];
        std::snprintf(tag, sizeof(tag), "b%02d", b);
        const std::string pre = tag;
        g.add_node(pre + "_conv1", NodeKind::Conv2d, conv_attrs(64, 64, 3, 1, 1));
        g.add_edge(cur, pre + "_conv1");
        g.add_node(pre + "_relu", NodeKind::Relu);
        g.add_edge(pre + "_conv1", pre + "_relu");
        g.add_node(pre + "_conv2", NodeKind::Conv2d, conv_attrs(64, 64, 3, 1, 1));
        g.add_edge(pre + "_relu", pre + "_conv2");
        g.add_node(pre + "_add", NodeKind::EltwiseAdd);
        g.add_edge(pre + "_conv2", pre + "_add", 0);
        g.add_edge(cur, pre + "_add", 1);
        cur = pre + "_add";
    }

    g.add_node("body_conv", NodeKind::Conv2d, conv_attrs(64, 64, 3, 1, 1));
    g.add_edge(cur, "body_conv");
    g.add_node("body_add", NodeKind::EltwiseAdd);
    g.add_edge("body_conv", "body_add", 0);
    g.add_edge("head", "body_add", 1);

    g.add_node("up_conv", NodeKind::Conv2d, conv_attrs(64, 256, 3, 1, 1));
    g.add_edge("body_add", "up_conv");
    g.add_node("shuffle", NodeKind::PixelShuffle, [] {
        NodeAttrs a;
        a.upscale = 2;
        return a;
    }());
    g.add_edge("up_conv", "shuffle");
    g.add_node("tail", NodeKind::Conv2d, conv_attrs(64, 3, 3, 1, 1));
    g.add_edge("shuffle", "tail");
    g.add_node("output", NodeKind::Output);
    g.add_edge("tail", "output");
    return g;
}

}  // namespace prunekit
