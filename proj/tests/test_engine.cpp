#include "doctest.h"

#include <cmath>

#include "prunekit/engine.hpp"
#include "prunekit/kernels.hpp"
#include "testutil.hpp"

using namespace prunekit;
using testutil::conv_attrs;
using testutil::input_attrs;

namespace {

NetworkGraph wrap_single(const std::string& id, NodeKind kind, NodeAttrs attrs, int in_c,
                         int spatial) {
    NetworkGraph g;
    g.input_height = spatial;
    g.input_width = spatial;
    g.add_node("input", NodeKind::Input, input_attrs(in_c));
    g.add_node(id, kind, attrs);
    g.add_edge("input", id);
    g.add_node("output", NodeKind::Output);
    g.add_edge(id, "output");
    return g;
}

// Central finite differences over every kernel/bias element and a sample of
// input pixels. h = 1e-3, relative tolerance 1e-3. Deep nets need a larger
// step: the f32 loss evaluation noise scales as eps * |loss| / (2h).
void check_gradients(const NetworkGraph& graph, WeightStore store, const Sample& sample,
                     TrainSpec::Loss loss = TrainSpec::Loss::MSE, double h = 1e-3) {
    const Gradients analytic = compute_gradients(graph, store, sample, loss);
    auto loss_at = [&]() {
        return compute_gradients(graph, store, sample, loss).loss;
    };
    auto check_one = [&](float* slot, double got) {
        const float saved = *slot;
        *slot = saved + static_cast<float>(h);
        const double up = loss_at();
        *slot = saved - static_cast<float>(h);
        const double down = loss_at();
        *slot = saved;
        const double fd = (up - down) / (2.0 * h);
        const double tol = 1e-3 * std::max({std::fabs(fd), std::fabs(got), 1e-1});
        CHECK(std::fabs(fd - got) <= tol);
    };

    for (const auto& [name, grad] : analytic.kernel) {
        Tensor& k = store.at(kernel_name(name));
        for (size_t i = 0; i < k.data.size(); ++i) check_one(&k.data[i], grad.data[i]);
    }
    for (const auto& [name, grad] : analytic.bias) {
        Tensor& b = store.at(bias_name(name));
        for (size_t i = 0; i < b.data.size(); ++i) check_one(&b.data[i], grad[i]);
    }
    // Input gradient, spot-checked on a stride through the tensor.
    Sample s = sample;
    for (size_t i = 0; i < s.input.data.size(); i += 7) {
        const float saved = s.input.data[i];
        s.input.data[i] = saved + static_cast<float>(h);
        const double up = compute_gradients(graph, store, s, loss).loss;
        s.input.data[i] = saved - static_cast<float>(h);
        const double down = compute_gradients(graph, store, s, loss).loss;
        s.input.data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double got = analytic.input.data[i];
        const double tol = 1e-3 * std::max({std::fabs(fd), std::fabs(got), 1e-1});
        CHECK(std::fabs(fd - got) <= tol);
    }
}

}  // namespace

TEST_CASE("1x1 conv with kernel 2 doubles a tensor of ones") {
    NetworkGraph g = wrap_single("c", NodeKind::Conv2d, conv_attrs(1, 1, 1, 1, 0), 1, 4);
    WeightStore store;
    Tensor k;
    k.dims = {1, 1, 1, 1};
    k.data = {2.0f};
    store.put("c.kernel", k);
    Tensor b;
    b.dims = {1};
    b.data = {0.0f};
    store.put("c.bias", b);

    TensorBuf in = TensorBuf::zeros(1, 1, 4, 4);
    std::fill(in.data.begin(), in.data.end(), 1.0f);
    const TensorBuf out = forward(g, store, in);
    for (float v : out.data) CHECK(v == 2.0f);
}

TEST_CASE("eltwise add of a tensor with itself doubles it") {
    NetworkGraph g;
    g.input_height = 4;
    g.input_width = 4;
    g.add_node("input", NodeKind::Input, input_attrs(2));
    g.add_node("add", NodeKind::EltwiseAdd);
    g.add_edge("input", "add", 0);
    g.add_edge("input", "add", 1);
    g.add_node("output", NodeKind::Output);
    g.add_edge("add", "output");

    Rng rng(1);
    const TensorBuf in = testutil::random_tensor(rng, 2, 4, 4);
    const TensorBuf out = forward(g, WeightStore{}, in);
    for (size_t i = 0; i < in.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(2.0f * in.data[i]));
}

TEST_CASE("random nets match the nested-loop convolution oracle") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const NetworkGraph g = testutil::random_chain(rng);
        const WeightStore store = init_weights(g, 1000 + trial);
        const ShapeMap shapes = infer_shapes(g);
        const Shape in_shape = shapes.at("input");
        const TensorBuf input = testutil::random_tensor(rng, in_shape.c, in_shape.h, in_shape.w);

        // Oracle: run every node with the naive reference implementations.
        std::map<std::string, TensorBuf> outs;
        for (const std::string& id : g.topo_order()) {
            const Node& n = g.at(id);
            const auto in_edges = g.inputs_of(id);
            switch (n.kind) {
                case NodeKind::Input:
                    outs[id] = input;
                    break;
                case NodeKind::Conv2d: {
                    const std::vector<float>& bias = store.at(bias_name(id)).data;
                    outs[id] = testutil::conv2d_reference(n, outs.at(in_edges[0]->from),
                                                          store.at(kernel_name(id)), &bias);
                    break;
                }
                case NodeKind::Relu:
                case NodeKind::LeakyRelu: {
                    TensorBuf t = outs.at(in_edges[0]->from);
                    const float slope =
                        n.kind == NodeKind::Relu ? 0.0f : static_cast<float>(n.attrs.slope);
                    for (float& v : t.data) v = v > 0 ? v : slope * v;
                    outs[id] = std::move(t);
                    break;
                }
                case NodeKind::Output:
                    outs[id] = outs.at(in_edges[0]->from);
                    break;
                default:
                    FAIL("unexpected node kind in chain");
            }
        }
        const TensorBuf& expect = outs.at("output");
        const TensorBuf got = forward(g, store, input);
        CHECK(testutil::max_rel_diff(expect, got) < 1e-5);
    }
}

TEST_CASE("transposed conv matches its reference") {
    Rng rng(321);
    for (int trial = 0; trial < 8; ++trial) {
        NetworkGraph g;
        g.input_height = 8;
        g.input_width = 8;
        g.add_node("input", NodeKind::Input, input_attrs(3));
        g.add_node("up", NodeKind::Conv2dTranspose, conv_attrs(3, 4, 2, 2, 0));
        g.add_edge("input", "up");
        g.add_node("output", NodeKind::Output);
        g.add_edge("up", "output");
        const WeightStore store = init_weights(g, 50 + trial);
        const TensorBuf input = testutil::random_tensor(rng, 3, 8, 8);
        const std::vector<float>& bias = store.at("up.bias").data;
        const TensorBuf expect =
            testutil::convt_reference(g.at("up"), input, store.at("up.kernel"), &bias);
        const TensorBuf got = forward(g, store, input);
        CHECK(got.h == 16);
        CHECK(testutil::max_rel_diff(expect, got) < 1e-5);
    }
}

TEST_CASE("max pool and pixel shuffle forward") {
    NodeAttrs pool;
    pool.kernel = 2;
    pool.stride = 2;
    NetworkGraph g = wrap_single("pool", NodeKind::MaxPool2d, pool, 1, 4);
    TensorBuf in = TensorBuf::zeros(1, 1, 4, 4);
    for (int i = 0; i < 16; ++i) in.data[static_cast<size_t>(i)] = static_cast<float>(i);
    const TensorBuf out = forward(g, WeightStore{}, in);
    CHECK(out.data == std::vector<float>{5, 7, 13, 15});

    NodeAttrs ps;
    ps.upscale = 2;
    NetworkGraph g2 = wrap_single("ps", NodeKind::PixelShuffle, ps, 4, 2);
    TensorBuf in2 = TensorBuf::zeros(1, 4, 2, 2);
    for (int i = 0; i < 16; ++i) in2.data[static_cast<size_t>(i)] = static_cast<float>(i);
    const TensorBuf out2 = forward(g2, WeightStore{}, in2);
    // out[0][y*2+dy][x*2+dx] = in[dy*2+dx][y][x]
    CHECK(out2.c == 1);
    CHECK(out2.at(0, 0, 0, 0) == 0.0f);
    CHECK(out2.at(0, 0, 0, 1) == 4.0f);
    CHECK(out2.at(0, 0, 1, 0) == 8.0f);
    CHECK(out2.at(0, 0, 1, 1) == 12.0f);
    CHECK(out2.at(0, 0, 2, 2) == 3.0f);
}

TEST_CASE("kernel variants agree at the network level") {
    Rng rng(404);
    const NetworkGraph g = testutil::random_residual(rng);
    const WeightStore store = init_weights(g, 40);
    const Shape in_shape = infer_shapes(g).at("input");
    const TensorBuf input = testutil::random_tensor(rng, in_shape.c, in_shape.h, in_shape.w);

    kernels::force("scalar");
    const TensorBuf reference = forward(g, store, input);
    for (const kernels::Kernels* k : kernels::available()) {
        kernels::force(k->name);
        const TensorBuf out = forward(g, store, input);
        CAPTURE(std::string(k->name));
        CHECK(testutil::max_rel_diff(reference, out) < 1e-5);
    }
    kernels::force(nullptr);
}

TEST_CASE("forward is deterministic and rejects shape mismatches") {
    Rng rng(8);
    const NetworkGraph g = testutil::random_residual(rng);
    const WeightStore store = init_weights(g, 4);
    const Shape in_shape = infer_shapes(g).at("input");
    const TensorBuf input = testutil::random_tensor(rng, in_shape.c, in_shape.h, in_shape.w);
    const TensorBuf a = forward(g, store, input);
    const TensorBuf b = forward(g, store, input);
    CHECK(a.data == b.data);

    TensorBuf bad = TensorBuf::zeros(1, in_shape.c + 1, in_shape.h, in_shape.w);
    CHECK_THROWS_AS(forward(g, store, bad), EngineError);
}

TEST_CASE("a conv with zero input channels broadcasts its bias") {
    NetworkGraph h;
    h.input_height = 4;
    h.input_width = 4;
    h.add_node("input", NodeKind::Input, input_attrs(1));
    h.add_node("dead", NodeKind::Conv2d, conv_attrs(1, 0, 3));
    h.add_edge("input", "dead");
    h.add_node("c", NodeKind::Conv2d, conv_attrs(0, 2, 3, 1, 1));
    h.add_edge("dead", "c");
    h.add_node("output", NodeKind::Output);
    h.add_edge("c", "output");
    CHECK(validate(h).empty());

    WeightStore store;
    Tensor dead_k;
    dead_k.dims = {0, 1, 3, 3};
    store.put("dead.kernel", dead_k);
    Tensor dead_b;
    dead_b.dims = {0};
    store.put("dead.bias", dead_b);
    Tensor k;
    k.dims = {2, 0, 3, 3};
    store.put("c.kernel", k);
    Tensor b;
    b.dims = {2};
    b.data = {1.5f, -0.5f};
    store.put("c.bias", b);

    const TensorBuf out = forward(h, store, TensorBuf::zeros(1, 1, 4, 4));
    CHECK(out.c == 2);
    for (int64_t y = 0; y < 4; ++y) {
        CHECK(out.at(0, 0, y, 0) == 1.5f);
        CHECK(out.at(0, 1, y, 0) == -0.5f);
    }
}

TEST_CASE("gradients match central finite differences for every operator") {
    Rng rng(777);

    SUBCASE("conv2d stride 1") {
        NetworkGraph g = wrap_single("c", NodeKind::Conv2d, conv_attrs(2, 3, 3, 1, 1), 2, 5);
        WeightStore store = init_weights(g, 1);
        Sample s{testutil::random_tensor(rng, 2, 5, 5),
                 testutil::random_tensor(rng, 3, 5, 5)};
        check_gradients(g, store, s);
    }
    SUBCASE("conv2d stride 2, no padding") {
        NetworkGraph g = wrap_single("c", NodeKind::Conv2d, conv_attrs(2, 2, 3, 2, 0), 2, 7);
        WeightStore store = init_weights(g, 2);
        Sample s{testutil::random_tensor(rng, 2, 7, 7),
                 testutil::random_tensor(rng, 2, 3, 3)};
        check_gradients(g, store, s);
    }
    SUBCASE("conv2d transpose") {
        NetworkGraph g =
            wrap_single("c", NodeKind::Conv2dTranspose, conv_attrs(2, 2, 2, 2, 0), 2, 4);
        WeightStore store = init_weights(g, 3);
        Sample s{testutil::random_tensor(rng, 2, 4, 4),
                 testutil::random_tensor(rng, 2, 8, 8)};
        check_gradients(g, store, s, TrainSpec::Loss::L1);
    }
    SUBCASE("relu and leaky relu") {
        NetworkGraph g = wrap_single("r", NodeKind::Relu, {}, 2, 4);
        Sample s{testutil::random_tensor(rng, 2, 4, 4),
                 testutil::random_tensor(rng, 2, 4, 4)};
        for (float& v : s.input.data)
            if (std::fabs(v) < 0.05f) v = 0.1f;  // keep away from the kink
        check_gradients(g, WeightStore{}, s);

        NodeAttrs lrelu;
        lrelu.slope = 0.2;
        NetworkGraph g2 = wrap_single("l", NodeKind::LeakyRelu, lrelu, 2, 4);
        check_gradients(g2, WeightStore{}, s);
    }
    SUBCASE("eltwise add and concat") {
        NetworkGraph g;
        g.input_height = 4;
        g.input_width = 4;
        g.add_node("input", NodeKind::Input, input_attrs(2));
        g.add_node("c1", NodeKind::Conv2d, conv_attrs(2, 2, 1, 1, 0));
        g.add_edge("input", "c1");
        g.add_node("c2", NodeKind::Conv2d, conv_attrs(2, 2, 1, 1, 0));
        g.add_edge("input", "c2");
        g.add_node("add", NodeKind::EltwiseAdd);
        g.add_edge("c1", "add", 0);
        g.add_edge("c2", "add", 1);
        g.add_node("cat", NodeKind::Concat);
        g.add_edge("add", "cat", 0);
        g.add_edge("c1", "cat", 1);
        g.add_node("output", NodeKind::Output);
        g.add_edge("cat", "output");
        WeightStore store = init_weights(g, 4);
        Sample s{testutil::random_tensor(rng, 2, 4, 4),
                 testutil::random_tensor(rng, 4, 4, 4)};
        check_gradients(g, store, s);
    }
    SUBCASE("pixel shuffle") {
        NodeAttrs ps;
        ps.upscale = 2;
        NetworkGraph g = wrap_single("p", NodeKind::PixelShuffle, ps, 4, 3);
        Sample s{testutil::random_tensor(rng, 4, 3, 3),
                 testutil::random_tensor(rng, 1, 6, 6)};
        check_gradients(g, WeightStore{}, s);
    }
    SUBCASE("max pool") {
        NodeAttrs pool;
        pool.kernel = 2;
        pool.stride = 2;
        NetworkGraph g = wrap_single("m", NodeKind::MaxPool2d, pool, 2, 6);
        Sample s{testutil::random_tensor(rng, 2, 6, 6),
                 testutil::random_tensor(rng, 2, 3, 3)};
        // Separate window entries so the argmax is stable under +-h.
        for (size_t i = 0; i < s.input.data.size(); ++i)
            s.input.data[i] += 0.01f * static_cast<float>(i % 17);
        check_gradients(g, WeightStore{}, s);
    }
    SUBCASE("deep residual composition (activation-free, kink-safe)") {
        NetworkGraph g;
        g.input_height = 6;
        g.input_width = 6;
        g.add_node("input", NodeKind::Input, input_attrs(2));
        g.add_node("head", NodeKind::Conv2d, conv_attrs(2, 3, 3));
        g.add_edge("input", "head");
        std::string cur = "head";
        for (int b = 0; b < 2; ++b) {
            const std::string pre = "b" + std::to_string(b);
            g.add_node(pre + "_conv", NodeKind::Conv2d, conv_attrs(3, 3, 3));
            g.add_edge(cur, pre + "_conv");
            g.add_node(pre + "_add", NodeKind::EltwiseAdd);
            g.add_edge(pre + "_conv", pre + "_add", 0);
            g.add_edge(cur, pre + "_add", 1);
            cur = pre + "_add";
        }
        g.add_node("tail", NodeKind::Conv2d, conv_attrs(3, 1, 3));
        g.add_edge(cur, "tail");
        g.add_node("output", NodeKind::Output);
        g.add_edge("tail", "output");

        WeightStore store = init_weights(g, 5);
        Sample s{testutil::random_tensor(rng, 2, 6, 6),
                 testutil::random_tensor(rng, 1, 6, 6)};
        check_gradients(g, store, s, TrainSpec::Loss::MSE, 1e-2);
    }
}

TEST_CASE("training a 1x1 conv learns y = 3x") {
    // Oracle: least squares says the kernel must converge to 3, bias to 0.
    NetworkGraph g = wrap_single("c", NodeKind::Conv2d, conv_attrs(1, 1, 1, 1, 0), 1, 4);
    WeightStore store = init_weights(g, 9);
    Rng rng(55);
    Dataset data;
    for (int i = 0; i < 16; ++i) {
        Sample s;
        s.input = testutil::random_tensor(rng, 1, 4, 4);
        s.target = s.input;
        for (float& v : s.target.data) v *= 3.0f;
        data.push_back(std::move(s));
    }
    TrainSpec spec;
    spec.loss = TrainSpec::Loss::MSE;
    spec.learning_rate = 0.2;
    spec.steps_per_round = 400;
    spec.batch_size = 4;
    spec.seed = 7;
    const TrainResult r = train(g, store, data, spec);
    CHECK(r.steps == 400);
    CHECK(store.at("c.kernel").data[0] == doctest::Approx(3.0).epsilon(1e-2));
    CHECK(std::fabs(store.at("c.bias").data[0]) < 0.02);
}

TEST_CASE("zero training steps leave the store unchanged") {
    Rng rng(2);
    const NetworkGraph g = testutil::random_chain(rng);
    WeightStore store = init_weights(g, 3);
    const uint64_t before = store_checksum(store);
    TrainSpec spec;
    spec.steps_per_round = 100;
    Dataset data = make_synthetic_dataset(SyntheticKind::Denoise, 1, 4, 8,
                                          static_cast<int>(infer_shapes(g).at("input").c));
    const TrainResult r = train(g, store, data, spec, 0);
    CHECK(r.steps == 0);
    CHECK(store_checksum(store) == before);
}

TEST_CASE("divergent training aborts with an error") {
    NetworkGraph g = wrap_single("c", NodeKind::Conv2d, conv_attrs(1, 1, 1, 1, 0), 1, 4);
    WeightStore store = init_weights(g, 9);
    Rng rng(56);
    Dataset data;
    for (int i = 0; i < 4; ++i) {
        Sample s;
        s.input = testutil::random_tensor(rng, 1, 4, 4);
        s.target = s.input;
        data.push_back(std::move(s));
    }
    TrainSpec spec;
    spec.learning_rate = 1e8;  // guaranteed blow-up
    spec.steps_per_round = 200;
    CHECK_THROWS_AS(train(g, store, data, spec), EngineError);
}

TEST_CASE("synthetic datasets are deterministic and well-formed") {
    const Dataset a = make_synthetic_dataset(SyntheticKind::Denoise, 11, 6, 16, 1);
    const Dataset b = make_synthetic_dataset(SyntheticKind::Denoise, 11, 6, 16, 1);
    const Dataset c = make_synthetic_dataset(SyntheticKind::Denoise, 12, 6, 16, 1);
    REQUIRE(a.size() == 6);
    CHECK(a[0].input.data == b[0].input.data);
    CHECK(a[3].target.data == b[3].target.data);
    CHECK(a[0].input.data != c[0].input.data);
    for (float v : a[0].target.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(a[0].input.data != a[0].target.data);

    const Dataset up = make_synthetic_dataset(SyntheticKind::Upscale, 5, 3, 12, 1);
    for (const Sample& s : up) {
        CHECK(s.target.h == 2 * s.input.h);
        CHECK(s.target.w == 2 * s.input.w);
    }
}
