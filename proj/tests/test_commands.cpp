#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "prunekit/commands.hpp"
#include "prunekit/image_io.hpp"
#include "prunekit/quality.hpp"
#include "testutil.hpp"

using namespace prunekit;
using namespace prunekit::commands;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("prunekit_cmd_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    fs::path operator/(const std::string& name) const { return path / name; }
};

// node -> mac_per_weight column from the analyze CSV.
std::map<std::string, double> parse_rl(const std::string& csv) {
    std::map<std::string, double> out;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.rfind("total,", 0) == 0 || line.empty() || line[0] == '{') break;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string col;
        while (std::getline(ls, col, ',')) cols.push_back(col);
        if (cols.size() >= 6 && !cols[5].empty()) out[cols[0]] = std::stod(cols[5]);
    }
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("analyze: EDSR interior block convs share one mac/weight value") {
    TempDir dir;
    save_graph(build_edsr_topology(), dir / "edsr.json");
    std::ostringstream out, err;
    AnalyzeOptions opt;
    opt.graph = dir / "edsr.json";
    opt.groups_out = dir / "groups.json";
    REQUIRE(cmd_analyze(opt, out, err) == 0);
    const auto rl = parse_rl(out.str());
    const double interior = rl.at("b01_conv1");
    for (int b = 1; b <= 16; ++b) {
        char tag[8];
        std::snprintf(tag, sizeof(tag), "b%02d", b);
        CHECK(rl.at(std::string(tag) + "_conv1") == interior);
        CHECK(rl.at(std::string(tag) + "_conv2") == interior);
    }
    CHECK(rl.at("head") == interior);
    CHECK(rl.at("body_conv") == interior);
}

TEST_CASE("analyze: SID mac/weight peaks at the first and last conv layers") {
    TempDir dir;
    save_graph(build_sid_topology(), dir / "sid.json");
    std::ostringstream out, err;
    AnalyzeOptions opt;
    opt.graph = dir / "sid.json";
    opt.groups_out = dir / "groups.json";
    REQUIRE(cmd_analyze(opt, out, err) == 0);
    const auto rl = parse_rl(out.str());
    const double top = rl.at("conv1_1");
    CHECK(rl.at("conv10") == top);
    CHECK(rl.at("conv9_2") == top);
    for (const auto& [node, value] : rl) CHECK(value <= top);
    CHECK(rl.at("conv5_1") < top);
}

TEST_CASE("analyze fails cleanly on a missing file") {
    std::ostringstream out, err;
    AnalyzeOptions opt;
    opt.graph = "/nonexistent/graph.json";
    CHECK(cmd_analyze(opt, out, err) == 1);
    CHECK(err.str().rfind("error: ", 0) == 0);
    CHECK(err.str().find('\n') == err.str().size() - 1);  // single line
}

TEST_CASE("report: identical graphs give 100 percent everywhere") {
    TempDir dir;
    save_graph(build_edsr_topology(), dir / "g.json");
    std::ostringstream out, err;
    ReportOptions opt;
    opt.before_graph = dir / "g.json";
    opt.after_graph = dir / "g.json";
    REQUIRE(cmd_report(opt, out, err) == 0);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);  // header
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.rfind("layer,", 0) == 0) continue;
        if (line.empty()) continue;
        CHECK(line.substr(line.rfind(',') + 1) == "100");
        ++rows;
    }
    CHECK(rows > 5);
}

TEST_CASE("report: halving one layer's channels matches hand arithmetic") {
    TempDir dir;
    NetworkGraph before;
    before.input_height = 8;
    before.input_width = 8;
    before.add_node("input", NodeKind::Input, testutil::input_attrs(3));
    before.add_node("c1", NodeKind::Conv2d, testutil::conv_attrs(3, 64, 3));
    before.add_edge("input", "c1");
    before.add_node("c2", NodeKind::Conv2d, testutil::conv_attrs(64, 3, 3));
    before.add_edge("c1", "c2");
    before.add_node("output", NodeKind::Output);
    before.add_edge("c2", "output");
    NetworkGraph after = before;
    after.at("c1").attrs.out_channels = 32;
    after.at("c2").attrs.in_channels = 32;
    save_graph(before, dir / "before.json");
    save_graph(after, dir / "after.json");

    std::ostringstream out, err;
    ReportOptions opt;
    opt.before_graph = dir / "before.json";
    opt.after_graph = dir / "after.json";
    REQUIRE(cmd_report(opt, out, err) == 0);
    // weights: before 3*64*9 + 64*3*9 = 3456, after 3*32*9 + 32*3*9 = 1728.
    CHECK(out.str().find("weights,3456,1728,50") != std::string::npos);

    // Kernel-size mismatch is a topology error.
    after.at("c2").attrs.kernel = 1;
    save_graph(after, dir / "bad.json");
    opt.after_graph = dir / "bad.json";
    std::ostringstream out2, err2;
    CHECK(cmd_report(opt, out2, err2) == 1);
    CHECK(err2.str().find("topology mismatch") != std::string::npos);
}

TEST_CASE("infer round-trips a PGM image through an identity network") {
    TempDir dir;
    NetworkGraph g;
    g.input_height = 12;
    g.input_width = 10;
    g.add_node("input", NodeKind::Input, testutil::input_attrs(1));
    g.add_node("c", NodeKind::Conv2d, testutil::conv_attrs(1, 1, 1, 1, 0));
    g.add_edge("input", "c");
    g.add_node("output", NodeKind::Output);
    g.add_edge("c", "output");
    save_graph(g, dir / "g.json");
    WeightStore store;
    Tensor k;
    k.dims = {1, 1, 1, 1};
    k.data = {1.0f};
    store.put("c.kernel", k);
    Tensor b;
    b.dims = {1};
    b.data = {0.0f};
    store.put("c.bias", b);
    save_store(store, dir / "w.prwt");

    Rng rng(3);
    TensorBuf img = TensorBuf::zeros(1, 1, 12, 10);
    for (float& v : img.data) v = static_cast<float>(rng.uniform_int(0, 255));
    save_pnm(img, dir / "in.pgm");

    std::ostringstream out, err;
    InferOptions opt;
    opt.graph = dir / "g.json";
    opt.weights = dir / "w.prwt";
    opt.input = dir / "in.pgm";
    opt.output = dir / "out.pgm";
    REQUIRE(cmd_infer(opt, out, err) == 0);
    const TensorBuf back = load_pnm(dir / "out.pgm");
    CHECK(back.data == img.data);
}

TEST_CASE("eval reports inf psnr and unit ssim for a perfect network") {
    TempDir dir;
    NetworkGraph g;
    g.input_height = 16;
    g.input_width = 16;
    g.add_node("input", NodeKind::Input, testutil::input_attrs(1));
    g.add_node("c", NodeKind::Conv2d, testutil::conv_attrs(1, 1, 1, 1, 0));
    g.add_edge("input", "c");
    g.add_node("output", NodeKind::Output);
    g.add_edge("c", "output");
    save_graph(g, dir / "g.json");
    WeightStore store;
    Tensor k;
    k.dims = {1, 1, 1, 1};
    k.data = {1.0f};
    store.put("c.kernel", k);
    Tensor b;
    b.dims = {1};
    b.data = {0.0f};
    store.put("c.bias", b);
    save_store(store, dir / "w.prwt");

    Rng rng(4);
    TensorBuf img = TensorBuf::zeros(1, 1, 16, 16);
    for (float& v : img.data) v = static_cast<float>(rng.uniform_int(0, 255));
    save_pnm(img, dir / "a.pgm");
    std::ofstream manifest(dir / "pairs.tsv");
    manifest << (dir / "a.pgm").string() << "\t" << (dir / "a.pgm").string() << "\n";
    manifest.close();

    std::ostringstream out, err;
    EvalOptions opt;
    opt.graph = dir / "g.json";
    opt.weights = dir / "w.prwt";
    opt.pairs = dir / "pairs.tsv";
    REQUIRE(cmd_eval(opt, out, err) == 0);
    CHECK(out.str().find("\"psnr\": \"inf\"") != std::string::npos);
    CHECK(out.str().find("\"mean_ssim\": 1.0") != std::string::npos);
}

TEST_CASE("synth and init write loadable artifacts") {
    TempDir dir;
    std::ostringstream out, err;
    SynthOptions sy;
    sy.kind = "denoise";
    sy.seed = 9;
    sy.count = 4;
    sy.size = 12;
    sy.out = dir / "data.prwt";
    REQUIRE(cmd_synth(sy, out, err) == 0);
    const Dataset data = load_dataset(dir / "data.prwt");
    CHECK(data.size() == 4);
    CHECK(data[0].input.h == 12);

    save_graph(build_edsr_topology(), dir / "g.json");
    InitOptions init;
    init.graph = dir / "g.json";
    init.seed = 1;
    init.out = dir / "w.prwt";
    REQUIRE(cmd_init(init, out, err) == 0);
    CHECK(check_store(build_edsr_topology(), load_store(dir / "w.prwt")).empty());
}

TEST_CASE("prune command writes graph, weights, report and manifest") {
    TempDir dir;
    Rng rng(5);
    const NetworkGraph g = testutil::random_residual(rng);
    save_graph(g, dir / "g.json");
    save_store(init_weights(g, 2), dir / "w.prwt");

    PruneOptions opt;
    opt.graph = dir / "g.json";
    opt.weights = dir / "w.prwt";
    opt.out_prefix = dir / "pruned";
    opt.config.method = PruneMethod::D;
    opt.config.threshold_increment = 0.02;
    opt.config.sparsity_increment = 0.2;
    opt.config.depth_floor = 1;
    std::ostringstream out, err;
    REQUIRE(cmd_prune(opt, out, err) == 0);

    const NetworkGraph pruned = load_graph(dir / "pruned.graph.json");
    const WeightStore pruned_store = load_store(dir / "pruned.weights.prwt");
    CHECK(validate(pruned).empty());
    CHECK(check_store(pruned, pruned_store).empty());
    const std::string report = slurp(dir / "pruned.report.json");
    CHECK(report.find("\"sparsity\"") != std::string::npos);
    const std::string manifest = slurp(dir / "pruned.manifest.json");
    CHECK(manifest.find("\"fnv1a\"") != std::string::npos);
    CHECK(manifest.find("\"method\": \"D\"") != std::string::npos);
}

TEST_CASE("loop command is reproducible byte-for-byte under a fixed seed") {
    TempDir dir;
    // 2-conv denoiser, tiny budget: this is a smoke test, the acceptance
    // suite runs the full-size loop.
    NetworkGraph g;
    g.input_height = 12;
    g.input_width = 12;
    g.add_node("input", NodeKind::Input, testutil::input_attrs(1));
    g.add_node("c1", NodeKind::Conv2d, testutil::conv_attrs(1, 6, 3));
    g.add_edge("input", "c1");
    g.add_node("r1", NodeKind::Relu);
    g.add_edge("c1", "r1");
    g.add_node("c2", NodeKind::Conv2d, testutil::conv_attrs(6, 1, 3));
    g.add_edge("r1", "c2");
    g.add_node("output", NodeKind::Output);
    g.add_edge("c2", "output");
    save_graph(g, dir / "g.json");
    save_store(init_weights(g, 7), dir / "w.prwt");
    save_dataset(make_synthetic_dataset(SyntheticKind::Denoise, 21, 8, 12), dir / "train.prwt");
    save_dataset(make_synthetic_dataset(SyntheticKind::Denoise, 22, 4, 12), dir / "val.prwt");

    LoopOptions opt;
    opt.graph = dir / "g.json";
    opt.weights = dir / "w.prwt";
    opt.train_data = dir / "train.prwt";
    opt.val_data = dir / "val.prwt";
    opt.config.method = PruneMethod::D;
    opt.config.threshold_increment = 0.01;
    opt.config.sparsity_increment = 0.15;
    opt.config.depth_floor = 1;
    opt.config.max_steps = 60;
    opt.config.target_psnr = 5.0;  // easy gate; structure is what we check
    opt.config.seed = 77;
    opt.train.learning_rate = 0.05;
    opt.train.steps_per_round = 20;
    opt.train.batch_size = 2;
    opt.train.seed = 77;
    opt.peak = 1.0;

    std::ostringstream out1, err1, out2, err2;
    opt.out_prefix = dir / "run1";
    REQUIRE(cmd_loop(opt, out1, err1) == 0);
    opt.out_prefix = dir / "run2";
    REQUIRE(cmd_loop(opt, out2, err2) == 0);

    CHECK(slurp(dir / "run1.manifest.json") == slurp(dir / "run2.manifest.json"));
    CHECK(slurp(dir / "run1.report.json") == slurp(dir / "run2.report.json"));
    CHECK(slurp(dir / "run1.graph.json") == slurp(dir / "run2.graph.json"));
    CHECK(slurp(dir / "run1.weights.prwt") == slurp(dir / "run2.weights.prwt"));
    CHECK(slurp(dir / "run1.report.json").find("\"quality_passed\": true") !=
          std::string::npos);
}
