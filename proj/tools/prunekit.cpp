// prunekit: channel pruning toolkit for small convolutional networks.
//
// Subcommands: topo, analyze, report, prune, loop, infer, eval, synth, init.
// Config precedence: CLI flags > --config JSON > built-in defaults; the seed
// additionally falls back to the PRUNEKIT_SEED environment variable.
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "prunekit/commands.hpp"

namespace {

using namespace prunekit;
using namespace prunekit::commands;

uint64_t env_seed() {
    if (const char* env = std::getenv("PRUNEKIT_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

// Fields shared by prune/loop, with config-file override support.
struct SharedPruneFlags {
    std::string method = "D";
    double threshold_increment = 0.002;
    double sparsity_increment = 0.1;
    int depth_floor = 1;
    int bytes_per_element = 4;
    uint64_t seed = 0;
    bool no_stop_on_saturation = false;
    std::string config_file;

    void attach(CLI::App* app) {
        app->add_option("--method", method, "Pruning method: A, B, C or D")
            ->check(CLI::IsMember({"A", "B", "C", "D", "a", "b", "c", "d"}));
        app->add_option("--threshold-increment", threshold_increment,
                        "Magnitude threshold increment T_i");
        app->add_option("--sparsity-increment", sparsity_increment,
                        "Network sparsity target increment S_i per round");
        app->add_option("--depth-floor", depth_floor,
                        "Minimum surviving output channels per layer (methods B/C/D)");
        app->add_option("--bytes-per-element", bytes_per_element,
                        "Element width for bandwidth accounting")
            ->check(CLI::IsMember({1, 2, 4}));
        app->add_option("--seed", seed, "Seed for all randomness (PRUNEKIT_SEED fallback)");
        app->add_flag("--no-stop-on-saturation", no_stop_on_saturation,
                      "Keep retraining rounds even when pruning has saturated");
        app->add_option("--config", config_file, "JSON config file (CLI flags win)");
    }

    // Overlay: defaults, then config file values, then explicit CLI flags.
    PruneConfig resolve(const CLI::App* app) const {
        PruneConfig cfg;
        cfg.seed = env_seed();
        nlohmann::json j;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in) throw CLI::ValidationError("--config", "cannot open " + config_file);
            in >> j;
        }
        auto pick_str = [&](const char* flag, const char* key, const std::string& cli_value,
                            const std::string& fallback) {
            if (app->count(flag)) return cli_value;
            if (j.contains(key)) return j[key].get<std::string>();
            return fallback;
        };
        auto pick_num = [&](const char* flag, const char* key, auto cli_value, auto fallback) {
            if (app->count(flag)) return cli_value;
            if (j.contains(key)) return j[key].get<decltype(fallback)>();
            return fallback;
        };
        const std::string method_name = pick_str("--method", "method", method, "D");
        const auto m = prune_method_from_string(method_name);
        if (!m) throw CLI::ValidationError("--method", "unknown method " + method_name);
        cfg.method = *m;
        cfg.threshold_increment = pick_num("--threshold-increment", "threshold_increment",
                                           threshold_increment, 0.002);
        cfg.sparsity_increment =
            pick_num("--sparsity-increment", "sparsity_increment", sparsity_increment, 0.1);
        cfg.depth_floor = pick_num("--depth-floor", "depth_floor", depth_floor, 1);
        cfg.bytes_per_element =
            pick_num("--bytes-per-element", "bytes_per_element", bytes_per_element, 4);
        cfg.seed = pick_num("--seed", "seed", seed, cfg.seed);
        if (app->count("--no-stop-on-saturation"))
            cfg.stop_on_saturation = false;
        else if (j.contains("stop_on_saturation"))
            cfg.stop_on_saturation = j["stop_on_saturation"].get<bool>();
        return cfg;
    }

    nlohmann::json config_json_or_empty() const {
        nlohmann::json j;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (in) in >> j;
        }
        return j;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prunekit: architecture-aware channel pruning for CNNs"};
    app.require_subcommand(1);

    // topo
    auto* topo = app.add_subcommand("topo", "Write a built-in reference topology as graph JSON");
    TopoOptions topo_opt;
    topo->add_option("--name", topo_opt.name, "sid or edsr")->required();
    topo->add_option("--out", topo_opt.out, "Output graph JSON path")->required();

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Per-layer cost report and channel groups");
    AnalyzeOptions an_opt;
    std::string an_csv, an_groups, an_weights;
    analyze->add_option("--graph", an_opt.graph, "Graph JSON")->required();
    analyze->add_option("--weights", an_weights, "Weight store (consistency check)");
    analyze->add_option("--csv", an_csv, "Write the cost CSV here instead of stdout");
    analyze->add_option("--groups", an_groups, "Write the group JSON here instead of stdout");
    analyze->add_option("--bytes-per-element", an_opt.bytes_per_element,
                        "Element width for bandwidth accounting")
        ->check(CLI::IsMember({1, 2, 4}));

    // report
    auto* report = app.add_subcommand("report", "Before/after cost comparison");
    ReportOptions rep_opt;
    std::string rep_bw, rep_aw;
    report->add_option("--before-graph", rep_opt.before_graph)->required();
    report->add_option("--after-graph", rep_opt.after_graph)->required();
    report->add_option("--before-weights", rep_bw);
    report->add_option("--after-weights", rep_aw);
    report->add_option("--bytes-per-element", rep_opt.bytes_per_element)
        ->check(CLI::IsMember({1, 2, 4}));

    // prune
    auto* prune = app.add_subcommand("prune", "One pruning round (no retraining)");
    PruneOptions pr_opt;
    SharedPruneFlags pr_flags;
    prune->add_option("--graph", pr_opt.graph)->required();
    prune->add_option("--weights", pr_opt.weights)->required();
    prune->add_option("--out-prefix", pr_opt.out_prefix)->required();
    pr_flags.attach(prune);

    // loop
    auto* loop = app.add_subcommand("loop", "Full iterative prune-retrain-evaluate loop");
    LoopOptions lp_opt;
    SharedPruneFlags lp_flags;
    loop->add_option("--graph", lp_opt.graph)->required();
    loop->add_option("--weights", lp_opt.weights)->required();
    loop->add_option("--train-data", lp_opt.train_data)->required();
    loop->add_option("--val-data", lp_opt.val_data)->required();
    loop->add_option("--out-prefix", lp_opt.out_prefix)->required();
    lp_flags.attach(loop);
    std::string lp_metric = "psnr";
    double lp_target_quality = 0.0, lp_target_ssim = 0.0;
    int64_t lp_max_steps = 1000;
    std::string lp_loss = "mse";
    double lp_lr = 0.05;
    int64_t lp_steps_per_round = 100;
    int lp_batch = 1;
    loop->add_option("--metric", lp_metric, "Gate metric: psnr, ssim or both")
        ->check(CLI::IsMember({"psnr", "ssim", "both"}));
    loop->add_option("--target-quality", lp_target_quality,
                     "Quality target Q for the selected metric (PSNR dB, or SSIM)");
    loop->add_option("--target-ssim", lp_target_ssim, "SSIM target when --metric both");
    loop->add_option("--max-steps", lp_max_steps, "Total training step budget G");
    loop->add_option("--loss", lp_loss, "Training loss: mse or l1")
        ->check(CLI::IsMember({"mse", "l1"}));
    loop->add_option("--lr", lp_lr, "Learning rate");
    loop->add_option("--steps-per-round", lp_steps_per_round, "Optimizer steps per retrain call");
    loop->add_option("--batch-size", lp_batch, "Mini-batch size");
    loop->add_option("--peak", lp_opt.peak, "Peak signal value for PSNR/SSIM");

    // infer
    auto* infer = app.add_subcommand("infer", "Single forward pass on an image or tensor");
    InferOptions in_opt;
    infer->add_option("--graph", in_opt.graph)->required();
    infer->add_option("--weights", in_opt.weights)->required();
    infer->add_option("--input", in_opt.input, "PGM/PPM image or PRTF tensor")->required();
    infer->add_option("--output", in_opt.output)->required();

    // eval
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM over a manifest of image pairs");
    EvalOptions ev_opt;
    eval->add_option("--graph", ev_opt.graph)->required();
    eval->add_option("--weights", ev_opt.weights)->required();
    eval->add_option("--pairs", ev_opt.pairs, "Text file: input<TAB>reference per line")
        ->required();
    eval->add_option("--peak", ev_opt.peak, "Peak signal value");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    SynthOptions sy_opt;
    synth->add_option("--kind", sy_opt.kind, "denoise or upscale")
        ->check(CLI::IsMember({"denoise", "upscale"}));
    synth->add_option("--seed", sy_opt.seed);
    synth->add_option("--count", sy_opt.count);
    synth->add_option("--size", sy_opt.size);
    synth->add_option("--channels", sy_opt.channels);
    synth->add_option("--noise-sigma", sy_opt.noise_sigma);
    synth->add_option("--out", sy_opt.out)->required();

    // init
    auto* init = app.add_subcommand("init", "Random fan-in-scaled weights for a graph");
    InitOptions it_opt;
    init->add_option("--graph", it_opt.graph)->required();
    init->add_option("--seed", it_opt.seed);
    init->add_option("--out", it_opt.out)->required();

    CLI11_PARSE(app, argc, argv);

    if (topo->parsed()) return cmd_topo(topo_opt, std::cout, std::cerr);
    if (analyze->parsed()) {
        if (!an_weights.empty()) an_opt.weights = an_weights;
        if (!an_csv.empty()) an_opt.csv_out = an_csv;
        if (!an_groups.empty()) an_opt.groups_out = an_groups;
        return cmd_analyze(an_opt, std::cout, std::cerr);
    }
    if (report->parsed()) {
        if (!rep_bw.empty()) rep_opt.before_weights = rep_bw;
        if (!rep_aw.empty()) rep_opt.after_weights = rep_aw;
        return cmd_report(rep_opt, std::cout, std::cerr);
    }
    if (prune->parsed()) {
        try {
            pr_opt.config = pr_flags.resolve(prune);
        } catch (const CLI::Error& e) {
            return app.exit(e);
        }
        return cmd_prune(pr_opt, std::cout, std::cerr);
    }
    if (loop->parsed()) {
        try {
            lp_opt.config = lp_flags.resolve(loop);
        } catch (const CLI::Error& e) {
            return app.exit(e);
        }
        const nlohmann::json cfg = lp_flags.config_json_or_empty();
        auto pick = [&](const char* flag, const char* key, auto cli_value, auto fallback) {
            if (loop->count(flag)) return cli_value;
            if (cfg.contains(key)) return cfg[key].get<decltype(fallback)>();
            return fallback;
        };
        const std::string metric = pick("--metric", "metric", lp_metric, std::string("psnr"));
        const double target = pick("--target-quality", "target_quality", lp_target_quality, 0.0);
        if (metric == "psnr" || metric == "both") lp_opt.config.target_psnr = target;
        if (metric == "ssim") lp_opt.config.target_ssim = target;
        if (metric == "both") {
            if (!loop->count("--target-ssim") && !cfg.contains("target_ssim")) {
                std::cerr << "error: --metric both requires --target-ssim\n";
                return 1;
            }
            lp_opt.config.target_ssim =
                pick("--target-ssim", "target_ssim", lp_target_ssim, 0.0);
        }
        if (loop->count("--max-steps"))
            lp_opt.config.max_steps = lp_max_steps;
        else if (cfg.contains("max_steps"))
            lp_opt.config.max_steps = cfg["max_steps"].get<int64_t>();
        else if (cfg.contains("total_steps"))  // accepted alias
            lp_opt.config.max_steps = cfg["total_steps"].get<int64_t>();
        else
            lp_opt.config.max_steps = 1000;
        const nlohmann::json train_cfg = cfg.contains("train") ? cfg["train"] : nlohmann::json{};
        auto pick_train = [&](const char* flag, const char* key, auto cli_value, auto fallback) {
            if (loop->count(flag)) return cli_value;
            if (train_cfg.contains(key)) return train_cfg[key].get<decltype(fallback)>();
            return fallback;
        };
        const std::string loss =
            pick_train("--loss", "loss", lp_loss, std::string("mse"));
        lp_opt.train.loss = loss == "l1" ? TrainSpec::Loss::L1 : TrainSpec::Loss::MSE;
        lp_opt.train.learning_rate = pick_train("--lr", "learning_rate", lp_lr, 0.05);
        lp_opt.train.steps_per_round =
            pick_train("--steps-per-round", "steps_per_round", lp_steps_per_round, int64_t{100});
        lp_opt.train.batch_size = pick_train("--batch-size", "batch_size", lp_batch, 1);
        lp_opt.train.seed = lp_opt.config.seed;
        lp_opt.peak = pick("--peak", "peak", lp_opt.peak, 255.0);
        return cmd_loop(lp_opt, std::cout, std::cerr);
    }
    if (infer->parsed()) return cmd_infer(in_opt, std::cout, std::cerr);
    if (eval->parsed()) return cmd_eval(ev_opt, std::cout, std::cerr);
    if (synth->parsed()) return cmd_synth(sy_opt, std::cout, std::cerr);
    if (init->parsed()) return cmd_init(it_opt, std::cout, std::cerr);
    return 1;
}
