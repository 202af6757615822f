#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "prunekit/engine.hpp"
#include "prunekit/pruner.hpp"

// Library-level command implementations behind the CLI: each returns a
// process exit code and reports failures as a single "error: ..." line.
namespace prunekit::commands {

inline constexpr const char* kToolVersion = "0.1.0";

struct TopoOptions {
    std::string name;  // "sid" | "edsr"
    std::filesystem::path out;
};
int cmd_topo(const TopoOptions& opt, std::ostream& out, std::ostream& err);

struct AnalyzeOptions {
    std::filesystem::path graph;
    std::optional<std::filesystem::path> weights;
    std::optional<std::filesystem::path> csv_out;     // default: stdout
    std::optional<std::filesystem::path> groups_out;  // default: stdout after CSV
    int bytes_per_element = 4;
};
int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out, std::ostream& err);

struct ReportOptions {
    std::filesystem::path before_graph;
    std::filesystem::path after_graph;
    std::optional<std::filesystem::path> before_weights;
    std::optional<std::filesystem::path> after_weights;
    int bytes_per_element = 4;
};
int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err);

struct PruneOptions {
    std::filesystem::path graph;
    std::filesystem::path weights;
    std::filesystem::path out_prefix;
    PruneConfig config;
};
int cmd_prune(const PruneOptions& opt, std::ostream& out, std::ostream& err);

struct LoopOptions {
    std::filesystem::path graph;
    std::filesystem::path weights;
    std::filesystem::path train_data;
    std::filesystem::path val_data;
    std::filesystem::path out_prefix;
    PruneConfig config;
    TrainSpec train;
    double peak = 255.0;
};
int cmd_loop(const LoopOptions& opt, std::ostream& out, std::ostream& err);

struct InferOptions {
    std::filesystem::path graph;
    std::filesystem::path weights;
    std::filesystem::path input;
    std::filesystem::path output;
};
int cmd_infer(const InferOptions& opt, std::ostream& out, std::ostream& err);

struct EvalOptions {
    std::filesystem::path graph;
    std::filesystem::path weights;
    std::filesystem::path pairs;  // lines: input<TAB>reference
    double peak = 255.0;
};
int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);

struct SynthOptions {
    std::string kind = "denoise";  // "denoise" | "upscale"
    uint64_t seed = 0;
    int count = 32;
    int size = 16;
    int channels = 1;
    double noise_sigma = 0.08;
    std::filesystem::path out;
};
int cmd_synth(const SynthOptions& opt, std::ostream& out, std::ostream& err);

struct InitOptions {
    std::filesystem::path graph;
    uint64_t seed = 0;
    std::filesystem::path out;
};
int cmd_init(const InitOptions& opt, std::ostream& out, std::ostream& err);

// Serialization shared by cmd_prune/cmd_loop and the acceptance suite.
std::string report_to_json(const PruneReport& report);
std::string layer_cost_csv(const NetworkGraph& graph, int bytes_per_element);

}  // namespace prunekit::commands
