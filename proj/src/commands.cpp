#include "prunekit/commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "prunekit/image_io.hpp"
#include "prunekit/quality.hpp"

namespace prunekit::commands {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

std::string hex64(uint64_t v) {
    std::ostringstream ss;
    ss << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Code::File, "cannot write " + path.string());
    out << text;
}

int guarded(std::ostream& err, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

double pct(uint64_t value, uint64_t reference) {
    return reference == 0 ? 0.0 : 100.0 * static_cast<double>(value) / reference;
}

ordered_json config_json(const PruneConfig& c) {
    ordered_json j;
    j["method"] = to_string(c.method);
    j["threshold_increment"] = c.threshold_increment;
    j["sparsity_increment"] = c.sparsity_increment;
    j["depth_floor"] = c.depth_floor;
    j["bytes_per_element"] = c.bytes_per_element;
    if (c.target_psnr) j["target_psnr"] = *c.target_psnr;
    if (c.target_ssim) j["target_ssim"] = *c.target_ssim;
    j["max_steps"] = c.max_steps;
    j["stop_on_saturation"] = c.stop_on_saturation;
    j["seed"] = c.seed;
    return j;
}

ordered_json train_json(const TrainSpec& t) {
    ordered_json j;
    j["loss"] = t.loss == TrainSpec::Loss::MSE ? "mse" : "l1";
    j["learning_rate"] = t.learning_rate;
    j["steps_per_round"] = t.steps_per_round;
    j["batch_size"] = t.batch_size;
    return j;
}

ordered_json input_entry(const std::filesystem::path& path) {
    ordered_json j;
    j["path"] = path.string();
    j["fnv1a"] = hex64(file_checksum(path));
    return j;
}

std::string manifest_json(const std::string& command, const PruneConfig& config,
                          const TrainSpec* train, const ordered_json& inputs,
                          const PruneReport& report) {
    ordered_json j;
    j["tool"] = "prunekit";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["seed"] = config.seed;
    j["config"] = config_json(config);
    if (train) j["config"]["train"] = train_json(*train);
    j["inputs"] = inputs;
    j["rounds"] = ordered_json::array();
    for (const RoundLog& r : report.rounds) {
        ordered_json jr;
        jr["round"] = r.round;
        jr["target_sparsity"] = r.target_sparsity;
        jr["status"] = r.prune_status;
        jr["threshold_base"] = r.threshold_base;
        jr["sparsity"] = r.sparsity;
        if (!r.retrains.empty()) {
            const RetrainLog& last = r.retrains.back();
            jr["steps"] = last.step;
            jr["psnr"] = number_or_inf(last.psnr);
            jr["ssim"] = last.ssim;
            jr["passed"] = last.passed;
        }
        j["rounds"].push_back(jr);
    }
    ordered_json res;
    res["sparsity"] = report.final_sparsity;
    res["psnr"] = number_or_inf(report.final_quality.psnr);
    res["ssim"] = report.final_quality.ssim;
    res["quality_passed"] = report.quality_passed;
    res["budget_exhausted"] = report.budget_exhausted;
    res["saturated"] = report.saturated;
    res["steps_used"] = report.steps_used;
    j["result"] = res;
    return j.dump(2) + "\n";
}

void write_prune_outputs(const std::filesystem::path& prefix, const NetworkGraph& graph,
                         const WeightStore& store, const PruneReport& report,
                         const std::string& manifest) {
    save_graph(graph, prefix.string() + ".graph.json");
    save_store(store, prefix.string() + ".weights.prwt");
    write_text(prefix.string() + ".report.json", report_to_json(report));
    write_text(prefix.string() + ".manifest.json", manifest);
}

}  // namespace

std::string report_to_json(const PruneReport& report) {
    ordered_json j;
    j["rounds"] = ordered_json::array();
    for (const RoundLog& r : report.rounds) {
        ordered_json jr;
        jr["round"] = r.round;
        jr["target_sparsity"] = r.target_sparsity;
        jr["status"] = r.prune_status;
        jr["threshold_base"] = r.threshold_base;
        jr["sparsity"] = r.sparsity;
        jr["layer_pruned_ratio"] = ordered_json::object();
        for (const auto& [node, ratio] : r.layer_pruned_ratio)
            jr["layer_pruned_ratio"][node] = ratio;
        jr["passes"] = ordered_json::array();
        for (const PassTrace& p : r.passes) {
            ordered_json jp;
            jp["threshold_base"] = p.threshold_base;
            jp["layer_thresholds"] = ordered_json::object();
            for (const auto& [node, t] : p.layer_thresholds) jp["layer_thresholds"][node] = t;
            jp["pruned"] = ordered_json::array();
            for (const ChannelRef& ref : p.pruned) jp["pruned"].push_back({ref.node, ref.channel});
            jp["sparsity_after"] = p.sparsity_after;
            jr["passes"].push_back(jp);
        }
        jr["retrains"] = ordered_json::array();
        for (const RetrainLog& t : r.retrains) {
            ordered_json jt;
            jt["step"] = t.step;
            jt["loss"] = t.loss;
            jt["psnr"] = number_or_inf(t.psnr);
            jt["ssim"] = t.ssim;
            jt["passed"] = t.passed;
            jr["retrains"].push_back(jt);
        }
        j["rounds"].push_back(jr);
    }
    j["layers"] = ordered_json::array();
    for (const LayerPruneSummary& l : report.layers) {
        ordered_json jl;
        jl["node"] = l.node;
        jl["original_channels"] = l.original_channels;
        jl["pruned_channels"] = l.pruned_channels;
        jl["pruned_ratio"] = l.pruned_ratio;
        jl["pruned_indices"] = l.pruned_indices;
        j["layers"].push_back(jl);
    }
    ordered_json fin;
    fin["sparsity"] = report.final_sparsity;
    fin["psnr"] = number_or_inf(report.final_quality.psnr);
    fin["ssim"] = report.final_quality.ssim;
    fin["quality_passed"] = report.quality_passed;
    fin["budget_exhausted"] = report.budget_exhausted;
    fin["saturated"] = report.saturated;
    fin["steps_used"] = report.steps_used;
    j["final"] = fin;
    return j.dump(2) + "\n";
}

std::string layer_cost_csv(const NetworkGraph& graph, int bytes_per_element) {
    const ShapeMap shapes = infer_shapes(graph);
    const NetworkCost cost = network_cost(graph, shapes);
    std::ostringstream csv;
    csv << "node,macs,weights,activations,bw_bytes,mac_per_weight,sparsity,pct_of_original\n";
    csv << std::setprecision(12);
    for (const LayerCost& l : cost.layers) {
        const uint64_t acts = l.acts_in + l.acts_out;
        const uint64_t bw = (l.weights + acts) * static_cast<uint64_t>(bytes_per_element);
        csv << l.node << "," << l.macs << "," << l.weights << "," << acts << "," << bw << ",";
        if (l.mac_per_weight)
            csv << *l.mac_per_weight;
        else
            csv << "";
        csv << ",0,100\n";
    }
    csv << "total," << cost.total_macs << "," << cost.total_weights << "," << cost.total_acts
        << "," << cost.bandwidth_bytes(bytes_per_element) << ",,0,100\n";
    return csv.str();
}

int cmd_topo(const TopoOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        NetworkGraph g;
        if (opt.name == "sid")
            g = build_sid_topology();
        else if (opt.name == "edsr")
            g = build_edsr_topology();
        else
            throw GraphError("unknown topology: " + opt.name + " (expected sid or edsr)");
        save_graph(g, opt.out);
        out << "wrote " << opt.out.string() << "\n";
    });
}

int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const NetworkGraph graph = load_graph(opt.graph);
        const auto violations = validate(graph);
        if (!violations.empty())
            throw GraphError(opt.graph.string() + ": [" + violations.front().rule + "] " +
                             (violations.front().node.empty() ? ""
                                                              : violations.front().node + ": ") +
                             violations.front().detail);
        if (opt.weights) {
            const WeightStore store = load_store(*opt.weights);
            const auto problems = check_store(graph, store);
            if (!problems.empty())
                throw GraphError(opt.weights->string() + ": " + problems.front());
        }
        const std::string csv = layer_cost_csv(graph, opt.bytes_per_element);
        if (opt.csv_out)
            write_text(*opt.csv_out, csv);
        else
            out << csv;
        const std::string groups = groups_to_json(build_groups(graph));
        if (opt.groups_out)
            write_text(*opt.groups_out, groups);
        else
            out << groups;
    });
}

int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const NetworkGraph before = load_graph(opt.before_graph);
        const NetworkGraph after = load_graph(opt.after_graph);
        if (opt.before_weights) {
            const auto problems = check_store(before, load_store(*opt.before_weights));
            if (!problems.empty()) throw GraphError("before weights: " + problems.front());
        }
        if (opt.after_weights) {
            const auto problems = check_store(after, load_store(*opt.after_weights));
            if (!problems.empty()) throw GraphError("after weights: " + problems.front());
        }

        // Same skeleton, only channel attrs may differ.
        if (before.nodes().size() != after.nodes().size())
            throw GraphError("topology mismatch: node counts differ");
        for (size_t i = 0; i < before.nodes().size(); ++i) {
            const Node& a = before.nodes()[i];
            const Node& b = after.nodes()[i];
            if (a.id != b.id || a.kind != b.kind || a.attrs.kernel != b.attrs.kernel ||
                a.attrs.stride != b.attrs.stride || a.attrs.padding != b.attrs.padding)
                throw GraphError("topology mismatch at node " + a.id +
                                 " (only channel counts may differ)");
        }

        const NetworkCost cb = network_cost(before, infer_shapes(before));
        const NetworkCost ca = network_cost(after, infer_shapes(after));
        std::ostringstream csv;
        csv << std::setprecision(12);
        csv << "metric,original,pruned,pct_of_original\n";
        auto row = [&](const std::string& name, uint64_t b, uint64_t a) {
            csv << name << "," << b << "," << a << "," << pct(a, b) << "\n";
        };
        row("macs", cb.total_macs, ca.total_macs);
        row("weights", cb.total_weights, ca.total_weights);
        row("activations", cb.total_acts, ca.total_acts);
        row("bw_bytes", cb.bandwidth_bytes(opt.bytes_per_element),
            ca.bandwidth_bytes(opt.bytes_per_element));
        row("bw_bytes_bpe1", cb.bandwidth_bytes(1), ca.bandwidth_bytes(1));
        csv << "layer,macs,weights,activations,bw_bytes,sparsity,pct_of_original\n";
        for (size_t i = 0; i < cb.layers.size(); ++i) {
            const LayerCost& b = cb.layers[i];
            const LayerCost& a = ca.layers[i];
            const uint64_t acts = a.acts_in + a.acts_out;
            const uint64_t bw =
                (a.weights + acts) * static_cast<uint64_t>(opt.bytes_per_element);
            const double sparsity =
                b.weights == 0 ? 0.0
                               : 1.0 - static_cast<double>(a.weights) / b.weights;
            csv << a.node << "," << a.macs << "," << a.weights << "," << acts << "," << bw
                << "," << sparsity << "," << pct(a.weights, b.weights) << "\n";
        }
        out << csv.str();
    });
}

int cmd_prune(const PruneOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        NetworkGraph graph = load_graph(opt.graph);
        WeightStore store = load_store(opt.weights);
        PruneState state = make_state(std::move(graph), std::move(store));

        PruneReport report;
        RoundLog log;
        log.round = 1;
        log.target_sparsity = opt.config.sparsity_increment;
        const PruneStatus status = prune_to_target(state, opt.config, &log.passes);
        log.prune_status = status == PruneStatus::Saturated ? "saturated" : "reached";
        log.threshold_base = state.threshold_base;
        log.sparsity = state.sparsity;
        log.layer_pruned_ratio = state.pruned_ratio;
        report.rounds.push_back(std::move(log));
        report.final_sparsity = state.sparsity;
        report.saturated = status == PruneStatus::Saturated;
        for (const Node& n : state.original.nodes()) {
            if (!is_conv_like(n.kind)) continue;
            LayerPruneSummary s;
            s.node = n.id;
            s.original_channels = n.attrs.out_channels;
            const auto& m = state.mask.at(n.id);
            for (size_t c = 0; c < m.size(); ++c)
                if (!m[c]) s.pruned_indices.push_back(static_cast<int>(c));
            s.pruned_channels = static_cast<int>(s.pruned_indices.size());
            s.pruned_ratio = s.original_channels == 0
                                 ? 0.0
                                 : static_cast<double>(s.pruned_channels) / s.original_channels;
            report.layers.push_back(std::move(s));
        }

        ordered_json inputs;
        inputs["graph"] = input_entry(opt.graph);
        inputs["weights"] = input_entry(opt.weights);
        write_prune_outputs(opt.out_prefix, state.current, state.store, report,
                            manifest_json("prune", opt.config, nullptr, inputs, report));
        out << "sparsity " << state.sparsity << " ("
            << (status == PruneStatus::Saturated ? "saturated" : "reached") << "), outputs at "
            << opt.out_prefix.string() << ".*\n";
    });
}

int cmd_loop(const LoopOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        NetworkGraph graph = load_graph(opt.graph);
        WeightStore store = load_store(opt.weights);
        const Dataset train_set = load_dataset(opt.train_data);
        const Dataset val_set = load_dataset(opt.val_data);

        int64_t invocation = 0;
        TrainSpec spec = opt.train;
        Trainer trainer = [&](const NetworkGraph& g, WeightStore& s,
                              int64_t budget) -> TrainStepResult {
            TrainSpec local = spec;
            local.seed = spec.seed + static_cast<uint64_t>(invocation++);
            const TrainResult r = train(g, s, train_set, local, budget);
            return {r.steps, r.final_loss};
        };
        Evaluator evaluator = [&](const NetworkGraph& g, const WeightStore& s) -> QualityValues {
            const QualityReport q = evaluate_dataset(g, s, val_set, opt.peak);
            return {q.mean_psnr, q.mean_ssim};
        };

        LoopResult result = run_loop(std::move(graph), std::move(store), opt.config, trainer,
                                     evaluator);

        ordered_json inputs;
        inputs["graph"] = input_entry(opt.graph);
        inputs["weights"] = input_entry(opt.weights);
        inputs["train_data"] = input_entry(opt.train_data);
        inputs["val_data"] = input_entry(opt.val_data);
        write_prune_outputs(opt.out_prefix, result.graph, result.store, result.report,
                            manifest_json("loop", opt.config, &opt.train, inputs,
                                          result.report));
        out << "final sparsity " << result.report.final_sparsity << ", psnr "
            << result.report.final_quality.psnr << ", ssim " << result.report.final_quality.ssim
            << ", steps " << result.report.steps_used << ", outputs at "
            << opt.out_prefix.string() << ".*\n";
    });
}

int cmd_infer(const InferOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const NetworkGraph graph = load_graph(opt.graph);
        const WeightStore store = load_store(opt.weights);
        const auto problems = check_store(graph, store);
        if (!problems.empty()) throw GraphError(problems.front());
        const TensorBuf input = load_image_any(opt.input);
        const TensorBuf output = forward(graph, store, input);
        save_image_any(output, opt.output);
        out << "wrote " << opt.output.string() << " (" << output.c << "," << output.h << ","
            << output.w << ")\n";
    });
}

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const NetworkGraph graph = load_graph(opt.graph);
        const WeightStore store = load_store(opt.weights);
        std::ifstream manifest(opt.pairs);
        if (!manifest)
            throw IoError(IoError::Code::File, "cannot open pairs manifest: " +
                                                   opt.pairs.string());
        Dataset pairs;
        std::string line;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw IoError(IoError::Code::File,
                              "manifest line missing tab separator: " + line);
            Sample s;
            s.input = load_image_any(line.substr(0, tab));
            s.target = load_image_any(line.substr(tab + 1));
            pairs.push_back(std::move(s));
        }
        if (pairs.empty()) throw IoError(IoError::Code::File, "pairs manifest is empty");
        const QualityReport q = evaluate_dataset(graph, store, pairs, opt.peak);
        ordered_json j;
        j["per_image"] = ordered_json::array();
        for (const ImageQuality& iq : q.per_image)
            j["per_image"].push_back(
                {{"psnr", number_or_inf(iq.psnr)}, {"ssim", iq.ssim}});
        j["mean_psnr"] = number_or_inf(q.mean_psnr);
        j["mean_ssim"] = q.mean_ssim;
        out << j.dump(2) << "\n";
    });
}

int cmd_synth(const SynthOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        SyntheticKind kind;
        if (opt.kind == "denoise")
            kind = SyntheticKind::Denoise;
        else if (opt.kind == "upscale")
            kind = SyntheticKind::Upscale;
        else
            throw EngineError("unknown dataset kind: " + opt.kind);
        const Dataset data = make_synthetic_dataset(kind, opt.seed, opt.count, opt.size,
                                                    opt.channels, opt.noise_sigma);
        save_dataset(data, opt.out);
        out << "wrote " << opt.out.string() << " (" << data.size() << " pairs)\n";
    });
}

int cmd_init(const InitOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const NetworkGraph graph = load_graph(opt.graph);
        const WeightStore store = init_weights(graph, opt.seed);
        save_store(store, opt.out);
        out << "wrote " << opt.out.string() << " (" << store.size() << " tensors, checksum "
            << hex64(store_checksum(store)) << ")\n";
    });
}

}  // namespace prunekit::commands
