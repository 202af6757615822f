#include "prunekit/pruner.hpp"

#include <algorithm>
#include <cmath>

#include "prunekit/engine.hpp"

namespace prunekit {

const char* to_string(PruneMethod method) {
    switch (method) {
        case PruneMethod::A: return "A";
        case PruneMethod::B: return "B";
        case PruneMethod::C: return "C";
        case PruneMethod::D: return "D";
    }
    return "?";
}

std::optional<PruneMethod> prune_method_from_string(std::string_view name) {
    if (name == "A" || name == "a") return PruneMethod::A;
    if (name == "B" || name == "b") return PruneMethod::B;
    if (name == "C" || name == "c") return PruneMethod::C;
    if (name == "D" || name == "d") return PruneMethod::D;
    return std::nullopt;
}

double layer_threshold(double threshold_base, double pruned_ratio, double mac_per_weight,
                       PruneMethod method) {
    switch (method) {
        case PruneMethod::A:
        case PruneMethod::B:
            return threshold_base;
        case PruneMethod::C:
            return threshold_base * mac_per_weight;
        case PruneMethod::D:
            return threshold_base * (1.0 - pruned_ratio) * mac_per_weight;
    }
    return threshold_base;
}

PruneState make_state(NetworkGraph graph, WeightStore store) {
    PruneState s;
    s.original_shapes = infer_shapes(graph);
    s.groups = build_groups(graph);
    s.mask = full_mask(graph);
    s.original = graph;
    s.current = std::move(graph);
    s.store = std::move(store);
    for (const Node& n : s.original.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        std::vector<int> ident(static_cast<size_t>(n.attrs.out_channels));
        for (size_t i = 0; i < ident.size(); ++i) ident[i] = static_cast<int>(i);
        s.current_to_original[n.id] = std::move(ident);
        s.pruned_ratio[n.id] = 0.0;
    }
    const auto problems = check_store(s.original, s.store);
    if (!problems.empty()) throw GraphError("store/graph mismatch: " + problems.front());
    return s;
}

namespace {

// Max-abs weight per ORIGINAL channel index, read from the current
// (possibly retrained, physically shrunk) store.
std::map<std::string, std::vector<double>> channel_stats(const PruneState& state) {
    std::map<std::string, std::vector<double>> stats;
    for (const Node& n : state.original.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        std::vector<double> per_channel(static_cast<size_t>(n.attrs.out_channels), 0.0);
        const auto current = max_abs_per_output_channel(state.store, n.id);
        const auto& to_orig = state.current_to_original.at(n.id);
        for (size_t cur = 0; cur < current.size(); ++cur)
            per_channel[static_cast<size_t>(to_orig[cur])] = current[cur];
        stats[n.id] = std::move(per_channel);
    }
    return stats;
}

struct PassContext {
    std::map<std::string, double> thresholds;       // T_l per conv-like layer
    std::map<std::string, std::vector<double>> stats;  // per original channel
};

PassContext pass_context(const PruneState& state, const PruneConfig& config,
                         double threshold_base) {
    PassContext ctx;
    ctx.stats = channel_stats(state);
    const SurvivorMap survivors = survivors_for_mask(state.original, state.mask);
    for (const Node& n : state.original.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        const Edge* in_edge = state.original.inputs_of(n.id)[0];
        const bool fed_by_input =
            state.original.at(in_edge->from).kind == NodeKind::Input;
        const LayerIo& io = survivors.at(n.id);
        const LayerCost cost =
            layer_cost(n, state.original_shapes.at(in_edge->from),
                       state.original_shapes.at(n.id), io.in_survivors, io.out_survivors,
                       fed_by_input);
        const double ratio =
            io.out_total == 0
                ? 0.0
                : static_cast<double>(io.out_total - io.out_survivors) / io.out_total;
        ctx.thresholds[n.id] = layer_threshold(
            threshold_base, ratio, cost.mac_per_weight.value_or(kMacPerWeightFloor),
            config.method);
    }
    return ctx;
}

bool group_pruned(const PruneState& state, const ChannelGroup& g) {
    // Masks never split groups, so one member decides.
    const ChannelRef& r = g.members.front();
    return !state.mask.at(r.node)[static_cast<size_t>(r.channel)];
}

// Magnitude test: every member below its own layer's threshold.
bool below_thresholds(const PassContext& ctx, const ChannelGroup& g) {
    for (const ChannelRef& r : g.members) {
        if (ctx.stats.at(r.node)[static_cast<size_t>(r.channel)] >=
            ctx.thresholds.at(r.node))
            return false;
    }
    return true;
}

void refresh_sparsity(PruneState& state) {
    state.sparsity = network_sparsity(state.original, state.mask);
    const SurvivorMap survivors = survivors_for_mask(state.original, state.mask);
    for (const auto& [node, io] : survivors)
        state.pruned_ratio[node] =
            io.out_total == 0
                ? 0.0
                : static_cast<double>(io.out_total - io.out_survivors) / io.out_total;
}

}  // namespace

int prune_pass(PruneState& state, const PruneConfig& config, double threshold_base,
               PassTrace* trace) {
    const PassContext ctx = pass_context(state, config, threshold_base);
    if (trace) {
        trace->threshold_base = threshold_base;
        trace->layer_thresholds = ctx.thresholds;
        trace->pruned.clear();
    }

    struct Candidate {
        double stat;
        int max_channel;
        int node_order;
        const ChannelGroup* group;
    };
    std::map<std::string, int> node_order;
    for (size_t i = 0; i < state.original.nodes().size(); ++i)
        node_order[state.original.nodes()[i].id] = static_cast<int>(i);

    std::vector<Candidate> candidates;
    for (const ChannelGroup& g : state.groups.groups) {
        if (!g.prunable || group_pruned(state, g)) continue;
        if (!below_thresholds(ctx, g)) continue;
        double stat = 0.0;
        int max_channel = 0;
        for (const ChannelRef& r : g.members) {
            stat = std::max(stat, ctx.stats.at(r.node)[static_cast<size_t>(r.channel)]);
            max_channel = std::max(max_channel, r.channel);
        }
        candidates.push_back(
            {stat, max_channel, node_order.at(g.members.front().node), &g});
    }
    // Smallest magnitude first; on ties prune the higher channel index so
    // floor-capped layers keep their lowest-index channels.
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.stat != b.stat) return a.stat < b.stat;
        if (a.max_channel != b.max_channel) return a.max_channel > b.max_channel;
        return a.node_order < b.node_order;
    });

    std::map<std::string, int64_t> remaining;
    for (const auto& [node, mask] : state.mask) remaining[node] = kept_count(mask);

    int pruned_groups = 0;
    for (const Candidate& cand : candidates) {
        if (config.method != PruneMethod::A) {
            std::map<std::string, int> demand;
            for (const ChannelRef& r : cand.group->members) ++demand[r.node];
            bool blocked = false;
            for (const auto& [node, count] : demand) {
                if (remaining.at(node) - count < config.depth_floor) {
                    blocked = true;
                    break;
                }
            }
            if (blocked) continue;
        }
        for (const ChannelRef& r : cand.group->members) {
            state.mask.at(r.node)[static_cast<size_t>(r.channel)] = false;
            --remaining.at(r.node);
            if (trace) trace->pruned.push_back(r);
        }
        ++pruned_groups;
    }
    if (trace) std::sort(trace->pruned.begin(), trace->pruned.end());

    refresh_sparsity(state);
    if (trace) trace->sparsity_after = state.sparsity;
    return pruned_groups;
}

namespace {

// After a pass that pruned nothing, the mask can still move only if some
// remaining group fails the magnitude test (a larger T_b flips it). If every
// unpruned prunable group already passes and is floor-blocked, no future
// T_b helps.
bool saturated(const PruneState& state, const PruneConfig& config, double threshold_base) {
    const PassContext ctx = pass_context(state, config, threshold_base);
    for (const ChannelGroup& g : state.groups.groups) {
        if (!g.prunable || group_pruned(state, g)) continue;
        if (!below_thresholds(ctx, g)) return false;
    }
    return true;
}

void apply_accumulated_mask(PruneState& state) {
    // Translate the original-index mask into current-graph indexing.
    ChannelMask current_mask;
    for (const auto& [node, to_orig] : state.current_to_original) {
        std::vector<bool> m(to_orig.size(), true);
        const auto& orig_mask = state.mask.at(node);
        for (size_t cur = 0; cur < to_orig.size(); ++cur)
            m[cur] = orig_mask[static_cast<size_t>(to_orig[cur])];
        current_mask[node] = std::move(m);
    }
    auto [graph, store] = apply_mask(state.current, state.store, current_mask);
    for (auto& [node, to_orig] : state.current_to_original) {
        std::vector<int> next;
        const auto& m = current_mask.at(node);
        for (size_t cur = 0; cur < to_orig.size(); ++cur)
            if (m[cur]) next.push_back(to_orig[cur]);
        to_orig = std::move(next);
    }
    state.current = std::move(graph);
    state.store = std::move(store);
}

}  // namespace

PruneStatus prune_to_target(PruneState& state, const PruneConfig& config,
                            std::vector<PassTrace>* traces) {
    if (config.threshold_increment <= 0.0)
        throw GraphError("threshold_increment must be positive");
    if (config.sparsity_increment <= 0.0 || config.sparsity_increment >= 1.0)
        throw GraphError("sparsity_increment must be in (0, 1)");
    if (config.method != PruneMethod::A && config.depth_floor < 1)
        throw GraphError("depth_floor must be >= 1 for methods B/C/D");

    const double target = config.sparsity_increment + state.sparsity;
    double t_base = config.threshold_increment;  // base starts at one increment
    PruneStatus status = PruneStatus::ReachedTarget;
    while (true) {
        PassTrace trace;
        const int pruned = prune_pass(state, config, t_base, traces ? &trace : nullptr);
        if (traces) traces->push_back(std::move(trace));
        state.threshold_base = t_base;
        t_base += config.threshold_increment;
        if (state.sparsity > target) break;
        if (pruned == 0 && saturated(state, config, state.threshold_base)) {
            status = PruneStatus::Saturated;
            break;
        }
    }
    apply_accumulated_mask(state);
    return status;
}

std::pair<NetworkGraph, WeightStore> apply_mask(const NetworkGraph& graph,
                                                const WeightStore& store,
                                                const ChannelMask& mask) {
    const RemovalPlan plan = propagate_removal(graph, mask);  // validates the mask

    NetworkGraph out;
    out.input_height = graph.input_height;
    out.input_width = graph.input_width;
    for (const Node& n : graph.nodes()) {
        NodeAttrs attrs = n.attrs;
        if (is_conv_like(n.kind)) {
            auto mit = mask.find(n.id);
            const int64_t kept =
                mit == mask.end() ? n.attrs.out_channels : kept_count(mit->second);
            attrs.out_channels = static_cast<int>(kept);
            attrs.in_channels =
                n.attrs.in_channels - static_cast<int>(plan.at(n.id).size());
        }
        out.add_node(n.id, n.kind, attrs);
    }
    for (const Edge& e : graph.edges()) out.add_edge(e.from, e.to, e.to_slot);

    WeightStore new_store;
    for (const Node& n : graph.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        const Tensor& kernel = store.at(kernel_name(n.id));
        const int64_t o = kernel.dims[0], i = kernel.dims[1], k = kernel.dims[2];
        auto mit = mask.find(n.id);
        std::vector<bool> keep_out(static_cast<size_t>(o), true);
        if (mit != mask.end()) keep_out = mit->second;
        std::vector<bool> keep_in(static_cast<size_t>(i), true);
        for (int idx : plan.at(n.id)) keep_in[static_cast<size_t>(idx)] = false;

        Tensor shrunk;
        const int64_t o_s = std::count(keep_out.begin(), keep_out.end(), true);
        const int64_t i_s = std::count(keep_in.begin(), keep_in.end(), true);
        shrunk.dims = {static_cast<uint32_t>(o_s), static_cast<uint32_t>(i_s),
                       static_cast<uint32_t>(k), static_cast<uint32_t>(k)};
        shrunk.data.reserve(static_cast<size_t>(o_s * i_s * k * k));
        for (int64_t oc = 0; oc < o; ++oc) {
            if (!keep_out[static_cast<size_t>(oc)]) continue;
            for (int64_t ic = 0; ic < i; ++ic) {
                if (!keep_in[static_cast<size_t>(ic)]) continue;
                const float* slice = kernel.data.data() + ((oc * i + ic) * k) * k;
                shrunk.data.insert(shrunk.data.end(), slice, slice + k * k);
            }
        }
        new_store.put(kernel_name(n.id), std::move(shrunk));
        if (n.attrs.has_bias) {
            const Tensor& bias = store.at(bias_name(n.id));
            Tensor shrunk_bias;
            shrunk_bias.dims = {static_cast<uint32_t>(o_s)};
            for (int64_t oc = 0; oc < o; ++oc)
                if (keep_out[static_cast<size_t>(oc)])
                    shrunk_bias.data.push_back(bias.data[static_cast<size_t>(oc)]);
            new_store.put(bias_name(n.id), std::move(shrunk_bias));
        }
    }

    const auto violations = validate(out);
    if (!violations.empty())
        throw GraphError("pruned graph is invalid: [" + violations.front().rule + "] " +
                         violations.front().detail);
    return {std::move(out), std::move(new_store)};
}

LoopResult run_loop(NetworkGraph graph, WeightStore store, const PruneConfig& config,
                    const Trainer& trainer, const Evaluator& evaluator) {
    if (!config.target_psnr && !config.target_ssim)
        throw GraphError("quality gate needs at least one target metric");
    if (config.max_steps < 0) throw GraphError("max_steps must be >= 0");

    auto passes_gate = [&](const QualityValues& q) {
        if (config.target_psnr && !(q.psnr > *config.target_psnr)) return false;
        if (config.target_ssim && !(q.ssim > *config.target_ssim)) return false;
        return true;
    };

    PruneState state = make_state(std::move(graph), std::move(store));
    LoopResult best;
    best.graph = state.original;
    best.store = state.store;
    best.mask = state.mask;
    bool have_passing_snapshot = false;
    double best_sparsity = 0.0;
    QualityValues best_quality;

    PruneReport report;
    for (int round = 1;; ++round) {
        RoundLog log;
        log.round = round;
        log.target_sparsity = config.sparsity_increment + state.sparsity;
        const PruneStatus status = prune_to_target(state, config, &log.passes);
        log.prune_status = status == PruneStatus::Saturated ? "saturated" : "reached";
        log.threshold_base = state.threshold_base;
        log.sparsity = state.sparsity;
        log.layer_pruned_ratio = state.pruned_ratio;

        // Retrain until the gate passes or the budget runs out.
        QualityValues quality;
        bool passed = false;
        while (true) {
            const int64_t budget = config.max_steps - state.step;
            const TrainStepResult tr = trainer(state.current, state.store, budget);
            if (!std::isfinite(tr.loss) && tr.steps > 0)
                throw EngineError("trainer reported non-finite loss");
            state.step += tr.steps;
            quality = evaluator(state.current, state.store);
            passed = passes_gate(quality);
            log.retrains.push_back(
                {state.step, tr.loss, quality.psnr, quality.ssim, passed});
            if (passed || state.step >= config.max_steps) break;
            if (tr.steps == 0)
                throw EngineError("trainer made no progress with budget remaining");
        }
        report.rounds.push_back(std::move(log));

        if (passed) {
            best.graph = state.current;
            best.store = state.store;
            best.mask = state.mask;
            best_quality = quality;
            best_sparsity = state.sparsity;
            have_passing_snapshot = true;
        }
        if (state.step >= config.max_steps) {  // budget exhausted: stop for good
            report.budget_exhausted = true;
            report.saturated = status == PruneStatus::Saturated;
            break;
        }
        if (status == PruneStatus::Saturated && config.stop_on_saturation && passed) {
            report.saturated = true;
            break;
        }
        // budget remains: start the next pruning round
    }

    if (!have_passing_snapshot) {
        // Nothing recovered quality; fall back to the unpruned baseline.
        best_quality = evaluator(best.graph, best.store);
        best_sparsity = 0.0;
    }
    report.final_quality = best_quality;
    report.final_sparsity = best_sparsity;
    report.quality_passed = have_passing_snapshot;
    report.steps_used = state.step;

    for (const Node& n : state.original.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        LayerPruneSummary s;
        s.node = n.id;
        s.original_channels = n.attrs.out_channels;
        const auto& m = best.mask.at(n.id);
        for (size_t c = 0; c < m.size(); ++c)
            if (!m[c]) s.pruned_indices.push_back(static_cast<int>(c));
        s.pruned_channels = static_cast<int>(s.pruned_indices.size());
        s.pruned_ratio = s.original_channels == 0
                             ? 0.0
                             : static_cast<double>(s.pruned_channels) / s.original_channels;
        report.layers.push_back(std::move(s));
    }

    best.report = std::move(report);
    return best;
}

}  // namespace prunekit
