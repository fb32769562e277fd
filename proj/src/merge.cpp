#include "cmm/merge.hpp"

#include "cmm/errors.hpp"
#include "cmm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace cmm {

MergeMethod merge_method_from_string(const std::string& name) {
    if (name == "average" || name == "avg") return MergeMethod::average;
    if (name == "regmean") return MergeMethod::regmean;
    if (name == "com") return MergeMethod::com;
    if (name == "com_weighted" || name == "com-weighted") return MergeMethod::com_weighted;
    throw Error("unknown merge method '" + name + "'");
}

std::string to_string(MergeMethod method) {
    switch (method) {
        case MergeMethod::average: return "average";
        case MergeMethod::regmean: return "regmean";
        case MergeMethod::com: return "com";
        case MergeMethod::com_weighted: return "com_weighted";
    }
    throw Error("invalid merge method");
}

void MergeConfig::validate() const {
    if (max_samples_per_task < 2) {
        throw InvalidConfig("max_samples_per_task must be at least 2");
    }
    if (!(weight_floor_rel >= 0.0 && weight_floor_rel <= 1.0)) {
        throw InvalidConfig("weight_floor_rel must lie in [0, 1]");
    }
    if (!(lambda_rel >= 0.0) || !std::isfinite(lambda_rel)) {
        throw InvalidConfig("lambda_rel must be a finite non-negative value");
    }
    if (!(rank_eps >= 0.0) || !std::isfinite(rank_eps)) {
        throw InvalidConfig("rank_eps must be a finite non-negative value");
    }
}

TaskBundle::TaskBundle(SequentialModel model_in, DenseMatrix samples_in, std::string name_in)
    : model(std::move(model_in)), samples(std::move(samples_in)), task_name(std::move(name_in)) {
    if (samples.rows() != model.input_dim()) {
        throw InvalidShape("task '" + task_name + "': samples have " +
                           std::to_string(samples.rows()) + " rows, model expects " +
                           std::to_string(model.input_dim()));
    }
    if (samples.cols() < 2) {
        throw InsufficientSamples("task '" + task_name + "': need at least 2 samples");
    }
}

double objective_omega(const DenseMatrix& merged_weight,
                       const std::vector<DenseMatrix>& originals,
                       const std::vector<DenseMatrix>& inputs) {
    if (originals.empty() || originals.size() != inputs.size()) {
        throw InvalidShape("objective_omega: need matching non-empty weight/input lists");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        if (!originals[i].same_shape(merged_weight)) {
            throw InvalidShape("objective_omega: weight " + std::to_string(i) +
                               " does not match the merged shape");
        }
        const DenseMatrix residual = matmul(merged_weight - originals[i], inputs[i]);
        for (double v : residual.data()) {
            total += v * v;
        }
    }
    return total;
}

namespace {

/// (sum_i w_i W_i G_i) * pinv(sum_i w_i G_i) for precomputed statistics.
DenseMatrix solve_layer(const std::vector<GramStats>& stats,
                        const std::vector<double>& importance, const MergeConfig& cfg) {
    DenseMatrix gram_sum = importance[0] * stats[0].gram;
    DenseMatrix cross_sum = importance[0] * stats[0].cross;
    for (std::size_t i = 1; i < stats.size(); ++i) {
        gram_sum = gram_sum + importance[i] * stats[i].gram;
        cross_sum = cross_sum + importance[i] * stats[i].cross;
    }
    return matmul(cross_sum, pinv_tikhonov(gram_sum, cfg.lambda_rel, cfg.rank_eps));
}

std::vector<double> uniform_weights(std::size_t count) {
    return std::vector<double>(count, 1.0);
}

void validate_compatible(const std::vector<TaskBundle>& bundles) {
    if (bundles.empty()) {
        throw ArchitectureMismatch("merge needs at least one task bundle");
    }
    for (std::size_t i = 1; i < bundles.size(); ++i) {
        if (!bundles[i].model.same_architecture(bundles[0].model)) {
            throw ArchitectureMismatch("task '" + bundles[i].task_name +
                                       "' does not match the architecture of task '" +
                                       bundles[0].task_name + "'");
        }
    }
}

DenseMatrix capped_samples(const TaskBundle& bundle, std::size_t cap) {
    return bundle.samples.cols() > cap ? bundle.samples.first_cols(cap) : bundle.samples;
}

std::vector<DenseMatrix> layer_weights(const std::vector<TaskBundle>& bundles, std::size_t l) {
    std::vector<DenseMatrix> out;
    out.reserve(bundles.size());
    for (const TaskBundle& bundle : bundles) {
        out.push_back(bundle.model.layer(l).weight);
    }
    return out;
}

} // namespace

DenseMatrix regmean_layer(const std::vector<DenseMatrix>& originals,
                          const std::vector<DenseMatrix>& inputs,
                          const SensitivityWeights& importance, const MergeConfig& cfg) {
    cfg.validate();
    if (originals.empty() || originals.size() != inputs.size()) {
        throw InvalidShape("regmean_layer: need matching non-empty weight/input lists");
    }
    if (importance.per_task.size() != originals.size()) {
        throw InvalidShape("regmean_layer: importance length does not match task count");
    }
    const std::size_t d = inputs[0].rows();
    for (std::size_t i = 0; i < originals.size(); ++i) {
        if (inputs[i].rows() != d) {
            throw InvalidShape("regmean_layer: task " + std::to_string(i) + " inputs have " +
                               std::to_string(inputs[i].rows()) + " rows, expected " +
                               std::to_string(d));
        }
        if (!originals[i].same_shape(originals[0])) {
            throw InvalidShape("regmean_layer: weight shapes differ across tasks");
        }
    }

    std::vector<GramStats> stats;
    stats.reserve(originals.size());
    for (std::size_t i = 0; i < originals.size(); ++i) {
        stats.push_back(GramStats::compute(originals[i], inputs[i], cfg.normalize));
    }
    return solve_layer(stats, importance.per_task, cfg);
}

SensitivityWeights sensitivity_weights(const std::vector<DenseMatrix>& grams,
                                       double floor_rel) {
    SensitivityWeights weights;
    weights.per_task.reserve(grams.size());
    for (const DenseMatrix& g : grams) {
        if (!g.same_shape(grams.front())) {
            throw InvalidShape("sensitivity_weights: Gram sizes differ across tasks");
        }
        weights.per_task.push_back(offdiag_norm(g));
    }

    const double top = *std::max_element(weights.per_task.begin(), weights.per_task.end());
    if (top == 0.0) {
        std::fill(weights.per_task.begin(), weights.per_task.end(), 1.0);
        return weights;
    }
    for (double& w : weights.per_task) {
        w = std::max(w, floor_rel * top);
    }
    return weights;
}

MergeOutcome merge_average(const std::vector<TaskBundle>& bundles) {
    validate_compatible(bundles);
    const SequentialModel& arch = bundles[0].model;
    const std::size_t num_tasks = bundles.size();
    const std::size_t num_layers = arch.layer_count();

    std::vector<LinearLayer> merged_layers = arch.layers_copy();
    const double inv_n = 1.0 / static_cast<double>(num_tasks);
    for (std::size_t l = 0; l < num_layers; ++l) {
        DenseMatrix sum = bundles[0].model.layer(l).weight;
        for (std::size_t i = 1; i < num_tasks; ++i) {
            sum = sum + bundles[i].model.layer(l).weight;
        }
        merged_layers[l].weight = inv_n * sum;
    }

    MergeOutcome outcome{SequentialModel(arch.input_dim(), std::move(merged_layers)), {}, {}, {}};

    // Residual diagnostics against each task's own pre-merge activations.
    std::vector<ActivationTrace> traces(num_tasks);
    detail::parallel_for(num_tasks, [&](std::size_t i) {
        traces[i] = forward_capture(bundles[i].model, bundles[i].samples);
    });
    for (std::size_t l = 0; l < num_layers; ++l) {
        const bool has_bias = arch.layer(l).has_bias;
        std::vector<DenseMatrix> consumed;
        consumed.reserve(num_tasks);
        std::vector<std::size_t> counts;
        for (std::size_t i = 0; i < num_tasks; ++i) {
            const DenseMatrix& x = traces[i].per_layer_inputs[l];
            consumed.push_back(has_bias ? x.with_ones_row() : x);
            counts.push_back(x.cols());
        }
        outcome.per_layer_omega.push_back(
            objective_omega(outcome.merged.layer(l).weight, layer_weights(bundles, l), consumed));
        outcome.stats_provenance.push_back(std::move(counts));
    }
    return outcome;
}

MergeOutcome merge_simultaneous(const std::vector<TaskBundle>& bundles, const MergeConfig& cfg) {
    cfg.validate();
    validate_compatible(bundles);
    const SequentialModel& arch = bundles[0].model;
    const std::size_t num_tasks = bundles.size();
    const std::size_t num_layers = arch.layer_count();

    // Every layer's statistics come from the unmerged models.
    std::vector<ActivationTrace> traces(num_tasks);
    detail::parallel_for(num_tasks, [&](std::size_t i) {
        traces[i] = forward_capture(bundles[i].model, capped_samples(bundles[i], cfg.max_samples_per_task));
    });

    std::vector<LinearLayer> merged_layers = arch.layers_copy();
    std::vector<double> per_layer_omega(num_layers, 0.0);
    std::vector<std::vector<std::size_t>> provenance(num_layers);

    for (std::size_t l = 0; l < num_layers; ++l) {
        const bool has_bias = arch.layer(l).has_bias;
        std::vector<DenseMatrix> consumed(num_tasks);
        std::vector<GramStats> stats(num_tasks);
        detail::parallel_for(num_tasks, [&](std::size_t i) {
            const DenseMatrix& x = traces[i].per_layer_inputs[l];
            consumed[i] = has_bias ? x.with_ones_row() : x;
            stats[i] = GramStats::compute(bundles[i].model.layer(l).weight, consumed[i],
                                          cfg.normalize);
        });
        merged_layers[l].weight = solve_layer(stats, uniform_weights(num_tasks), cfg);
        per_layer_omega[l] =
            objective_omega(merged_layers[l].weight, layer_weights(bundles, l), consumed);
        provenance[l].reserve(num_tasks);
        for (const GramStats& s : stats) {
            provenance[l].push_back(s.sample_count);
        }
    }

    MergeOutcome outcome{SequentialModel(arch.input_dim(), std::move(merged_layers)),
                         std::move(per_layer_omega),
                         {},
                         std::move(provenance)};
    return outcome;
}

MergeOutcome merge_com(const std::vector<TaskBundle>& bundles, const MergeConfig& cfg,
                       MergeTrace* trace) {
    cfg.validate();
    validate_compatible(bundles);
    const SequentialModel& arch = bundles[0].model;
    const std::size_t num_tasks = bundles.size();
    const std::size_t num_layers = arch.layer_count();
    const bool weighted = cfg.method == MergeMethod::com_weighted;

    // current[i] holds task i's input to the layer being solved, produced by
    // the already-merged prefix. Layer 1 sees the raw samples.
    std::vector<DenseMatrix> current(num_tasks);
    detail::parallel_for(num_tasks, [&](std::size_t i) {
        current[i] = capped_samples(bundles[i], cfg.max_samples_per_task);
    });

    std::vector<LinearLayer> merged_layers = arch.layers_copy();
    std::vector<double> per_layer_omega(num_layers, 0.0);
    std::vector<SensitivityWeights> per_layer_weights;
    std::vector<std::vector<std::size_t>> provenance(num_layers);
    if (trace) {
        trace->consumed_inputs.clear();
        trace->consumed_inputs.reserve(num_layers);
    }

    for (std::size_t l = 0; l < num_layers; ++l) {
        const LinearLayer& proto = arch.layer(l);
        std::vector<DenseMatrix> consumed(num_tasks);
        std::vector<GramStats> stats(num_tasks);
        detail::parallel_for(num_tasks, [&](std::size_t i) {
            consumed[i] = proto.has_bias ? current[i].with_ones_row() : current[i];
            stats[i] = GramStats::compute(bundles[i].model.layer(l).weight, consumed[i],
                                          cfg.normalize);
        });

        std::vector<double> importance = uniform_weights(num_tasks);
        if (weighted) {
            std::vector<DenseMatrix> grams;
            grams.reserve(num_tasks);
            for (const GramStats& s : stats) {
                grams.push_back(s.gram);
            }
            SensitivityWeights w = sensitivity_weights(grams, cfg.weight_floor_rel);
            importance = w.per_task;
            per_layer_weights.push_back(std::move(w));
        }

        merged_layers[l].weight = solve_layer(stats, importance, cfg);
        per_layer_omega[l] =
            objective_omega(merged_layers[l].weight, layer_weights(bundles, l), consumed);
        provenance[l].reserve(num_tasks);
        for (const GramStats& s : stats) {
            provenance[l].push_back(s.sample_count);
        }
        if (trace) {
            trace->consumed_inputs.push_back(current);
        }

        // Advance every task through the freshly merged layer.
        if (l + 1 < num_layers) {
            detail::parallel_for(num_tasks, [&](std::size_t i) {
                current[i] = apply_activation(proto.activation,
                                              matmul(merged_layers[l].weight, consumed[i]));
            });
        }
    }

    MergeOutcome outcome{SequentialModel(arch.input_dim(), std::move(merged_layers)),
                         std::move(per_layer_omega),
                         std::move(per_layer_weights),
                         std::move(provenance)};
    return outcome;
}

MergeOutcome merge(const std::vector<TaskBundle>& bundles, const MergeConfig& cfg) {
    switch (cfg.method) {
        case MergeMethod::average: return merge_average(bundles);
        case MergeMethod::regmean: return merge_simultaneous(bundles, cfg);
        case MergeMethod::com:
        case MergeMethod::com_weighted: return merge_com(bundles, cfg);
    }
    throw Error("invalid merge method");
}

} // namespace cmm
