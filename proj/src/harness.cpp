#include "cmm/harness.hpp"

#include "cmm/errors.hpp"
#include "cmm/parallel.hpp"
#include "cmm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

namespace cmm {

void TrainHyper::validate() const {
    // learning_rate 0 is allowed as a degenerate no-op (useful for tests).
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw InvalidConfig("learning_rate must be finite and non-negative");
    }
    if (epochs < 1) {
        throw InvalidConfig("epochs must be at least 1");
    }
    if (batch_size < 1) {
        throw InvalidConfig("batch_size must be at least 1");
    }
}

namespace {

DenseMatrix gather_columns(const DenseMatrix& m, const std::vector<std::size_t>& indices,
                           std::size_t begin, std::size_t end) {
    DenseMatrix out(m.rows(), end - begin);
    for (std::size_t j = begin; j < end; ++j) {
        const std::size_t src = indices[j];
        for (std::size_t r = 0; r < m.rows(); ++r) {
            out(r, j - begin) = m(r, src);
        }
    }
    return out;
}

/// Stable per-column softmax cross-entropy on raw logits.
double logits_loss(const DenseMatrix& logits, const std::vector<std::size_t>& labels) {
    const std::size_t classes = logits.rows();
    const std::size_t n = logits.cols();
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double peak = logits(0, j);
        for (std::size_t c = 1; c < classes; ++c) {
            peak = std::max(peak, logits(c, j));
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            sum += std::exp(logits(c, j) - peak);
        }
        total += peak + std::log(sum) - logits(labels[j], j);
    }
    return total / static_cast<double>(n);
}

double logits_accuracy(const DenseMatrix& logits, const std::vector<std::size_t>& labels) {
    const std::size_t classes = logits.rows();
    const std::size_t n = logits.cols();
    std::size_t hits = 0;
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (logits(c, j) > logits(best, j)) {  // ties keep the lower index
                best = c;
            }
        }
        if (best == labels[j]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

BatchGradients layer_gradients(const std::vector<LinearLayer>& layers,
                               const DenseMatrix& inputs,
                               const std::vector<std::size_t>& labels) {
    const std::size_t depth = layers.size();
    const std::size_t batch = inputs.cols();

    // Forward pass, keeping augmented inputs and pre-activations per layer.
    std::vector<DenseMatrix> augmented(depth);
    std::vector<DenseMatrix> pre_activation(depth);
    DenseMatrix current = inputs;
    for (std::size_t l = 0; l < depth; ++l) {
        augmented[l] = layers[l].has_bias ? current.with_ones_row() : current;
        pre_activation[l] = matmul(layers[l].weight, augmented[l]);
        current = apply_activation(layers[l].activation, pre_activation[l]);
    }

    BatchGradients result;
    result.loss = logits_loss(current, labels);
    result.weight_grads.resize(depth);

    // d(loss)/d(logits) = (softmax - onehot) / batch.
    DenseMatrix grad = current;
    const std::size_t classes = current.rows();
    for (std::size_t j = 0; j < batch; ++j) {
        double peak = current(0, j);
        for (std::size_t c = 1; c < classes; ++c) {
            peak = std::max(peak, current(c, j));
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            sum += std::exp(current(c, j) - peak);
        }
        for (std::size_t c = 0; c < classes; ++c) {
            grad(c, j) = std::exp(current(c, j) - peak) / sum;
        }
        grad(labels[j], j) -= 1.0;
    }
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (double& v : grad.data()) {
        v *= inv_batch;
    }

    for (std::size_t l = depth; l-- > 0;) {
        // grad currently holds d(loss)/d(post-activation of layer l).
        const DenseMatrix deriv = activation_derivative(layers[l].activation, pre_activation[l]);
        DenseMatrix dz = grad;
        for (std::size_t i = 0; i < dz.size(); ++i) {
            dz.data()[i] *= deriv.data()[i];
        }
        result.weight_grads[l] = matmul(dz, augmented[l].transposed());
        if (l > 0) {
            const DenseMatrix upstream = matmul(layers[l].weight.transposed(), dz);
            DenseMatrix dx(layers[l].in_dim(), batch);
            for (std::size_t r = 0; r < dx.rows(); ++r) {
                for (std::size_t c = 0; c < batch; ++c) {
                    dx(r, c) = upstream(r, c);  // drops the bias row if present
                }
            }
            grad = std::move(dx);
        }
    }
    return result;
}

} // namespace

std::vector<SyntheticTask> gen_tasks(std::uint64_t master_seed, std::size_t num_tasks,
                                     std::size_t input_dim, std::size_t num_classes,
                                     std::size_t samples_per_split) {
    if (num_tasks < 1 || input_dim < 1 || num_classes < 1 || samples_per_split < 1) {
        throw InvalidConfig("gen_tasks: all counts must be at least 1");
    }

    std::vector<SyntheticTask> tasks;
    tasks.reserve(num_tasks);
    for (std::size_t t = 0; t < num_tasks; ++t) {
        const std::uint64_t task_seed = splitmix64_mix(master_seed + t);
        SplitMix64 rng(task_seed);

        DenseMatrix centers(num_classes, input_dim);
        for (double& v : centers.data()) {
            v = rng.next_uniform(-2.0, 2.0);
        }

        auto draw_split = [&](DenseMatrix& inputs, std::vector<std::size_t>& labels) {
            inputs = DenseMatrix(input_dim, samples_per_split);
            labels.resize(samples_per_split);
            for (std::size_t s = 0; s < samples_per_split; ++s) {
                const std::size_t cls = s % num_classes;
                labels[s] = cls;
                for (std::size_t r = 0; r < input_dim; ++r) {
                    inputs(r, s) = centers(cls, r) + 0.5 * rng.next_normal();
                }
            }
        };

        SyntheticTask task;
        task.name = "task" + std::to_string(t);
        task.num_classes = num_classes;
        task.seed = task_seed;
        draw_split(task.train_inputs, task.train_labels);
        draw_split(task.test_inputs, task.test_labels);
        tasks.push_back(std::move(task));
    }
    return tasks;
}

SequentialModel make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t out_dim, ActivationKind hidden_activation, bool bias,
                         std::uint64_t seed) {
    SplitMix64 rng(splitmix64_mix(seed));

    std::vector<std::size_t> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out_dim);

    std::vector<LinearLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l];
        const std::size_t fan_out = dims[l + 1];
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));

        DenseMatrix weight(fan_out, fan_in + (bias ? 1 : 0));
        for (std::size_t r = 0; r < fan_out; ++r) {
            for (std::size_t c = 0; c < fan_in; ++c) {
                weight(r, c) = scale * rng.next_normal();
            }
            // bias column stays zero
        }

        LinearLayer layer;
        layer.name = "fc" + std::to_string(l + 1);
        layer.weight = std::move(weight);
        layer.has_bias = bias;
        layer.activation =
            l + 2 < dims.size() ? hidden_activation : ActivationKind::identity;
        layers.push_back(std::move(layer));
    }
    return SequentialModel(input_dim, std::move(layers));
}

BatchGradients softmax_ce_gradients(const SequentialModel& model, const DenseMatrix& inputs,
                                    const std::vector<std::size_t>& labels) {
    if (inputs.rows() != model.input_dim()) {
        throw InvalidShape("softmax_ce_gradients: input rows do not match the model");
    }
    if (labels.size() != inputs.cols()) {
        throw InvalidShape("softmax_ce_gradients: one label per sample required");
    }
    for (std::size_t label : labels) {
        if (label >= model.output_dim()) {
            throw InvalidShape("softmax_ce_gradients: label out of range");
        }
    }
    return layer_gradients(model.layers(), inputs, labels);
}

double softmax_ce_loss(const SequentialModel& model, const DenseMatrix& inputs,
                       const std::vector<std::size_t>& labels) {
    if (labels.size() != inputs.cols()) {
        throw InvalidShape("softmax_ce_loss: one label per sample required");
    }
    return logits_loss(forward_capture(model, inputs).final_output, labels);
}

SequentialModel train_model(const SequentialModel& init, const SyntheticTask& task,
                            const TrainHyper& hyper) {
    hyper.validate();
    if (task.train_inputs.rows() != init.input_dim()) {
        throw InvalidShape("train_model: task input dim " +
                           std::to_string(task.train_inputs.rows()) +
                           " does not match model input dim " +
                           std::to_string(init.input_dim()));
    }
    if (init.output_dim() != task.num_classes) {
        throw InvalidShape("train_model: model emits " + std::to_string(init.output_dim()) +
                           " logits for " + std::to_string(task.num_classes) + " classes");
    }
    if (hyper.learning_rate == 0.0) {
        return init;
    }

    std::vector<LinearLayer> layers = init.layers_copy();
    SplitMix64 rng(splitmix64_mix(hyper.seed));

    const std::size_t n = task.train_inputs.cols();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += hyper.batch_size) {
            const std::size_t end = std::min(start + hyper.batch_size, n);
            const DenseMatrix batch = gather_columns(task.train_inputs, order, start, end);
            std::vector<std::size_t> batch_labels(end - start);
            for (std::size_t j = start; j < end; ++j) {
                batch_labels[j - start] = task.train_labels[order[j]];
            }

            const BatchGradients grads = layer_gradients(layers, batch, batch_labels);
            for (std::size_t l = 0; l < layers.size(); ++l) {
                DenseMatrix& w = layers[l].weight;
                const DenseMatrix& g = grads.weight_grads[l];
                for (std::size_t i = 0; i < w.size(); ++i) {
                    w.data()[i] -= hyper.learning_rate * g.data()[i];
                }
            }
        }
    }
    return SequentialModel(init.input_dim(), std::move(layers));
}

EvalResult evaluate(const SequentialModel& model, const SyntheticTask& task) {
    if (model.output_dim() != task.num_classes) {
        throw InvalidShape("evaluate: model emits " + std::to_string(model.output_dim()) +
                           " logits for " + std::to_string(task.num_classes) + " classes");
    }
    for (std::size_t label : task.test_labels) {
        if (label >= task.num_classes) {
            throw InvalidShape("evaluate: label out of range");
        }
    }
    const DenseMatrix logits = forward_capture(model, task.test_inputs).final_output;
    EvalResult result;
    result.task_name = task.name;
    result.accuracy = logits_accuracy(logits, task.test_labels);
    result.loss = logits_loss(logits, task.test_labels);
    return result;
}

// ---------------------------------------------------------------------------
// Experiment pipeline
// ---------------------------------------------------------------------------

void ExperimentSpec::validate() const {
    if (num_tasks < 1) throw InvalidConfig("num_tasks must be at least 1");
    if (input_dim < 1) throw InvalidConfig("input_dim must be at least 1");
    if (num_classes < 2) throw InvalidConfig("num_classes must be at least 2");
    if (depth < 1) throw InvalidConfig("depth must be at least 1");
    if (depth > 1 && hidden_dim < 1) throw InvalidConfig("hidden_dim must be at least 1");
    if (samples_per_split < 2) throw InvalidConfig("samples_per_split must be at least 2");
    if (samples_for_merging < 2) throw InvalidConfig("samples_for_merging must be at least 2");
    if (methods.empty()) throw InvalidConfig("at least one merge method required");
    pretrain.validate();
    finetune.validate();
    merge_cfg.validate();
    for (std::size_t count : sweep_sample_counts) {
        if (count < 2) throw InvalidConfig("sweep sample counts must be at least 2");
    }
}

std::vector<TaskBundle> PreparedExperiment::bundles(std::size_t samples) const {
    std::vector<TaskBundle> out;
    out.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const std::size_t take = std::min(samples, tasks[i].train_inputs.cols());
        out.emplace_back(finetuned[i], tasks[i].train_inputs.first_cols(take), tasks[i].name);
    }
    return out;
}

PreparedExperiment prepare_experiment(const ExperimentSpec& spec) {
    spec.validate();

    PreparedExperiment prep;
    prep.tasks = gen_tasks(spec.seed, spec.num_tasks, spec.input_dim, spec.num_classes,
                           spec.samples_per_split);

    const std::vector<std::size_t> hidden(spec.depth - 1, spec.hidden_dim);
    const SequentialModel init = make_mlp(spec.input_dim, hidden, spec.num_classes,
                                          spec.hidden_activation, /*bias=*/true,
                                          splitmix64_mix(spec.seed + 0x11));

    // Shared base: pretrain on all tasks' training data pooled together.
    SyntheticTask pooled;
    pooled.name = "pooled";
    pooled.num_classes = spec.num_classes;
    pooled.seed = spec.seed;
    const std::size_t per_task = prep.tasks[0].train_inputs.cols();
    pooled.train_inputs = DenseMatrix(spec.input_dim, spec.num_tasks * per_task);
    pooled.train_labels.resize(spec.num_tasks * per_task);
    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        for (std::size_t s = 0; s < per_task; ++s) {
            for (std::size_t r = 0; r < spec.input_dim; ++r) {
                pooled.train_inputs(r, t * per_task + s) = prep.tasks[t].train_inputs(r, s);
            }
            pooled.train_labels[t * per_task + s] = prep.tasks[t].train_labels[s];
        }
    }
    pooled.test_inputs = prep.tasks[0].test_inputs;
    pooled.test_labels = prep.tasks[0].test_labels;

    TrainHyper pre = spec.pretrain;
    pre.seed = splitmix64_mix(spec.seed + 0x22);
    const SequentialModel base = train_model(init, pooled, pre);

    prep.finetuned.reserve(spec.num_tasks);
    prep.finetuned_eval.resize(spec.num_tasks);
    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        TrainHyper fine = spec.finetune;
        fine.seed = splitmix64_mix(spec.seed + 0x33 + t);
        prep.finetuned.push_back(train_model(base, prep.tasks[t], fine));
        prep.finetuned_eval[t] = evaluate(prep.finetuned.back(), prep.tasks[t]);
    }
    return prep;
}

namespace {

double average_normalized_score(const PreparedExperiment& prep, const SequentialModel& merged,
                                std::vector<EvalResult>* per_task,
                                std::vector<double>* normalized) {
    double sum = 0.0;
    for (std::size_t t = 0; t < prep.tasks.size(); ++t) {
        const EvalResult merged_eval = evaluate(merged, prep.tasks[t]);
        const double reference = prep.finetuned_eval[t].accuracy;
        if (reference <= 0.0) {
            throw Error("task '" + prep.tasks[t].name +
                        "': fine-tuned accuracy is zero, normalized score undefined");
        }
        const double score = merged_eval.accuracy / reference;
        sum += score;
        if (per_task) per_task->push_back(merged_eval);
        if (normalized) normalized->push_back(score);
    }
    return sum / static_cast<double>(prep.tasks.size());
}

} // namespace

ExperimentReport run_experiment(const ExperimentSpec& spec) {
    const PreparedExperiment prep = prepare_experiment(spec);

    ExperimentReport report;
    report.spec = spec;
    report.finetuned = prep.finetuned_eval;

    const std::vector<TaskBundle> bundles = prep.bundles(spec.samples_for_merging);
    for (MergeMethod method : spec.methods) {
        MergeConfig cfg = spec.merge_cfg;
        cfg.method = method;
        const MergeOutcome outcome = merge(bundles, cfg);

        MethodReport entry;
        entry.method = method;
        entry.per_layer_omega = outcome.per_layer_omega;
        entry.average_normalized_score = average_normalized_score(
            prep, outcome.merged, &entry.per_task, &entry.normalized_scores);
        entry.mcs = mcs_report(bundles, outcome.merged, to_string(method));
        report.methods.push_back(std::move(entry));
    }

    for (std::size_t count : spec.sweep_sample_counts) {
        MergeConfig cfg = spec.merge_cfg;
        cfg.method = MergeMethod::com;
        const MergeOutcome outcome = merge(prep.bundles(count), cfg);
        SweepPoint point;
        point.samples = count;
        point.average_normalized_score =
            average_normalized_score(prep, outcome.merged, nullptr, nullptr);
        report.sweep.push_back(point);
    }
    return report;
}

} // namespace cmm
