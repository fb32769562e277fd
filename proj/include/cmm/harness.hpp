#pragma once

#include "cmm/mcs.hpp"
#include "cmm/merge.hpp"
#include "cmm/model.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cmm {

/// Gaussian-blob classification problem. Deterministic given the seed.
struct SyntheticTask {
    std::string name;
    DenseMatrix train_inputs;   // input_dim x n
    std::vector<std::size_t> train_labels;
    DenseMatrix test_inputs;
    std::vector<std::size_t> test_labels;
    std::size_t num_classes = 0;
    std::uint64_t seed = 0;
};

struct TrainHyper {
    double learning_rate = 0.05;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const;  // throws InvalidConfig
};

struct EvalResult {
    std::string task_name;
    double accuracy = 0.0;  // argmax-match fraction, ties break to the lower class
    double loss = 0.0;      // mean softmax cross-entropy
};

/// Generates `num_tasks` blob tasks. Task t's stream is seeded by
/// splitmix64_mix(master_seed + t): class centers uniform in [-2, 2]^d,
/// points are center + 0.5 * standard normal noise, labels round-robin.
std::vector<SyntheticTask> gen_tasks(std::uint64_t master_seed, std::size_t num_tasks,
                                     std::size_t input_dim, std::size_t num_classes,
                                     std::size_t samples_per_split);

/// Random MLP factory: `hidden` hidden widths with `hidden_activation`,
/// identity output layer, weights ~ N(0, 1/fan_in), biases zero.
SequentialModel make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t out_dim, ActivationKind hidden_activation, bool bias,
                         std::uint64_t seed);

/// Loss and analytic weight gradients of the mean softmax cross-entropy on
/// one batch (labels indexed per column of inputs).
struct BatchGradients {
    std::vector<DenseMatrix> weight_grads;
    double loss = 0.0;
};
BatchGradients softmax_ce_gradients(const SequentialModel& model, const DenseMatrix& inputs,
                                    const std::vector<std::size_t>& labels);
double softmax_ce_loss(const SequentialModel& model, const DenseMatrix& inputs,
                       const std::vector<std::size_t>& labels);

/// Mini-batch SGD on softmax cross-entropy. Batch order is a deterministic
/// shuffle from hyper.seed. Returns a trained copy; `init` is untouched.
SequentialModel train_model(const SequentialModel& init, const SyntheticTask& task,
                            const TrainHyper& hyper);

/// Accuracy and loss on the task's test split.
EvalResult evaluate(const SequentialModel& model, const SyntheticTask& task);

// ---------------------------------------------------------------------------
// Experiment pipeline
// ---------------------------------------------------------------------------

struct ExperimentSpec {
    std::uint64_t seed = 42;
    std::size_t num_tasks = 4;
    std::size_t input_dim = 16;
    std::size_t num_classes = 8;
    std::size_t depth = 3;        // number of linear layers
    std::size_t hidden_dim = 32;
    std::size_t samples_per_split = 500;
    std::size_t samples_for_merging = 200;
    ActivationKind hidden_activation = ActivationKind::relu;
    TrainHyper pretrain{0.05, 4, 32, 0};
    TrainHyper finetune{0.1, 40, 32, 0};
    std::vector<MergeMethod> methods{MergeMethod::average, MergeMethod::regmean,
                                     MergeMethod::com, MergeMethod::com_weighted};
    MergeConfig merge_cfg{};                       // method is overridden per run
    std::vector<std::size_t> sweep_sample_counts;  // empty disables the sweep

    void validate() const;
};

/// Shared-base training state: tasks, the pretrained base, and the per-task
/// fine-tuned models with their own-task evaluations.
struct PreparedExperiment {
    std::vector<SyntheticTask> tasks;
    std::vector<SequentialModel> finetuned;
    std::vector<EvalResult> finetuned_eval;

    /// Task bundles holding the first `samples` training columns each.
    std::vector<TaskBundle> bundles(std::size_t samples) const;
};

/// Pretrains one base model on the pooled task data, then fine-tunes a copy
/// per task. Deterministic given spec.seed.
PreparedExperiment prepare_experiment(const ExperimentSpec& spec);

struct MethodReport {
    MergeMethod method = MergeMethod::average;
    std::vector<EvalResult> per_task;       // merged model on every task
    std::vector<double> normalized_scores;  // merged accuracy / fine-tuned accuracy
    double average_normalized_score = 0.0;
    std::vector<double> per_layer_omega;
    MCSReport mcs;
};

struct SweepPoint {
    std::size_t samples = 0;
    double average_normalized_score = 0.0;
};

struct ExperimentReport {
    ExperimentSpec spec;
    std::vector<EvalResult> finetuned;
    std::vector<MethodReport> methods;
    std::vector<SweepPoint> sweep;  // com merged at each sweep sample count
};

/// Full pipeline: prepare, merge with every requested method, evaluate,
/// attach MCS reports, and optionally sweep the merge sample count.
ExperimentReport run_experiment(const ExperimentSpec& spec);

} // namespace cmm
