#pragma once

#include "cmm/linalg.hpp"
#include "cmm/model.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace cmm {

enum class MergeMethod { average, regmean, com, com_weighted };

/// Accepts "average"/"avg", "regmean", "com", "com_weighted"/"com-weighted".
MergeMethod merge_method_from_string(const std::string& name);
std::string to_string(MergeMethod method);

struct MergeConfig {
    MergeMethod method = MergeMethod::com;
    double lambda_rel = kDefaultLambdaRel;
    double rank_eps = kDefaultRankEps;
    bool normalize = true;
    std::size_t max_samples_per_task = 500;
    double weight_floor_rel = 1e-6;

    void validate() const;  // throws InvalidConfig
};

/// One task's contribution to a merge: its fine-tuned model plus the raw
/// input samples (input_dim x n, n >= 2) used to estimate activations.
struct TaskBundle {
    SequentialModel model;
    DenseMatrix samples;
    std::string task_name;

    TaskBundle(SequentialModel model, DenseMatrix samples, std::string task_name);
};

/// Per-task importance weights for one layer's solve.
struct SensitivityWeights {
    std::vector<double> per_task;
};

struct MergeOutcome {
    SequentialModel merged;
    /// Residual of each layer's solve, measured by objective_omega on the
    /// same activations the solve consumed.
    std::vector<double> per_layer_omega;
    /// Importance weights per layer; empty unless method == com_weighted.
    std::vector<SensitivityWeights> per_layer_weights;
    /// stats_provenance[layer][task] = number of samples used in that solve.
    std::vector<std::vector<std::size_t>> stats_provenance;
};

/// Debug capture for merge_com: consumed_inputs[layer][task] is the
/// activation matrix (before bias augmentation) the layer's solve consumed.
/// By construction it equals the final merged model's input to that layer.
struct MergeTrace {
    std::vector<std::vector<DenseMatrix>> consumed_inputs;
};

/// Sum over tasks of ||W_M X_i - W_i X_i||_F^2.
double objective_omega(const DenseMatrix& merged_weight,
                       const std::vector<DenseMatrix>& originals,
                       const std::vector<DenseMatrix>& inputs);

/// Closed-form weighted least-squares merge of one linear layer:
/// (sum_i w_i W_i G_i) * pinv(sum_i w_i G_i), with G_i the (optionally
/// cosine-normalized) Gram of inputs[i]. Inputs must already carry the bias
/// row when the layer folds one. Each task needs at least 2 samples.
DenseMatrix regmean_layer(const std::vector<DenseMatrix>& originals,
                          const std::vector<DenseMatrix>& inputs,
                          const SensitivityWeights& importance,
                          const MergeConfig& cfg);

/// Off-diagonal-norm importance per task, floored at floor_rel * max so no
/// task is silently dropped. All-zero norms fall back to uniform weights.
SensitivityWeights sensitivity_weights(const std::vector<DenseMatrix>& grams,
                                       double floor_rel);

/// Arithmetic mean of the task weights, layer by layer.
MergeOutcome merge_average(const std::vector<TaskBundle>& bundles);

/// Solves every layer independently from each task's own pre-merge
/// activations (all layers see statistics computed before any merging).
MergeOutcome merge_simultaneous(const std::vector<TaskBundle>& bundles,
                                const MergeConfig& cfg);

/// Chained merge: layer 1 is solved from the raw inputs; every later layer
/// is solved from activations produced by forwarding each task's samples
/// through the already-merged prefix. With method com_weighted the per-task
/// weights come from the off-diagonal norms of the layer's Grams.
MergeOutcome merge_com(const std::vector<TaskBundle>& bundles, const MergeConfig& cfg,
                       MergeTrace* trace = nullptr);

/// Dispatches on cfg.method.
MergeOutcome merge(const std::vector<TaskBundle>& bundles, const MergeConfig& cfg);

} // namespace cmm
