#pragma once

#include "cmm/merge.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace cmm {

/// Empirical Gaussian fit of a d x n activation matrix (samples as columns).
struct GaussianStats {
    std::vector<double> mean;
    DenseMatrix cov;
    std::size_t sample_count = 0;

    GaussianStats() = default;
    /// Validates symmetry/PSD of the covariance and sample_count >= 2.
    GaussianStats(std::vector<double> mean, DenseMatrix cov, std::size_t sample_count);
};

/// Row means plus unbiased (n-1) covariance. Needs n >= 2.
GaussianStats gaussian_stats(const DenseMatrix& x);

/// Squared 2-Wasserstein (Frechet) distance between two Gaussians:
/// ||mu_a - mu_b||^2 + Tr[S_a + S_b - 2 (S_b^{1/2} S_a S_b^{1/2})^{1/2}].
/// Bitwise-identical inputs short-circuit to exactly 0. The returned value is
/// clipped at 0; when `raw` is given it receives the unclipped value.
double frechet_distance(const GaussianStats& a, const GaussianStats& b,
                        double* raw = nullptr);

struct LayerShift {
    std::vector<double> per_task;
    double total = 0.0;
};

struct MCSReport {
    std::vector<LayerShift> per_layer;  // entry l describes the inputs to layer l+1
    double grand_total = 0.0;
    std::string method_label;
};

/// Distribution shift between each task's own activations and the merged
/// model's activations, per layer and per task. Layer 1 compares the raw
/// inputs against themselves and is therefore exactly zero.
MCSReport mcs_report(const std::vector<TaskBundle>& bundles, const SequentialModel& merged,
                     std::string method_label = {});

} // namespace cmm
