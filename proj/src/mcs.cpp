#include "cmm/mcs.hpp"

#include "cmm/errors.hpp"
#include "cmm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace cmm {

GaussianStats::GaussianStats(std::vector<double> mean_in, DenseMatrix cov_in,
                             std::size_t count_in)
    : mean(std::move(mean_in)), cov(std::move(cov_in)), sample_count(count_in) {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
        throw InvalidShape("GaussianStats: mean has " + std::to_string(mean.size()) +
                           " entries but covariance is " + std::to_string(cov.rows()) + "x" +
                           std::to_string(cov.cols()));
    }
    if (sample_count < 2) {
        throw InsufficientSamples("GaussianStats: need at least 2 samples");
    }
    const double sym_tol = 1e-9 * std::max(1.0, cov.max_abs());
    for (std::size_t r = 0; r < cov.rows(); ++r) {
        for (std::size_t c = r + 1; c < cov.cols(); ++c) {
            if (std::abs(cov(r, c) - cov(c, r)) > sym_tol) {
                throw NotSymmetric("GaussianStats: covariance is not symmetric");
            }
        }
    }
    const SymmetricEigen eig = eigen_symmetric(cov);
    if (eig.min_value() < -1e-9 * std::max(1.0, eig.max_value())) {
        throw NotPSD("GaussianStats: covariance eigenvalue " +
                     std::to_string(eig.min_value()) + " below PSD tolerance");
    }
}

GaussianStats gaussian_stats(const DenseMatrix& x) {
    const std::size_t d = x.rows();
    const std::size_t n = x.cols();
    if (n < 2) {
        throw InsufficientSamples("gaussian_stats: need at least 2 samples, got " +
                                  std::to_string(n));
    }
    if (d == 0) {
        throw InvalidShape("gaussian_stats: zero-dimensional input");
    }

    std::vector<double> mean(d, 0.0);
    for (std::size_t p = 0; p < d; ++p) {
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            sum += x(p, k);
        }
        mean[p] = sum / static_cast<double>(n);
    }

    DenseMatrix cov(d, d);
    const double denom = static_cast<double>(n - 1);
    for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t q = p; q < d; ++q) {
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                sum += (x(p, k) - mean[p]) * (x(q, k) - mean[q]);
            }
            cov(p, q) = sum / denom;
            cov(q, p) = cov(p, q);
        }
    }
    return GaussianStats(std::move(mean), std::move(cov), n);
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b, double* raw) {
    if (a.mean.size() != b.mean.size()) {
        throw InvalidShape("frechet_distance: dimension mismatch (" +
                           std::to_string(a.mean.size()) + " vs " +
                           std::to_string(b.mean.size()) + ")");
    }

    // Identical moments mean identical distributions; report an exact zero
    // instead of accumulating rounding through the matrix square roots.
    if (a.mean == b.mean && a.cov.data() == b.cov.data()) {
        if (raw) *raw = 0.0;
        return 0.0;
    }

    double mean_term = 0.0;
    for (std::size_t i = 0; i < a.mean.size(); ++i) {
        const double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }

    const DenseMatrix root_b = sqrtm_psd(b.cov);
    DenseMatrix inner = matmul(matmul(root_b, a.cov), root_b);
    // The sandwich is symmetric up to rounding; mirror before the root.
    for (std::size_t r = 0; r < inner.rows(); ++r) {
        for (std::size_t c = r + 1; c < inner.cols(); ++c) {
            const double v = 0.5 * (inner(r, c) + inner(c, r));
            inner(r, c) = v;
            inner(c, r) = v;
        }
    }
    const DenseMatrix cross_root = sqrtm_psd(inner);

    const double trace_term = a.cov.trace() + b.cov.trace() - 2.0 * cross_root.trace();
    const double value = mean_term + trace_term;
    if (raw) *raw = value;
    return std::max(value, 0.0);
}

MCSReport mcs_report(const std::vector<TaskBundle>& bundles, const SequentialModel& merged,
                     std::string method_label) {
    if (bundles.empty()) {
        throw ArchitectureMismatch("mcs_report needs at least one task bundle");
    }
    for (const TaskBundle& bundle : bundles) {
        if (!bundle.model.same_architecture(merged)) {
            throw ArchitectureMismatch("task '" + bundle.task_name +
                                       "' does not match the merged architecture");
        }
    }

    const std::size_t num_tasks = bundles.size();
    const std::size_t num_layers = merged.layer_count();

    // distances[i][l]: shift of task i's inputs to layer l under the merge.
    std::vector<std::vector<double>> distances(num_tasks,
                                               std::vector<double>(num_layers, 0.0));
    detail::parallel_for(num_tasks, [&](std::size_t i) {
        const ActivationTrace own = forward_capture(bundles[i].model, bundles[i].samples);
        const ActivationTrace post = forward_capture(merged, bundles[i].samples);
        for (std::size_t l = 0; l < num_layers; ++l) {
            distances[i][l] = frechet_distance(gaussian_stats(own.per_layer_inputs[l]),
                                               gaussian_stats(post.per_layer_inputs[l]));
        }
    });

    MCSReport report;
    report.method_label = std::move(method_label);
    report.per_layer.resize(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l) {
        LayerShift& shift = report.per_layer[l];
        shift.per_task.reserve(num_tasks);
        for (std::size_t i = 0; i < num_tasks; ++i) {
            shift.per_task.push_back(distances[i][l]);
            shift.total += distances[i][l];
        }
        report.grand_total += shift.total;
    }
    return report;
}

} // namespace cmm
