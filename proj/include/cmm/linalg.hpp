#pragma once

#include "cmm/matrix.hpp"

#include <cstddef>
#include <vector>

namespace cmm {

inline constexpr double kDefaultLambdaRel = 1e-4;
inline constexpr double kDefaultRankEps = 1e-10;

/// Eigendecomposition of a symmetric matrix: A = V diag(values) V^T with the
/// eigenvectors stored as columns of `vectors`. Values are not sorted.
struct SymmetricEigen {
    std::vector<double> values;
    DenseMatrix vectors;

    double min_value() const;
    double max_value() const;
};

/// Cyclic Jacobi iteration. Deterministic; converges when the off-diagonal
/// Frobenius norm drops below 1e-12 * ||A||_F, capped at 100 sweeps.
SymmetricEigen eigen_symmetric(const DenseMatrix& a);

/// Gram matrix X~ X~^T of the d x n activation matrix X. With `normalize`
/// set, every column (sample) is first scaled to unit L2 norm; zero columns
/// pass through unchanged. The result is symmetric by construction.
DenseMatrix gram(const DenseMatrix& x, bool normalize);

/// Regularized pseudoinverse of a symmetric PSD matrix. Eigenvalues are
/// shifted by lambda_eff = lambda_rel * trace(G) / d before inversion;
/// shifted eigenvalues at or below rank_eps * lambda_max are treated as rank
/// deficiency and zeroed (Moore-Penrose behaviour).
DenseMatrix pinv_tikhonov(const DenseMatrix& g, double lambda_rel,
                          double rank_eps = kDefaultRankEps);

/// Symmetric PSD square root: returns S with S*S = A. Eigenvalues within
/// -1e-9 * lambda_max of zero are clipped to zero; anything lower throws
/// NotPSD.
DenseMatrix sqrtm_psd(const DenseMatrix& a);

/// lambda_max / lambda_min of a symmetric PSD matrix; +infinity when the
/// smallest eigenvalue is at or below rank_eps * lambda_max (the matrix is
/// numerically rank-deficient).
double condition_number(const DenseMatrix& g, double rank_eps = kDefaultRankEps);

/// Sum of absolute values over the strictly upper triangle (p < q).
double offdiag_norm(const DenseMatrix& g);

/// Per-layer, per-task input statistics consumed by the merge solver: the
/// Gram matrix of the (possibly normalized) layer inputs and the weight
/// cross-term W * G.
struct GramStats {
    DenseMatrix gram;          // d x d
    DenseMatrix cross;         // out x d, equals W * gram
    std::size_t sample_count = 0;
    bool normalized = false;

    /// Builds the statistics from a layer weight (out x d) and its input
    /// activations (d x n, n >= 2), then validates symmetry and positive
    /// semidefiniteness of the Gram.
    static GramStats compute(const DenseMatrix& weight, const DenseMatrix& inputs,
                             bool normalize);
};

} // namespace cmm
