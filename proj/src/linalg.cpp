#include "cmm/linalg.hpp"

#include "cmm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cmm {

namespace {

void require_square(const DenseMatrix& m, const char* op) {
    if (m.rows() != m.cols()) {
        throw InvalidShape(std::string(op) + ": matrix is " + std::to_string(m.rows()) +
                           "x" + std::to_string(m.cols()) + ", expected square");
    }
    if (m.rows() == 0) {
        throw InvalidShape(std::string(op) + ": empty matrix");
    }
}

void require_symmetric(const DenseMatrix& m, const char* op) {
    require_square(m, op);
    const double tol = 1e-9 * std::max(1.0, m.max_abs());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = r + 1; c < m.cols(); ++c) {
            if (std::abs(m(r, c) - m(c, r)) > tol) {
                throw NotSymmetric(std::string(op) + ": |A[" + std::to_string(r) + "][" +
                                   std::to_string(c) + "] - A[" + std::to_string(c) + "][" +
                                   std::to_string(r) + "]| exceeds tolerance");
            }
        }
    }
}

DenseMatrix symmetrized(const DenseMatrix& m) {
    DenseMatrix out = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = r + 1; c < m.cols(); ++c) {
            const double v = 0.5 * (m(r, c) + m(c, r));
            out(r, c) = v;
            out(c, r) = v;
        }
    }
    return out;
}

double offdiag_frobenius(const DenseMatrix& a) {
    double sum = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
            if (r != c) {
                sum += a(r, c) * a(r, c);
            }
        }
    }
    return std::sqrt(sum);
}

/// Reassembles V * diag(f(values)) * V^T, mirroring the upper triangle so the
/// result is exactly symmetric.
DenseMatrix reassemble(const SymmetricEigen& eig, const std::vector<double>& diagonal) {
    const std::size_t n = eig.values.size();
    DenseMatrix out(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = r; c < n; ++c) {
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                sum += diagonal[k] * eig.vectors(r, k) * eig.vectors(c, k);
            }
            out(r, c) = sum;
            out(c, r) = sum;
        }
    }
    return out;
}

} // namespace

double SymmetricEigen::min_value() const {
    return *std::min_element(values.begin(), values.end());
}

double SymmetricEigen::max_value() const {
    return *std::max_element(values.begin(), values.end());
}

SymmetricEigen eigen_symmetric(const DenseMatrix& input) {
    require_square(input, "eigen_symmetric");
    const std::size_t n = input.rows();

    DenseMatrix a = symmetrized(input);
    DenseMatrix v = DenseMatrix::identity(n);

    // The Frobenius norm is invariant under the rotations, so the stopping
    // target can be fixed up front.
    const double off_target = 1e-12 * input.frobenius_norm();
    constexpr int kMaxSweeps = 100;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        if (offdiag_frobenius(a) <= off_target) {
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double app = a(p, p);
                const double aqq = a(q, q);
                const double small = 100.0 * std::abs(apq);
                if (sweep > 3 && std::abs(app) + small == std::abs(app) &&
                    std::abs(aqq) + small == std::abs(aqq)) {
                    a(p, q) = 0.0;
                    a(q, p) = 0.0;
                    continue;
                }

                const double diff = aqq - app;
                double t;
                if (std::abs(diff) + small == std::abs(diff)) {
                    t = apq / diff;
                } else {
                    const double theta = 0.5 * diff / apq;
                    t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                    if (theta < 0.0) {
                        t = -t;
                    }
                }
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                const double h = t * apq;

                a(p, p) = app - h;
                a(q, q) = aqq + h;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) {
                        continue;
                    }
                    const double arp = a(r, p);
                    const double arq = a(r, q);
                    a(r, p) = arp - s * (arq + tau * arp);
                    a(p, r) = a(r, p);
                    a(r, q) = arq + s * (arp - tau * arq);
                    a(q, r) = a(r, q);
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vrp = v(r, p);
                    const double vrq = v(r, q);
                    v(r, p) = vrp - s * (vrq + tau * vrp);
                    v(r, q) = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    SymmetricEigen out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = a(i, i);
    }
    out.vectors = std::move(v);
    return out;
}

DenseMatrix gram(const DenseMatrix& x, bool normalize) {
    const std::size_t d = x.rows();
    const std::size_t n = x.cols();
    if (d == 0 || n == 0) {
        throw InvalidShape("gram: input has a zero dimension");
    }

    DenseMatrix scaled = x;
    if (normalize) {
        for (std::size_t j = 0; j < n; ++j) {
            double sq = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                sq += scaled(i, j) * scaled(i, j);
            }
            const double norm = std::sqrt(sq);
            if (norm > 0.0) {
                for (std::size_t i = 0; i < d; ++i) {
                    scaled(i, j) /= norm;
                }
            }
        }
    }

    DenseMatrix g(d, d);
    for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t q = p; q < d; ++q) {
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                sum += scaled(p, k) * scaled(q, k);
            }
            g(p, q) = sum;
            g(q, p) = sum;
        }
    }
    return g;
}

DenseMatrix pinv_tikhonov(const DenseMatrix& g, double lambda_rel, double rank_eps) {
    require_symmetric(g, "pinv_tikhonov");
    const std::size_t d = g.rows();

    const SymmetricEigen eig = eigen_symmetric(g);
    const double lambda_max = eig.max_value();
    const double lambda_eff = lambda_rel * g.trace() / static_cast<double>(d);
    const double floor = rank_eps * lambda_max;

    std::vector<double> inverted(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        const double shifted = eig.values[k] + lambda_eff;
        inverted[k] = shifted > floor ? 1.0 / shifted : 0.0;
    }
    return reassemble(eig, inverted);
}

DenseMatrix sqrtm_psd(const DenseMatrix& a) {
    require_symmetric(a, "sqrtm_psd");
    const std::size_t d = a.rows();

    const SymmetricEigen eig = eigen_symmetric(a);
    const double lambda_max = eig.max_value();
    const double tol = 1e-9 * std::max(lambda_max, 0.0);

    std::vector<double> roots(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        const double value = eig.values[k];
        if (value < -tol) {
            throw NotPSD("sqrtm_psd: eigenvalue " + std::to_string(value) +
                         " below PSD tolerance");
        }
        roots[k] = std::sqrt(std::max(value, 0.0));
    }
    return reassemble(eig, roots);
}

double condition_number(const DenseMatrix& g, double rank_eps) {
    require_symmetric(g, "condition_number");
    const SymmetricEigen eig = eigen_symmetric(g);
    const double lambda_max = eig.max_value();
    const double lambda_min = eig.min_value();
    if (lambda_min <= rank_eps * lambda_max) {
        return std::numeric_limits<double>::infinity();
    }
    return lambda_max / lambda_min;
}

double offdiag_norm(const DenseMatrix& g) {
    require_square(g, "offdiag_norm");
    double sum = 0.0;
    for (std::size_t p = 0; p < g.rows(); ++p) {
        for (std::size_t q = p + 1; q < g.cols(); ++q) {
            sum += std::abs(g(p, q));
        }
    }
    return sum;
}

GramStats GramStats::compute(const DenseMatrix& weight, const DenseMatrix& inputs,
                             bool normalize) {
    if (weight.cols() != inputs.rows()) {
        throw InvalidShape("GramStats: weight is " + std::to_string(weight.rows()) + "x" +
                           std::to_string(weight.cols()) + " but inputs have " +
                           std::to_string(inputs.rows()) + " rows");
    }
    if (inputs.cols() < 2) {
        throw InsufficientSamples("GramStats: need at least 2 samples, got " +
                                  std::to_string(inputs.cols()));
    }

    GramStats stats;
    stats.gram = ::cmm::gram(inputs, normalize);
    stats.cross = matmul(weight, stats.gram);
    stats.sample_count = inputs.cols();
    stats.normalized = normalize;

    // Symmetry holds by construction; the PSD bound is the real check.
    const SymmetricEigen eig = eigen_symmetric(stats.gram);
    const double bound = -1e-9 * std::max(1.0, eig.max_value());
    if (eig.min_value() < bound) {
        throw NotPSD("GramStats: Gram matrix has eigenvalue " +
                     std::to_string(eig.min_value()) + " below PSD tolerance");
    }
    return stats;
}

} // namespace cmm
