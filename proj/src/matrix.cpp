#include "cmm/matrix.hpp"

#include "cmm/errors.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace cmm {

namespace {

void require_finite(const std::vector<double>& data) {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw Error("matrix entry is not finite");
        }
    }
}

} // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw InvalidShape("matrix buffer length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    require_finite(data_);
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
        if (row.size() != cols_) {
            throw InvalidShape("ragged initializer rows");
        }
        data_.insert(data_.end(), row.begin(), row.end());
    }
    require_finite(data_);
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

DenseMatrix DenseMatrix::transposed() const {
    DenseMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            out(c, r) = (*this)(r, c);
        }
    }
    return out;
}

DenseMatrix DenseMatrix::first_cols(std::size_t count) const {
    if (count > cols_) {
        throw InvalidShape("first_cols: requested " + std::to_string(count) +
                           " of " + std::to_string(cols_) + " columns");
    }
    DenseMatrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            out(r, c) = (*this)(r, c);
        }
    }
    return out;
}

DenseMatrix DenseMatrix::with_ones_row() const {
    DenseMatrix out(rows_ + 1, cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            out(r, c) = (*this)(r, c);
        }
    }
    for (std::size_t c = 0; c < cols_; ++c) {
        out(rows_, c) = 1.0;
    }
    return out;
}

double DenseMatrix::frobenius_norm() const {
    double sum = 0.0;
    for (double v : data_) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

double DenseMatrix::max_abs() const {
    double best = 0.0;
    for (double v : data_) {
        best = std::max(best, std::abs(v));
    }
    return best;
}

double DenseMatrix::trace() const {
    if (rows_ != cols_) {
        throw InvalidShape("trace of non-square matrix");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) {
        sum += (*this)(i, i);
    }
    return sum;
}

bool DenseMatrix::is_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw InvalidShape("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                           " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    DenseMatrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < n; ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw InvalidShape("matrix addition shape mismatch");
    }
    DenseMatrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += b.data()[i];
    }
    return out;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw InvalidShape("matrix subtraction shape mismatch");
    }
    DenseMatrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] -= b.data()[i];
    }
    return out;
}

DenseMatrix operator*(double scale, const DenseMatrix& m) {
    DenseMatrix out = m;
    for (double& v : out.data()) {
        v *= scale;
    }
    return out;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw InvalidShape("max_abs_diff shape mismatch");
    }
    double best = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        best = std::max(best, std::abs(a.data()[i] - b.data()[i]));
    }
    return best;
}

double relative_error(const DenseMatrix& got, const DenseMatrix& want) {
    const double diff = (got - want).frobenius_norm();
    const double denom = want.frobenius_norm();
    return denom > 0.0 ? diff / denom : diff;
}

} // namespace cmm
