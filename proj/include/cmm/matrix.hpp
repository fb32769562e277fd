#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace cmm {

/// Dense row-major matrix of 64-bit floats. The universal carrier for
/// weights, activations, Gram matrices and covariances. All entries are
/// required to be finite at construction time.
class DenseMatrix {
public:
    DenseMatrix() = default;

    /// Zero-filled matrix.
    DenseMatrix(std::size_t rows, std::size_t cols);

    /// Takes ownership of a row-major buffer; throws if the length does not
    /// match rows*cols or any entry is NaN/Inf.
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Convenience literal constructor: {{1, 2}, {3, 4}}.
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    DenseMatrix transposed() const;

    /// First `count` columns (count <= cols).
    DenseMatrix first_cols(std::size_t count) const;

    /// Copy with a constant-1 row appended at the bottom (bias folding).
    DenseMatrix with_ones_row() const;

    double frobenius_norm() const;
    double max_abs() const;
    double trace() const;  // square matrices only

    bool same_shape(const DenseMatrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    /// True when all entries are finite.
    bool is_finite() const noexcept;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double scale, const DenseMatrix& m);

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

/// ||got - want||_F / ||want||_F, with a zero-norm reference treated as 1.
double relative_error(const DenseMatrix& got, const DenseMatrix& want);

} // namespace cmm
