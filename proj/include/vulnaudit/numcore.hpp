#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace vulnaudit {

/// Row-major dense matrix of doubles. Zero-row matrices are allowed so that
/// empty graphs flow through without special cases.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const;
    void fill(double v);
    DenseMatrix& operator+=(const DenseMatrix& other);

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Compressed-row sparse matrix. Column indices are strictly increasing
/// within each row.
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_pointers{0};
    std::vector<std::uint32_t> col_indices;
    std::vector<double> values;

    std::size_t nnz() const { return values.size(); }

    /// Throws std::invalid_argument on malformed structure.
    void validate() const;
    DenseMatrix to_dense() const;
    SparseMatrix transpose() const;
    /// Structural and numeric symmetry check.
    bool is_symmetric(double tol = 0.0) const;

    static SparseMatrix from_dense(const DenseMatrix& dense);
};

// Forward/backward pairs. Each backward takes the upstream gradient of the
// forward output and returns gradients of the inputs. Shape mismatches throw
// std::invalid_argument.

DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& x);
/// d/dX of spmm: A^T * upstream. A carries no gradient.
DenseMatrix spmm_backward(const SparseMatrix& a, const DenseMatrix& upstream);

DenseMatrix matmul(const DenseMatrix& x, const DenseMatrix& w);
/// A^T * B without forming the transpose.
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
/// A * B^T without forming the transpose.
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
struct MatmulGrads {
    DenseMatrix dx;
    DenseMatrix dw;
};
MatmulGrads matmul_backward(const DenseMatrix& x, const DenseMatrix& w, const DenseMatrix& upstream);

/// b is a 1 x cols row vector.
DenseMatrix add_bias(const DenseMatrix& x, const DenseMatrix& b);
/// Column sums of upstream (the bias gradient); dX is upstream itself.
DenseMatrix column_sums(const DenseMatrix& upstream);

DenseMatrix relu(const DenseMatrix& x);
/// Zeroes upstream where the forward input was <= 0.
DenseMatrix relu_backward(const DenseMatrix& x, const DenseMatrix& upstream);

DenseMatrix softmax_rows(const DenseMatrix& logits);
/// dL_i = p_i * (g_i - <g_i, p_i>), with p the forward output.
DenseMatrix softmax_rows_backward(const DenseMatrix& probs, const DenseMatrix& upstream);

double sum(const DenseMatrix& x);

/// Throws NumericalError naming `what` if any entry is NaN/Inf.
void require_finite(const DenseMatrix& m, std::string_view what);

}  // namespace vulnaudit
