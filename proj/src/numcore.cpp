#include "vulnaudit/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "vulnaudit/error.hpp"

namespace vulnaudit {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "DenseMatrix: data length != rows * cols");
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool DenseMatrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseMatrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
    require(rows_ == other.rows_ && cols_ == other.cols_, "DenseMatrix +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

void SparseMatrix::validate() const {
    require(row_pointers.size() == rows + 1, "SparseMatrix: row_pointers length != rows + 1");
    require(row_pointers.front() == 0, "SparseMatrix: row_pointers must start at 0");
    require(row_pointers.back() == col_indices.size(), "SparseMatrix: row_pointers end != nnz");
    require(col_indices.size() == values.size(), "SparseMatrix: col_indices/values length differ");
    for (std::size_t r = 0; r < rows; ++r) {
        require(row_pointers[r] <= row_pointers[r + 1], "SparseMatrix: row_pointers not monotone");
        for (std::size_t p = row_pointers[r]; p < row_pointers[r + 1]; ++p) {
            require(col_indices[p] < cols, "SparseMatrix: column index out of bounds");
            if (p > row_pointers[r]) {
                require(col_indices[p - 1] < col_indices[p],
                        "SparseMatrix: column indices not strictly increasing");
            }
        }
    }
}

DenseMatrix SparseMatrix::to_dense() const {
    DenseMatrix d(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t p = row_pointers[r]; p < row_pointers[r + 1]; ++p) d(r, col_indices[p]) = values[p];
    }
    return d;
}

SparseMatrix SparseMatrix::transpose() const {
    SparseMatrix t;
    t.rows = cols;
    t.cols = rows;
    t.row_pointers.assign(cols + 1, 0);
    for (auto c : col_indices) ++t.row_pointers[c + 1];
    for (std::size_t c = 0; c < cols; ++c) t.row_pointers[c + 1] += t.row_pointers[c];
    t.col_indices.resize(nnz());
    t.values.resize(nnz());
    std::vector<std::size_t> cursor(t.row_pointers.begin(), t.row_pointers.end() - 1);
    // Walking rows in order keeps the transposed column indices sorted.
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t p = row_pointers[r]; p < row_pointers[r + 1]; ++p) {
            const std::size_t dst = cursor[col_indices[p]]++;
            t.col_indices[dst] = static_cast<std::uint32_t>(r);
            t.values[dst] = values[p];
        }
    }
    return t;
}

bool SparseMatrix::is_symmetric(double tol) const {
    if (rows != cols) return false;
    const SparseMatrix t = transpose();
    if (t.row_pointers != row_pointers || t.col_indices != col_indices) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (std::abs(values[i] - t.values[i]) > tol) return false;
    }
    return true;
}

SparseMatrix SparseMatrix::from_dense(const DenseMatrix& dense) {
    SparseMatrix s;
    s.rows = dense.rows();
    s.cols = dense.cols();
    s.row_pointers.assign(1, 0);
    for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < s.cols; ++c) {
            if (dense(r, c) != 0.0) {
                s.col_indices.push_back(static_cast<std::uint32_t>(c));
                s.values.push_back(dense(r, c));
            }
        }
        s.row_pointers.push_back(s.col_indices.size());
    }
    return s;
}

DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& x) {
    require(a.cols == x.rows(), "spmm: A.cols != X.rows");
    const std::size_t k = x.cols();
    DenseMatrix out(a.rows, k);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double* dst = out.row(r).data();
        for (std::size_t p = a.row_pointers[r]; p < a.row_pointers[r + 1]; ++p) {
            const double v = a.values[p];
            const double* src = x.row(a.col_indices[p]).data();
            for (std::size_t c = 0; c < k; ++c) dst[c] += v * src[c];
        }
    }
    return out;
}

DenseMatrix spmm_backward(const SparseMatrix& a, const DenseMatrix& upstream) {
    require(a.rows == upstream.rows(), "spmm_backward: A.rows != upstream.rows");
    const std::size_t k = upstream.cols();
    DenseMatrix dx(a.cols, k);
    // Scatter form of A^T * G.
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double* g = upstream.row(r).data();
        for (std::size_t p = a.row_pointers[r]; p < a.row_pointers[r + 1]; ++p) {
            const double v = a.values[p];
            double* dst = dx.row(a.col_indices[p]).data();
            for (std::size_t c = 0; c < k; ++c) dst[c] += v * g[c];
        }
    }
    return dx;
}

DenseMatrix matmul(const DenseMatrix& x, const DenseMatrix& w) {
    require(x.cols() == w.rows(), "matmul: X.cols != W.rows");
    DenseMatrix out(x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double* dst = out.row(i).data();
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double xv = x(i, j);
            const double* wr = w.row(j).data();
            for (std::size_t c = 0; c < w.cols(); ++c) dst[c] += xv * wr[c];
        }
    }
    return out;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows() == b.rows(), "matmul_tn: A.rows != B.rows");
    DenseMatrix out(a.cols(), b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* br = b.row(r).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double av = a(r, i);
            double* dst = out.row(i).data();
            for (std::size_t c = 0; c < b.cols(); ++c) dst[c] += av * br[c];
        }
    }
    return out;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols() == b.cols(), "matmul_nt: A.cols != B.cols");
    DenseMatrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* br = b.row(j).data();
            double acc = 0.0;
            for (std::size_t c = 0; c < a.cols(); ++c) acc += ar[c] * br[c];
            out(i, j) = acc;
        }
    }
    return out;
}

MatmulGrads matmul_backward(const DenseMatrix& x, const DenseMatrix& w, const DenseMatrix& upstream) {
    require(upstream.rows() == x.rows() && upstream.cols() == w.cols(), "matmul_backward: shape mismatch");
    return {matmul_nt(upstream, w), matmul_tn(x, upstream)};
}

DenseMatrix add_bias(const DenseMatrix& x, const DenseMatrix& b) {
    require(b.rows() == 1 && b.cols() == x.cols(), "add_bias: bias must be 1 x X.cols");
    DenseMatrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t c = 0; c < r.size(); ++c) r[c] += b(0, c);
    }
    return out;
}

DenseMatrix column_sums(const DenseMatrix& upstream) {
    DenseMatrix out(1, upstream.cols());
    for (std::size_t i = 0; i < upstream.rows(); ++i) {
        for (std::size_t c = 0; c < upstream.cols(); ++c) out(0, c) += upstream(i, c);
    }
    return out;
}

DenseMatrix relu(const DenseMatrix& x) {
    DenseMatrix out = x;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

DenseMatrix relu_backward(const DenseMatrix& x, const DenseMatrix& upstream) {
    require(x.rows() == upstream.rows() && x.cols() == upstream.cols(), "relu_backward: shape mismatch");
    DenseMatrix out = upstream;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(x.data()[i] > 0.0)) out.data()[i] = 0.0;
    }
    return out;
}

DenseMatrix softmax_rows(const DenseMatrix& logits) {
    DenseMatrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto in = logits.row(i);
        auto dst = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = std::exp(in[c] - mx);
            total += dst[c];
        }
        for (double& v : dst) v /= total;
    }
    return out;
}

DenseMatrix softmax_rows_backward(const DenseMatrix& probs, const DenseMatrix& upstream) {
    require(probs.rows() == upstream.rows() && probs.cols() == upstream.cols(),
            "softmax_rows_backward: shape mismatch");
    DenseMatrix out(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const auto p = probs.row(i);
        const auto g = upstream.row(i);
        double dot = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
        auto dst = out.row(i);
        for (std::size_t c = 0; c < p.size(); ++c) dst[c] = p[c] * (g[c] - dot);
    }
    return out;
}

double sum(const DenseMatrix& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return acc;
}

void require_finite(const DenseMatrix& m, std::string_view what) {
    if (!m.all_finite()) throw NumericalError("non-finite values in " + std::string(what));
}

}  // namespace vulnaudit
