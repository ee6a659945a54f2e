#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "trifuse/error.hpp"

namespace trifuse {

// Dense row-major matrix of 64-bit reals. Values are immutable by convention
// once an op has produced them; gradients live elsewhere (see autodiff.hpp).
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 0.0); }
    static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }
    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool all_finite() const noexcept;

    // Index of the first non-finite entry, as (row, col); rows()==npos if none.
    std::pair<std::size_t, std::size_t> first_non_finite() const noexcept;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// --- plain (non-differentiable) kernels -------------------------------------
// These are the forward computations; reverse-mode wrappers in autodiff.hpp
// reuse them.

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T and a^T * b, used by backward passes to avoid explicit transposes.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transposed(const Matrix& a);

// Row-wise softmax with row-max subtraction; rows sum to 1.
Matrix softmax_rows(const Matrix& x);

// Per-row standardization followed by the affine map gain*x_hat + bias.
// gain/bias have length x.cols().
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps = 1e-5);

// 1-d convolution over time with symmetric zero padding ("same" output
// length). kernel is (width * d_in) x d_out with tap w in row block
// [w*d_in, (w+1)*d_in); bias is 1 x d_out. width must be odd.
Matrix conv1d_same(const Matrix& seq, const Matrix& kernel, const Matrix& bias, std::size_t width);

Matrix add(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double s);
// x + bias broadcast over rows; bias is 1 x cols.
Matrix add_bias_rows(const Matrix& x, const Matrix& bias);

void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

}  // namespace trifuse
