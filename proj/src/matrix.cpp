#include "trifuse/matrix.hpp"

#include <cmath>
#include <limits>

namespace trifuse {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("from_rows: ragged initializer");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

bool Matrix::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::pair<std::size_t, std::size_t> Matrix::first_non_finite() const noexcept {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) return {i / cols_, i % cols_};
    }
    return {npos, npos};
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shapes differ (" + a.shape_str() + " vs " +
                             b.shape_str() + ")");
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ (" + a.shape_str() + " vs " +
                             b.shape_str() + ")");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix out(m, n);
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            const double* brow = pb + p * n;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions differ (" + a.shape_str() + " vs " +
                             b.shape_str() + "^T)");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Matrix out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: inner dimensions differ (" + a.shape_str() + "^T vs " +
                             b.shape_str() + ")");
    }
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    Matrix out(m, n);
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a.data() + p * m;
        const double* brow = b.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double aip = arow[i];
            double* crow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return out;
}

Matrix transposed(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double e = std::exp(x(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
    if (gain.size() != x.cols() || bias.size() != x.cols()) {
        throw DimensionError("layer_norm: gain/bias length (" + std::to_string(gain.size()) +
                             "/" + std::to_string(bias.size()) + ") must equal cols of " +
                             x.shape_str());
    }
    if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be > 0");
    const std::size_t d = x.cols();
    Matrix out(x.rows(), d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) = gain.data()[j] * ((x(i, j) - mean) * inv) + bias.data()[j];
        }
    }
    return out;
}

Matrix conv1d_same(const Matrix& seq, const Matrix& kernel, const Matrix& bias,
                   std::size_t width) {
    if (width % 2 == 0) throw ConfigError("conv1d: width must be odd, got " + std::to_string(width));
    const std::size_t t_len = seq.rows(), d_in = seq.cols();
    if (kernel.rows() != width * d_in) {
        throw DimensionError("conv1d: kernel rows " + std::to_string(kernel.rows()) +
                             " != width*d_in = " + std::to_string(width * d_in));
    }
    const std::size_t d_out = kernel.cols();
    if (bias.size() != d_out) {
        throw DimensionError("conv1d: bias length " + std::to_string(bias.size()) +
                             " != d_out " + std::to_string(d_out));
    }
    const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(width / 2);
    Matrix out(t_len, d_out);
    for (std::size_t t = 0; t < t_len; ++t) {
        double* orow = out.data() + t * d_out;
        for (std::size_t j = 0; j < d_out; ++j) orow[j] = bias.data()[j];
        for (std::size_t w = 0; w < width; ++w) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                       static_cast<std::ptrdiff_t>(w) - center;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
            const double* xrow = seq.data() + static_cast<std::size_t>(src) * d_in;
            const double* kblock = kernel.data() + w * d_in * d_out;
            for (std::size_t p = 0; p < d_in; ++p) {
                const double xv = xrow[p];
                const double* krow = kblock + p * d_out;
                for (std::size_t j = 0; j < d_out; ++j) orow[j] += xv * krow[j];
            }
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix scaled(const Matrix& a, double s) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
    return out;
}

Matrix add_bias_rows(const Matrix& x, const Matrix& bias) {
    if (bias.size() != x.cols()) {
        throw DimensionError("add_bias_rows: bias length " + std::to_string(bias.size()) +
                             " != cols of " + x.shape_str());
    }
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double* row = out.data() + i * x.cols();
        for (std::size_t j = 0; j < x.cols(); ++j) row[j] += bias.data()[j];
    }
    return out;
}

}  // namespace trifuse
