#include "invsen/numkit/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "invsen/error.hpp"
#include "invsen/numkit/parallel.hpp"

namespace invsen::numkit {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw Error(ErrorKind::shape, "matrix data length " + std::to_string(data_.size()) +
                                          " does not match " + shape_string());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw Error(ErrorKind::shape, "ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Matrix::shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw Error(ErrorKind::shape, "matmul " + a.shape_string() + " * " + b.shape_string());
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t inner = a.cols();
    const std::size_t n = b.cols();
    parallel_rows(a.rows(), inner * n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double* __restrict o = out.data() + i * n;
            const double* arow = a.data() + i * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                const double s = arow[k];
                if (s == 0.0) continue;
                const double* __restrict brow = b.data() + k * n;
                for (std::size_t j = 0; j < n; ++j) o[j] += s * brow[j];
            }
        }
    });
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw Error(ErrorKind::shape, "matmul_tn " + a.shape_string() + "ᵀ * " + b.shape_string());
    }
    Matrix out(a.cols(), b.cols());
    const std::size_t m = a.cols();
    const std::size_t n = b.cols();
    parallel_rows(m, a.rows() * n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const double* arow = a.data() + r * m;
            const double* __restrict brow = b.data() + r * n;
            for (std::size_t i = begin; i < end; ++i) {
                const double s = arow[i];
                if (s == 0.0) continue;
                double* __restrict o = out.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) o[j] += s * brow[j];
            }
        }
    });
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw Error(ErrorKind::shape, "matmul_nt " + a.shape_string() + " * " + b.shape_string() + "ᵀ");
    }
    Matrix out(a.rows(), b.rows());
    const std::size_t inner = a.cols();
    parallel_rows(a.rows(), inner * b.rows(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double* arow = a.data() + i * inner;
            for (std::size_t j = 0; j < b.rows(); ++j) {
                const double* brow = b.data() + j * inner;
                double acc = 0.0;
                for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
                out(i, j) = acc;
            }
        }
    });
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix gather_rows(const Matrix& a, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), a.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= a.rows()) throw Error(ErrorKind::shape, "gather_rows index out of range");
        std::copy_n(a.data() + indices[r] * a.cols(), a.cols(), out.data() + r * a.cols());
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorKind::shape, "dot length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorKind::shape, "max_abs_diff " + a.shape_string() + " vs " + b.shape_string());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw Error(ErrorKind::shape, what + ": expected [" + std::to_string(rows) + "x" +
                                          std::to_string(cols) + "], got " + m.shape_string());
    }
}

}  // namespace invsen::numkit
