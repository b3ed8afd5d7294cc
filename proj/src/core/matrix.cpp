#include "grokscope/core/matrix.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace grokscope {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                                                 static_cast<Eigen::Index>(m.cols())); }
MutMap view(Matrix& m) { return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                                       static_cast<Eigen::Index>(m.cols())); }

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
    }
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw std::invalid_argument("Matrix: " + std::to_string(data_.size()) +
                                    " values do not fill a " + shape_string() + " matrix");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
    Matrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        m(i, i) = values[i];
    }
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("Matrix::from_rows: ragged rows");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

void Matrix::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

double Matrix::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Matrix::sum_squares() const noexcept {
    double s = 0.0;
    for (double v : data_) {
        s += v * v;
    }
    return s;
}

double Matrix::frobenius_norm() const noexcept { return std::sqrt(sum_squares()); }

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double factor) noexcept {
    for (double& v : data_) {
        v *= factor;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double factor) { return a *= factor; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c;
    gemm(a, false, b, false, c, 0.0);
    return c;
}

void gemm(const Matrix& a, bool transpose_a, const Matrix& b, bool transpose_b, Matrix& c,
          double beta) {
    const std::size_t m = transpose_a ? a.cols() : a.rows();
    const std::size_t k = transpose_a ? a.rows() : a.cols();
    const std::size_t kb = transpose_b ? b.cols() : b.rows();
    const std::size_t n = transpose_b ? b.rows() : b.cols();
    if (k != kb) {
        throw std::invalid_argument("matmul: shape mismatch " + a.shape_string() +
                                    (transpose_a ? "^T" : "") + " x " + b.shape_string() +
                                    (transpose_b ? "^T" : ""));
    }
    if (beta == 0.0) {
        if (c.rows() != m || c.cols() != n) {
            c = Matrix(m, n);
        }
    } else if (c.rows() != m || c.cols() != n) {
        throw std::invalid_argument("gemm: accumulator has shape " + c.shape_string() +
                                    ", expected " + std::to_string(m) + "x" + std::to_string(n));
    }
    if (m == 0 || n == 0) {
        return;
    }
    auto out = view(c);
    if (k == 0) {
        out *= beta;
        return;
    }
    const auto av = view(a);
    const auto bv = view(b);
    if (beta == 0.0) {
        if (!transpose_a && !transpose_b) {
            out.noalias() = av * bv;
        } else if (transpose_a && !transpose_b) {
            out.noalias() = av.transpose() * bv;
        } else if (!transpose_a && transpose_b) {
            out.noalias() = av * bv.transpose();
        } else {
            out.noalias() = av.transpose() * bv.transpose();
        }
        return;
    }
    if (beta != 1.0) {
        out *= beta;
    }
    if (!transpose_a && !transpose_b) {
        out.noalias() += av * bv;
    } else if (transpose_a && !transpose_b) {
        out.noalias() += av.transpose() * bv;
    } else if (!transpose_a && transpose_b) {
        out.noalias() += av * bv.transpose();
    } else {
        out.noalias() += av.transpose() * bv.transpose();
    }
}

double asymmetry(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("asymmetry: matrix is " + m.shape_string() + ", not square");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = i + 1; j < m.cols(); ++j) {
            worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
        }
    }
    return worst;
}

} // namespace grokscope
