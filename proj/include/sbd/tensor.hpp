#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbd {

/// Dense row-major matrix of 64-bit floats. Rank <= 2 everywhere; a scalar
/// is a 1x1 tensor. This is the value type shared by the autodiff tape, the
/// graph containers, and the model parameters.
class Tensor {
public:
    Tensor() = default;

    Tensor(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols),
          data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative dimension");
    }

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }

    static Tensor identity(int n) {
        Tensor t(n, n);
        for (int i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    static Tensor ones(int rows, int cols) { return Tensor(rows, cols, 1.0); }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

    /// Value of a 1x1 tensor.
    double item() const {
        if (!is_scalar()) throw std::invalid_argument("Tensor::item: not a scalar");
        return data_[0];
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
    }

private:
    int rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// ---- plain (non-differentiated) tensor arithmetic ----
// Used by the numeric backward pass and by constant-side statistics.

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor r = a;
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += b[k];
    return r;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor r = a;
    for (std::size_t k = 0; k < r.size(); ++k) r[k] -= b[k];
    return r;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor r = a;
    for (std::size_t k = 0; k < r.size(); ++k) r[k] *= b[k];
    return r;
}

inline Tensor scaled(const Tensor& a, double s) {
    Tensor r = a;
    for (std::size_t k = 0; k < r.size(); ++k) r[k] *= s;
    return r;
}

inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree " + a.shape_str() +
                                    " vs " + b.shape_str());
    Tensor r(a.rows(), b.cols());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            for (int j = 0; j < n; ++j) r(i, j) += aip * b(p, j);
        }
    }
    return r;
}

inline Tensor transpose_plain(const Tensor& a) {
    Tensor r(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) r(j, i) = a(i, j);
    return r;
}

inline double sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k];
    return s;
}

} // namespace sbd
