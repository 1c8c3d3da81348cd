#pragma once

// Dense building blocks with explicit backward passes. Token matrices are
// row-major (one token per row); linear weights are stored (out x in).

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

namespace sim2p::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using CMatMap = Eigen::Map<const Mat<T>>;
template <class T>
using VecMap = Eigen::Map<Vec<T>>;
template <class T>
using CVecMap = Eigen::Map<const Vec<T>>;

// Flat parameter and gradient storage. Eigen peels unaligned heads before vectorizing, so
// with a malloc-aligned base the summation order (and the last bits) would depend on the address.
template <class T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Offsets of one linear map inside the flat parameter array.
struct LinearSlot {
    std::size_t w = 0;
    std::size_t b = 0;
    int out = 0;
    int in = 0;
};

template <class T>
CMatMap<T> weight(const T* p, const LinearSlot& s) {
    return CMatMap<T>(p + s.w, s.out, s.in);
}
template <class T>
CVecMap<T> bias(const T* p, const LinearSlot& s) {
    return CVecMap<T>(p + s.b, s.out);
}
template <class T>
MatMap<T> weight(T* p, const LinearSlot& s) {
    return MatMap<T>(p + s.w, s.out, s.in);
}
template <class T>
VecMap<T> bias(T* p, const LinearSlot& s) {
    return VecMap<T>(p + s.b, s.out);
}

/// Y = X W^T + b for token rows.
template <class T>
Mat<T> linear_rows(const T* p, const LinearSlot& s, const Mat<T>& x) {
    Mat<T> y(x.rows(), s.out);
    y.noalias() = x * weight(p, s).transpose();
    y.rowwise() += bias(p, s).transpose();
    return y;
}

/// Accumulates dW, db and returns dX.
template <class T>
Mat<T> linear_rows_backward(const T* p, T* g, const LinearSlot& s, const Mat<T>& x, const Mat<T>& dy) {
    weight(g, s).noalias() += dy.transpose() * x;
    bias(g, s) += dy.colwise().sum().transpose();
    Mat<T> dx(dy.rows(), s.in);
    dx.noalias() = dy * weight(p, s);
    return dx;
}

template <class T>
Vec<T> linear_vec(const T* p, const LinearSlot& s, const Vec<T>& x) {
    Vec<T> y = bias(p, s);
    y.noalias() += weight(p, s) * x;
    return y;
}

template <class T>
Vec<T> linear_vec_backward(const T* p, T* g, const LinearSlot& s, const Vec<T>& x, const Vec<T>& dy) {
    weight(g, s).noalias() += dy * x.transpose();
    bias(g, s) += dy;
    Vec<T> dx(s.in);
    dx.noalias() = weight(p, s).transpose() * dy;
    return dx;
}

template <class T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}
template <class T>
T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

// tanh approximation of GELU
template <class T>
T gelu(T x) {
    const T k = T(0.7978845608028654);
    return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}
template <class T>
T gelu_grad(T x) {
    const T k = T(0.7978845608028654);
    const T u = k * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = k * (T(1) + T(3 * 0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <class T>
Vec<T> silu_vec(const Vec<T>& x) {
    return x.unaryExpr([](T v) { return silu(v); });
}

inline constexpr double kLayerNormEps = 1e-6;

/// Normalizes each row to zero mean, unit variance (no affine). Stores 1/std per row.
template <class T>
Mat<T> layer_norm(const Mat<T>& x, Vec<T>& rstd) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Mat<T> y(n, d);
    rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mu = x.row(i).mean();
        const auto c = (x.row(i).array() - mu);
        const T var = c.square().mean();
        const T r = T(1) / std::sqrt(var + T(kLayerNormEps));
        rstd(i) = r;
        y.row(i) = c * r;
    }
    return y;
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& y, const Vec<T>& rstd) {
    const Eigen::Index n = y.rows();
    Mat<T> dx(n, y.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mdy = dy.row(i).mean();
        const T mdyy = (dy.row(i).array() * y.row(i).array()).mean();
        dx.row(i) = rstd(i) * (dy.row(i).array() - mdy - y.row(i).array() * mdyy);
    }
    return dx;
}

/// Row-wise softmax in place.
template <class T>
void softmax_rows(Mat<T>& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        auto row = s.row(i).array();
        const T mx = row.maxCoeff();
        row = (row - mx).exp();
        row /= row.sum();
    }
}

}  // namespace sim2p::nn
