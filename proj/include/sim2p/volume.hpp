#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sim2p/error.hpp"
#include "sim2p/rng.hpp"

namespace sim2p {

struct Dims {
    std::uint32_t nx = 0;
    std::uint32_t ny = 0;
    std::uint32_t nz = 0;

    std::size_t count() const { return std::size_t(nx) * ny * nz; }
    bool operator==(const Dims&) const = default;
    std::string str() const {
        return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
    }
};

/// Dense 3D scalar field stored z-fastest: index = (x * ny + y) * nz + z.
class Volume {
public:
    Volume() = default;
    explicit Volume(Dims dims, double fill = 0.0) : dims_(dims), data_(dims.count(), fill) {}
    Volume(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
        if (data_.size() != dims_.count())
            throw ShapeError("volume data size " + std::to_string(data_.size()) + " does not match dims " +
                             dims_.str());
    }

    static Volume cube(std::uint32_t side, double fill = 0.0) { return Volume({side, side, side}, fill); }

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * dims_.ny + y) * dims_.nz + z; }
    double& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool operator==(const Volume&) const = default;

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    double mean() const {
        double s = 0.0;
        for (double v : data_) s += v;
        return data_.empty() ? 0.0 : s / double(data_.size());
    }

private:
    Dims dims_{};
    std::vector<double> data_;
};

inline void require_same_shape(const Volume& a, const Volume& b, const char* what) {
    if (a.dims() != b.dims())
        throw ShapeError(std::string(what) + ": shape mismatch " + a.dims().str() + " vs " + b.dims().str());
}

inline Volume standard_normal_like(const Volume& like, Rng& rng) {
    Volume out(like.dims());
    for (auto& v : out.raw()) v = rng.normal();
    return out;
}

/// out = sa*a + sb*b, voxelwise.
inline Volume lincomb(double sa, const Volume& a, double sb, const Volume& b) {
    require_same_shape(a, b, "lincomb");
    Volume out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = sa * a[i] + sb * b[i];
    return out;
}

inline Volume clamped(Volume v, double lo, double hi) {
    for (auto& x : v.raw()) x = std::clamp(x, lo, hi);
    return v;
}

}  // namespace sim2p
