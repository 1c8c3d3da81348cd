#pragma once

// Closed-form diffusion-bridge quantities: signal/noise schedules, the bridge
// marginal coefficients, Doob's h-transform drift, score conversion and the
// pred-x preconditioning.

#include <algorithm>
#include <cmath>
#include <string>

#include "sim2p/error.hpp"
#include "sim2p/volume.hpp"

namespace sim2p::bridge {

enum class ScheduleKind { VP, VE };

inline const char* to_string(ScheduleKind k) { return k == ScheduleKind::VP ? "vp" : "ve"; }

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "vp" || s == "VP") return ScheduleKind::VP;
    if (s == "ve" || s == "VE") return ScheduleKind::VE;
    throw ConfigError("unknown schedule kind '" + s + "' (expected vp or ve)");
}

inline constexpr double kSnrCeiling = 1e12;

struct BridgeSchedule {
    ScheduleKind kind = ScheduleKind::VP;
    double beta0 = 2.0;
    double tMin = 1e-4;
    double tMax = 1.0;
    double sigmaMaxVE = 1.0;

    static BridgeSchedule vp(double beta0 = 2.0) { return {ScheduleKind::VP, beta0}; }
    static BridgeSchedule ve(double sigmaMax = 1.0) {
        BridgeSchedule s;
        s.kind = ScheduleKind::VE;
        s.sigmaMaxVE = sigmaMax;
        return s;
    }

    void validate() const {
        if (!(beta0 > 0.0)) throw ConfigError("schedule.beta0 must be positive");
        if (!(tMax > 0.0)) throw ConfigError("schedule.tMax must be positive");
        if (!(tMin > 0.0 && tMin < tMax)) throw ConfigError("schedule.tMin must lie in (0, tMax)");
        if (!(sigmaMaxVE > 0.0)) throw ConfigError("schedule.sigmaMaxVE must be positive");
    }

    bool operator==(const BridgeSchedule&) const = default;
};

struct ScheduleValues {
    double alpha;
    double sigma;
    double snr;
};

struct BridgeCoeffs {
    double a;
    double b;
    double c;
};

/// Scalar variances of the pooled training voxels (x0 = target, xT = source).
struct DataStats {
    double var0 = 0.25;
    double varT = 0.25;
    double cov0T = 0.0;

    void validate() const {
        if (!(var0 > 0.0) || !(varT > 0.0))
            throw DegenerateStatsError("data statistics require positive variances");
        if (!(cov0T * cov0T < var0 * varT))
            throw DegenerateStatsError("data statistics require cov0T^2 < var0 * varT");
    }
    bool operator==(const DataStats&) const = default;
};

struct Scalings {
    double cIn;
    double cOut;
    double cSkip;
    double cNoise;
};

namespace detail {

inline void check_time(const BridgeSchedule& s, double t, const char* op) {
    if (!(t >= s.tMin && t <= s.tMax))
        throw DomainError(std::string(op) + ": t=" + std::to_string(t) + " outside [" + std::to_string(s.tMin) +
                          ", " + std::to_string(s.tMax) + "]");
}

// alpha/sigma without domain checks; used by the public entry points after validation
inline ScheduleValues eval_unchecked(const BridgeSchedule& s, double t) {
    double alpha, sigma2;
    if (s.kind == ScheduleKind::VP) {
        alpha = std::exp(-0.5 * s.beta0 * t);
        sigma2 = -std::expm1(-s.beta0 * t);
    } else {
        alpha = 1.0;
        const double sig = t * s.sigmaMaxVE / s.tMax;
        sigma2 = sig * sig;
    }
    const double snr = sigma2 > 0.0 ? std::min(alpha * alpha / sigma2, kSnrCeiling) : kSnrCeiling;
    return {alpha, std::sqrt(sigma2), snr};
}

}  // namespace detail

inline ScheduleValues schedule_eval(const BridgeSchedule& s, double t) {
    detail::check_time(s, t, "schedule_eval");
    return detail::eval_unchecked(s, t);
}

/// Marginal coefficients of x_t | (x0, xT=y) ~ N(a*y + b*x0, c).
inline BridgeCoeffs bridge_coeffs(const BridgeSchedule& s, double t) {
    detail::check_time(s, t, "bridge_coeffs");
    if (t == s.tMax) return {1.0, 0.0, 0.0};
    const auto at = detail::eval_unchecked(s, t);
    const auto aT = detail::eval_unchecked(s, s.tMax);
    const double ratio = aT.snr / at.snr;
    const double a = (at.alpha / aT.alpha) * ratio;
    const double b = at.alpha * (1.0 - ratio);
    const double c = std::max(0.0, at.sigma * at.sigma * (1.0 - ratio));
    return {a, b, c};
}

/// d log(alpha_t)/dt; the base forward drift is f(x, t) = dlogalpha_dt * x.
inline double dlogalpha_dt(const BridgeSchedule& s, double /*t*/) {
    return s.kind == ScheduleKind::VP ? -0.5 * s.beta0 : 0.0;
}

/// g(t)^2 = d sigma_t^2/dt - 2 sigma_t^2 d log(alpha_t)/dt
inline double diffusion_sq(const BridgeSchedule& s, double t) {
    if (s.kind == ScheduleKind::VP) {
        const double dsigma2 = s.beta0 * std::exp(-s.beta0 * t);
        const double sigma2 = -std::expm1(-s.beta0 * t);
        return dsigma2 - 2.0 * sigma2 * dlogalpha_dt(s, t);
    }
    const double k = s.sigmaMaxVE / s.tMax;
    return 2.0 * t * k * k;
}

/// Scalar h-transform drift: grad_x log p(x_T = y | x_t = x).
inline double h_drift_scalar(const BridgeSchedule& s, double x, double y, double t) {
    if (t >= s.tMax) throw SingularityError("h_drift: t must be strictly below T (transition variance vanishes)");
    detail::check_time(s, t, "h_drift");
    const auto at = detail::eval_unchecked(s, t);
    const auto aT = detail::eval_unchecked(s, s.tMax);
    const double r = aT.alpha / at.alpha;
    const double denom = aT.sigma * aT.sigma - r * r * at.sigma * at.sigma;
    if (!(denom > 0.0)) throw SingularityError("h_drift: non-positive transition variance");
    return r * (y - r * x) / denom;
}

inline Volume h_drift(const BridgeSchedule& s, const Volume& x, const Volume& y, double t) {
    require_same_shape(x, y, "h_drift");
    if (t >= s.tMax) throw SingularityError("h_drift: t must be strictly below T (transition variance vanishes)");
    detail::check_time(s, t, "h_drift");
    const auto at = detail::eval_unchecked(s, t);
    const auto aT = detail::eval_unchecked(s, s.tMax);
    const double r = aT.alpha / at.alpha;
    const double denom = aT.sigma * aT.sigma - r * r * at.sigma * at.sigma;
    if (!(denom > 0.0)) throw SingularityError("h_drift: non-positive transition variance");
    Volume out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = r * (y[i] - r * x[i]) / denom;
    return out;
}

/// Draws from the bridge marginal: a*y + b*x0 + sqrt(c)*noise. Returns y itself at the pinned endpoint.
inline Volume forward_marginal_sample(const BridgeCoeffs& k, const Volume& x0, const Volume& y, const Volume& noise) {
    require_same_shape(x0, y, "forward_marginal_sample");
    require_same_shape(x0, noise, "forward_marginal_sample");
    if (k.a == 1.0 && k.b == 0.0 && k.c == 0.0) return y;
    const double sc = std::sqrt(k.c);
    Volume out(y.dims());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = k.a * y[i] + k.b * x0[i] + sc * noise[i];
    return out;
}

inline Scalings scalings(const BridgeSchedule& s, const DataStats& st, double t) {
    st.validate();
    const auto k = bridge_coeffs(s, t);
    const double denom = k.a * k.a * st.varT + k.b * k.b * st.var0 + 2.0 * k.a * k.b * st.cov0T + k.c;
    if (!(denom > 0.0)) throw DegenerateStatsError("scalings: non-positive input variance");
    const double cIn = 1.0 / std::sqrt(denom);
    const double cOut = std::sqrt(k.a * k.a * (st.varT * st.var0 - st.cov0T * st.cov0T) + st.var0 * k.c) * cIn;
    const double cSkip = (k.b * st.var0 + k.a * st.cov0T) * cIn * cIn;
    const double cNoise = 0.25 * std::log(t);
    return {cIn, cOut, cSkip, cNoise};
}

/// Score of the Gaussian bridge marginal with x0 replaced by a prediction.
inline Volume score_from_pred(const Volume& xt, const Volume& x0hat, const Volume& y, const BridgeCoeffs& k) {
    require_same_shape(xt, x0hat, "score_from_pred");
    require_same_shape(xt, y, "score_from_pred");
    if (!(k.c > 0.0)) throw SingularityError("score_from_pred: bridge variance c is zero (t = T)");
    Volume out(xt.dims());
    for (std::size_t i = 0; i < xt.size(); ++i) out[i] = -(xt[i] - (k.a * y[i] + k.b * x0hat[i])) / k.c;
    return out;
}

inline double loss_weight(const Scalings& sc) {
    if (!(sc.cOut > 0.0)) throw SingularityError("loss_weight: c_out is zero");
    return 1.0 / (sc.cOut * sc.cOut);
}

/// Pooled scalar variance/covariance over all voxels of paired (target, source) volumes.
template <class Range>
DataStats estimate_stats(const Range& pairs) {
    double n = 0, s0 = 0, sT = 0;
    for (const auto& [x0, y] : pairs) {
        require_same_shape(*x0, *y, "estimate_stats");
        for (std::size_t i = 0; i < x0->size(); ++i) {
            s0 += (*x0)[i];
            sT += (*y)[i];
        }
        n += double(x0->size());
    }
    if (n < 2) return {};
    const double m0 = s0 / n, mT = sT / n;
    double v0 = 0, vT = 0, c = 0;
    for (const auto& [x0, y] : pairs) {
        for (std::size_t i = 0; i < x0->size(); ++i) {
            const double d0 = (*x0)[i] - m0, dT = (*y)[i] - mT;
            v0 += d0 * d0;
            vT += dT * dT;
            c += d0 * dT;
        }
    }
    DataStats st{v0 / n, vT / n, c / n};
    if (!(st.var0 > 0.0) || !(st.varT > 0.0) || !(st.cov0T * st.cov0T < st.var0 * st.varT)) return {};
    return st;
}

}  // namespace sim2p::bridge
