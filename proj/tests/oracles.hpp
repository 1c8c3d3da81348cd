#pragma once

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls into the code paths it is used to check.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

struct Moments {
    double mean;
    double var;
};

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

/// Linear forward SDE dx = k(t) x dt + sqrt(g2(t)) dw. Everything needed for the
/// transition kernel p(x_T | x_t) is obtained by quadrature, not by closed forms.
struct LinearSde {
    std::function<double(double)> k;   // drift coefficient
    std::function<double(double)> g2;  // squared diffusion
    double T = 1.0;

    double decay(double t0, double t1) const { return std::exp(simpson(k, t0, t1, 400)); }

    // variance of x_{t1} given x_{t0}
    double transition_var(double t0, double t1) const {
        return simpson([&](double s) { return g2(s) * std::pow(decay(s, t1), 2); }, t0, t1, 400);
    }

    double log_kernel(double x, double y, double t) const {
        const double m = decay(t, T) * x;
        const double v = transition_var(t, T);
        return -0.5 * (y - m) * (y - m) / v - 0.5 * std::log(2.0 * M_PI * v);
    }
};

inline LinearSde vp_sde(double beta0) {
    return {[beta0](double) { return -0.5 * beta0; }, [beta0](double) { return beta0; }, 1.0};
}

inline LinearSde ve_sde(double sigmaMax) {
    return {[](double) { return 0.0; }, [sigmaMax](double t) { return 2.0 * t * sigmaMax * sigmaMax; }, 1.0};
}

/// Central finite difference of f at x.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// nPaths x nSteps standard normals whose empirical (centered) covariance is exactly the identity.
inline Eigen::MatrixXd moment_matched_normals(int nPaths, int nSteps, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd z(nPaths, nSteps);
    for (int j = 0; j < nSteps; ++j)
        for (int i = 0; i < nPaths; ++i) z(i, j) = nd(eng);
    z.rowwise() -= z.colwise().mean();
    Eigen::MatrixXd gram = (z.transpose() * z) / double(nPaths);
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    // z <- z L^{-T}
    Eigen::MatrixXd zt = z.transpose();
    llt.matrixL().solveInPlace(zt);
    return zt.transpose();
}

/// Euler-Maruyama simulation of the h-transformed (pinned) forward SDE from x0 at t=0
/// towards y at T; the h drift uses the quadrature transition kernel of `sde`.
/// Returns the empirical moments at each checkpoint.
inline std::vector<Moments> pinned_forward_moments(const LinearSde& sde, double x0, double y, int nPaths,
                                                   int nSteps, const std::vector<double>& checkpoints,
                                                   std::uint64_t seed) {
    const Eigen::MatrixXd z = moment_matched_normals(nPaths, nSteps, seed);
    const double dt = sde.T / nSteps;
    Eigen::VectorXd x = Eigen::VectorXd::Constant(nPaths, x0);
    std::vector<Moments> out;
    std::size_t next = 0;
    for (int k = 0; k < nSteps && next < checkpoints.size(); ++k) {
        const double t = k * dt;
        const double r = sde.decay(t, sde.T);
        const double v = sde.transition_var(t, sde.T);
        const double kk = sde.k(t), g2 = sde.g2(t);
        const Eigen::ArrayXd h = r * (y - r * x.array()) / v;
        x.array() += (kk * x.array() + g2 * h) * dt + std::sqrt(g2 * dt) * z.col(k).array();
        const double tNext = (k + 1) * dt;
        if (std::abs(tNext - checkpoints[next]) < 0.5 * dt) {
            const double m = x.mean();
            const double var = (x.array() - m).square().mean();
            out.push_back({m, var});
            ++next;
        }
    }
    return out;
}

/// Exact Gaussian posterior denoiser for the scalar bridge with x0 | y ~ N(m, v):
/// E[x0 | x_t] where x_t = a y + b x0 + sqrt(c) eps.
struct GaussianPosterior {
    double m;
    double v;

    double mean_x0(double xt, double y, double a, double b, double c) const {
        const double denom = b * b * v + c;
        if (denom <= 0.0) return m;
        return m + (b * v / denom) * (xt - a * y - b * m);
    }
};

/// Exact probability-flow ODE map of a Gaussian marginal: quantiles are transported,
/// so x_t1 = mu_t1 + (sd_t1 / sd_t0) (x_t0 - mu_t0).
inline double gaussian_flow(double x, double mu0, double sd0, double mu1, double sd1) {
    return mu1 + (sd1 / sd0) * (x - mu0);
}

}  // namespace oracle
