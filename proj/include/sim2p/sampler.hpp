#pragma once

// Reverse-time bridge sampling: warped time grid, Euler-Maruyama steps on the
// reverse SDE, Heun steps on the probability-flow ODE, and the hybrid loop
// that interleaves them.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "sim2p/aux_vector.hpp"
#include "sim2p/bridge.hpp"
#include "sim2p/error.hpp"
#include "sim2p/rng.hpp"
#include "sim2p/volume.hpp"

namespace sim2p::sampler {

using bridge::BridgeSchedule;

/// Anything that predicts x0 from (x_t, t, y, aux) under a known schedule.
template <class M>
concept Denoiser = requires(const M& m, const Volume& x, double t, const Volume& y, const AuxVector& aux) {
    { m.denoise(x, t, y, aux) } -> std::convertible_to<Volume>;
    { m.schedule() } -> std::convertible_to<const BridgeSchedule&>;
};

struct SamplerConfig {
    int nStep = 100;
    double rho = 7.0;
    double emFraction = 0.3;
    std::uint64_t seed = 0;
    // predictions are clamped before score conversion; oracle tests switch this off
    bool clampPrediction = true;
    double clampLo = -0.1;
    double clampHi = 1.1;
    // the drift is singular at T, so integration starts at T - startOffset from x = y
    double startOffset = 1e-4;

    void validate() const {
        if (nStep < 2) throw ConfigError("sampler.nStep must be >= 2");
        if (!(rho > 0.0)) throw ConfigError("sampler.rho must be positive");
        if (!(emFraction >= 0.0 && emFraction < 1.0)) throw ConfigError("sampler.emFraction must lie in [0, 1)");
        if (!(startOffset >= 0.0)) throw ConfigError("sampler.startOffset must be non-negative");
    }
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Volume> states;  // empty unless retention was requested
    Volume finalState;           // state at times.back()
    Volume output;               // denoised prediction at the final time
};

/// nStep times from tMax down to tMin on the rho-warped grid.
inline std::vector<double> make_timesteps(const SamplerConfig& cfg, double tMin, double tMax) {
    if (cfg.nStep < 2) throw DomainError("make_timesteps: nStep must be >= 2");
    const double inv = 1.0 / cfg.rho;
    const double hi = std::pow(tMax, inv), lo = std::pow(tMin, inv);
    std::vector<double> ts(static_cast<std::size_t>(cfg.nStep));
    const double last = double(cfg.nStep - 1);
    for (int i = 0; i < cfg.nStep; ++i) ts[i] = std::pow(hi + (double(i) / last) * (lo - hi), cfg.rho);
    ts.front() = tMax;
    ts.back() = tMin;
    return ts;
}

/// f(x,t) - g(t)^2 (score - h)
inline Volume reverse_drift(const Volume& x, double t, const Volume& y, const Volume& score, const BridgeSchedule& s) {
    require_same_shape(x, score, "reverse_drift");
    const Volume h = bridge::h_drift(s, x, y, t);
    const double fk = bridge::dlogalpha_dt(s, t);
    const double g2 = bridge::diffusion_sq(s, t);
    Volume out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fk * x[i] - g2 * (score[i] - h[i]);
    return out;
}

/// Probability-flow drift f(x,t) - g(t)^2 (score/2 - h).
inline Volume ode_drift(const Volume& x, double t, const Volume& y, const Volume& score, const BridgeSchedule& s) {
    require_same_shape(x, score, "ode_drift");
    const Volume h = bridge::h_drift(s, x, y, t);
    const double fk = bridge::dlogalpha_dt(s, t);
    const double g2 = bridge::diffusion_sq(s, t);
    Volume out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fk * x[i] - g2 * (0.5 * score[i] - h[i]);
    return out;
}

template <Denoiser M>
Volume predict_x0(const M& model, const Volume& x, double t, const Volume& y, const AuxVector& aux,
                  const SamplerConfig& cfg) {
    Volume d = model.denoise(x, t, y, aux);
    if (cfg.clampPrediction) d = clamped(std::move(d), cfg.clampLo, cfg.clampHi);
    return d;
}

template <Denoiser M>
Volume model_score(const M& model, const Volume& x, double t, const Volume& y, const AuxVector& aux,
                   const SamplerConfig& cfg) {
    const Volume x0hat = predict_x0(model, x, t, y, aux, cfg);
    return bridge::score_from_pred(x, x0hat, y, bridge::bridge_coeffs(model.schedule(), t));
}

/// Euler-Maruyama step of the reverse SDE with caller-supplied standard normal increments.
template <Denoiser M>
Volume em_step_with_noise(const Volume& x, double tFrom, double tTo, const Volume& y, const AuxVector& aux,
                          const M& model, const Volume& xi, const SamplerConfig& cfg) {
    if (tTo == tFrom) return x;
    if (tTo > tFrom) throw DomainError("em_step: tTo must not exceed tFrom");
    const auto& s = model.schedule();
    const Volume score = model_score(model, x, tFrom, y, aux, cfg);
    const Volume drift = reverse_drift(x, tFrom, y, score, s);
    const double dt = tTo - tFrom;
    const double diff = std::sqrt(bridge::diffusion_sq(s, tFrom)) * std::sqrt(-dt);
    Volume out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + drift[i] * dt + diff * xi[i];
    return out;
}

template <Denoiser M>
Volume em_step(const Volume& x, double tFrom, double tTo, const Volume& y, const AuxVector& aux, const M& model,
               Rng& rng, const SamplerConfig& cfg) {
    if (tTo == tFrom) return x;
    const Volume xi = standard_normal_like(x, rng);
    return em_step_with_noise(x, tFrom, tTo, y, aux, model, xi, cfg);
}

/// Second-order Heun step of the probability-flow ODE.
template <Denoiser M>
Volume heun_step(const Volume& x, double tFrom, double tTo, const Volume& y, const AuxVector& aux, const M& model,
                 const SamplerConfig& cfg) {
    if (tTo == tFrom) return x;
    if (tTo > tFrom) throw DomainError("heun_step: tTo must not exceed tFrom");
    const auto& s = model.schedule();
    const double dt = tTo - tFrom;
    const Volume d1 = ode_drift(x, tFrom, y, model_score(model, x, tFrom, y, aux, cfg), s);
    Volume pred(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) pred[i] = x[i] + d1[i] * dt;
    const Volume d2 = ode_drift(pred, tTo, y, model_score(model, pred, tTo, y, aux, cfg), s);
    Volume out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + 0.5 * (d1[i] + d2[i]) * dt;
    return out;
}

namespace detail {
inline void check_finite(const Volume& x, std::size_t step) {
    if (!x.all_finite())
        throw DivergenceError("diverged sampling: non-finite state at step " + std::to_string(step));
}
}  // namespace detail

/// Runs the hybrid sampler from x = y and records the trajectory.
template <Denoiser M>
Trajectory sample_trajectory(const Volume& y, const AuxVector& aux, const M& model, const SamplerConfig& cfg,
                             Rng& rng, bool keepStates = false) {
    cfg.validate();
    const auto& s = model.schedule();
    Trajectory tr;
    tr.times = make_timesteps(cfg, s.tMin, s.tMax - cfg.startOffset);
    Volume x = y;
    if (keepStates) tr.states.push_back(x);
    const std::size_t intervals = tr.times.size() - 1;
    for (std::size_t i = 0; i < intervals; ++i) {
        const double t0 = tr.times[i], t1 = tr.times[i + 1];
        const bool last = (i + 1 == intervals);
        double tHeun = t0;
        if (!last && cfg.emFraction > 0.0) {
            tHeun = t0 - cfg.emFraction * (t0 - t1);
            x = em_step(x, t0, tHeun, y, aux, model, rng, cfg);
            detail::check_finite(x, i);
        }
        x = heun_step(x, tHeun, t1, y, aux, model, cfg);
        detail::check_finite(x, i);
        if (keepStates) tr.states.push_back(x);
    }
    tr.output = predict_x0(model, x, tr.times.back(), y, aux, cfg);
    detail::check_finite(tr.output, intervals);
    tr.finalState = std::move(x);
    return tr;
}

template <Denoiser M>
Volume hybrid_sample(const Volume& y, const AuxVector& aux, const M& model, const SamplerConfig& cfg) {
    Rng rng(cfg.seed);
    return sample_trajectory(y, aux, model, cfg, rng).output;
}

/// Seed of the per-subject stream so serial and parallel sampling agree.
inline std::uint64_t subject_seed(std::uint64_t seed, std::string_view subjectId) { return derive_seed(seed, subjectId); }

}  // namespace sim2p::sampler
