#pragma once

// Bridge denoising objective, Adam, validation-driven model selection and Local-Adapt.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sim2p/cohort.hpp"
#include "sim2p/dataset_io.hpp"
#include "sim2p/metrics.hpp"
#include "sim2p/network.hpp"
#include "sim2p/parallel.hpp"
#include "sim2p/sampler.hpp"

namespace sim2p::train {

using net::DenoiserModel;

struct TrainConfig {
    double lr = 1e-4;
    double weightDecay = 0.0;
    int batchSize = 1;
    int maxIters = 2000;
    int valEvery = 1000;
    int valNStep = 30;
    double lossEmaDecay = 0.99;
    std::uint64_t seed = 1;
    int threads = 1;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
        if (weightDecay != 0.0) throw ConfigError("train.weightDecay must be 0");
        if (batchSize < 1) throw ConfigError("train.batchSize must be at least 1");
        if (maxIters < 0) throw ConfigError("train.maxIters must be non-negative");
        if (valEvery < 1) throw ConfigError("train.valEvery must be at least 1");
        if (maxIters > 0 && valEvery > maxIters) throw ConfigError("train.valEvery must not exceed train.maxIters");
        if (valNStep < 2) throw ConfigError("train.valNStep must be at least 2");
        if (!(lossEmaDecay >= 0.0 && lossEmaDecay < 1.0)) throw ConfigError("train.lossEmaDecay must lie in [0, 1)");
    }
};

// ---- objective ----

struct LossResult {
    double loss = 0;
    double weight = 0;
    Volume xt;
    Volume prediction;
};

/// w(t) mean((D(x_t) - x0)^2) with x_t drawn from the bridge marginal using `noise`.
template <class T>
LossResult compute_loss(const DenoiserModel<T>& model, const Volume& x0, const Volume& y, const AuxVector& aux,
                        double t, const Volume& noise, const std::string& subjectId = "") {
    bridge::detail::check_time(model.schedule(), t, "compute_loss");
    LossResult r;
    r.xt = bridge::forward_marginal_sample(bridge::bridge_coeffs(model.schedule(), t), x0, y, noise);
    r.weight = bridge::loss_weight(bridge::scalings(model.schedule(), model.stats(), t));
    r.prediction = model.denoise(r.xt, t, y, aux);
    r.loss = r.weight * metrics::mae_mse(r.prediction, x0).mse;
    if (!std::isfinite(r.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at t=" << t << " for subject '" << subjectId << "'";
        throw DivergenceError(msg.str());
    }
    return r;
}

// ---- optimizer ----

struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& st, double lr) {
    if (params.size() != grads.size() || st.m.size() != params.size())
        throw ShapeError("adam_step: parameter, gradient and state sizes differ");
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = double(grads[i]);
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        const double mh = st.m[i] / c1, vh = st.v[i] / c2;
        params[i] = T(double(params[i]) - lr * mh / (std::sqrt(vh) + st.eps));
    }
}

// ---- datasets ----

struct Example {
    std::string id;
    const Volume* x0;  // target function volume
    const Volume* y;   // source structure volume
    AuxVector aux;
    const data::Subject* subject = nullptr;
};

/// Pairs from one split of a cohort, aux encoded with the given stats and mask.
inline std::vector<Example> examples(const std::vector<const data::Subject*>& subjects, const data::AuxStats& st,
                                     const data::AuxMask& keep = data::all_aux()) {
    std::vector<Example> out;
    for (const auto* s : subjects) out.push_back({s->id, &s->function, &s->structure, data::aux_encode(s->auxRaw, st, keep), s});
    return out;
}

inline bridge::DataStats stats_of(const std::vector<Example>& xs) {
    std::vector<std::pair<const Volume*, const Volume*>> pairs;
    for (const auto& e : xs) pairs.push_back({e.x0, e.y});
    return bridge::estimate_stats(pairs);
}

// ---- evaluation ----

struct Evaluation {
    std::vector<Volume> predictions;
    std::vector<metrics::SubjectMetrics> scores;
    std::vector<double> seconds;  // wall clock per subject

    double mean_mae() const {
        double s = 0;
        for (const auto& m : scores) s += m.mae;
        return scores.empty() ? 0.0 : s / double(scores.size());
    }
    double mean_psnr() const {
        double s = 0, n = 0;
        for (const auto& m : scores)
            if (std::isfinite(m.psnr)) {
                s += m.psnr;
                ++n;
            }
        return n > 0 ? s / n : metrics::kPsnrInf;
    }
    double mean_ssim() const {
        double s = 0;
        for (const auto& m : scores) s += m.ssim;
        return scores.empty() ? 0.0 : s / double(scores.size());
    }
    std::vector<double> maes() const {
        std::vector<double> v;
        for (const auto& m : scores) v.push_back(m.mae);
        return v;
    }
};

/// Samples every example with a per-subject seed derived from (cfg.seed, id) and scores it.
template <class T>
Evaluation evaluate(const DenoiserModel<T>& model, const std::vector<Example>& xs, const sampler::SamplerConfig& cfg,
                    int threads = 1) {
    Evaluation ev;
    ev.predictions.resize(xs.size());
    ev.scores.resize(xs.size());
    ev.seconds.resize(xs.size());
    parallel_for(xs.size(), threads, [&](std::size_t i) {
        auto c = cfg;
        c.seed = sampler::subject_seed(cfg.seed, xs[i].id);
        const auto t0 = std::chrono::steady_clock::now();
        ev.predictions[i] = sampler::hybrid_sample(*xs[i].y, xs[i].aux, model, c);
        ev.seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ev.scores[i] = metrics::score_subject(ev.predictions[i], *xs[i].x0);
        ev.scores[i].id = xs[i].id;
    });
    return ev;
}

// ---- training loop ----

struct LogRow {
    int iter = 0;
    double trainLossEma = 0;
    double valMae = 0, valPsnr = 0, valSsim = 0;
    double wallClockSec = 0;
};

inline std::string log_csv(const std::vector<LogRow>& rows, bool withClock = true) {
    std::ostringstream o;
    o.precision(17);
    o << "iter,trainLossEMA,valMAE,valPSNR,valSSIM" << (withClock ? ",wallClockSec" : "") << '\n';
    for (const auto& r : rows) {
        o << r.iter << ',' << r.trainLossEma << ',' << r.valMae << ',' << r.valPsnr << ',' << r.valSsim;
        if (withClock) o << ',' << r.wallClockSec;
        o << '\n';
    }
    return o.str();
}

template <class T>
struct TrainResult {
    DenoiserModel<T> best;
    int bestIter = 0;
    double bestValMae = 0;
    std::vector<LogRow> log;
    bool diverged = false;
    std::string divergenceMessage;
};

/// Adam on the bridge objective with uniform t. Validation runs at iteration 0, every
/// valEvery iterations and at the end; the lowest validation MAE wins, earlier on ties.
template <class T>
TrainResult<T> train(DenoiserModel<T> model, const std::vector<Example>& trainSet, const std::vector<Example>& valSet,
                     const TrainConfig& cfg, const std::function<void(const LogRow&)>& onLog = {}) {
    cfg.validate();
    if (trainSet.empty()) throw ConfigError("training split is empty");
    if (valSet.empty()) throw ConfigError("validation split is empty");
    const auto start = std::chrono::steady_clock::now();
    const auto& sched = model.schedule();
    Rng rng(derive_seed(cfg.seed, "train"));
    AdamState adam(model.parameter_count());
    nn::ParamVector<T> grad(model.parameter_count());
    sampler::SamplerConfig vcfg;
    vcfg.nStep = cfg.valNStep;
    vcfg.seed = derive_seed(cfg.seed, "validation");

    TrainResult<T> res{model, 0, 0.0, {}, false, {}};
    double ema = 0;
    bool haveEma = false;
    auto validate_at = [&](int iter) {
        const auto ev = evaluate(model, valSet, vcfg, cfg.threads);
        LogRow row{iter, haveEma ? ema : 0.0, ev.mean_mae(), ev.mean_psnr(), ev.mean_ssim(),
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
        res.log.push_back(row);
        if (onLog) onLog(row);
        if (res.log.size() == 1 || row.valMae < res.bestValMae) {
            res.best = model;
            res.bestIter = iter;
            res.bestValMae = row.valMae;
        }
    };

    validate_at(0);
    for (int it = 1; it <= cfg.maxIters; ++it) {
        std::fill(grad.begin(), grad.end(), T(0));
        double loss = 0;
        try {
            for (int b = 0; b < cfg.batchSize; ++b) {
                const auto& ex = trainSet[rng.index(trainSet.size())];
                const double t = rng.uniform(sched.tMin, sched.tMax);
                const Volume noise = standard_normal_like(*ex.x0, rng);
                const Volume xt = bridge::forward_marginal_sample(bridge::bridge_coeffs(sched, t), *ex.x0, *ex.y, noise);
                const double w = bridge::loss_weight(bridge::scalings(sched, model.stats(), t)) / cfg.batchSize;
                const double l = model.loss_and_gradient(xt, t, *ex.y, ex.aux, *ex.x0, w, grad);
                if (!std::isfinite(l)) {
                    std::ostringstream msg;
                    msg << "non-finite loss at iteration " << it << ", t=" << t << ", subject '" << ex.id << "'";
                    throw DivergenceError(msg.str());
                }
                loss += l;
            }
            for (T g : grad)
                if (!std::isfinite(double(g)))
                    throw DivergenceError("non-finite gradient at iteration " + std::to_string(it));
        } catch (const DivergenceError& e) {
            res.diverged = true;
            res.divergenceMessage = e.what();
            return res;
        }
        adam_step<T>(model.parameters(), grad, adam, cfg.lr);
        ema = haveEma ? cfg.lossEmaDecay * ema + (1.0 - cfg.lossEmaDecay) * loss : loss;
        haveEma = true;
        if (it % cfg.valEvery == 0 || it == cfg.maxIters) validate_at(it);
    }
    return res;
}

// ---- Local-Adapt ----

inline std::vector<std::string> default_adapt_aux() {
    return {"age", "gender", "seg_csf", "seg_gm", "seg_wm", "seg_hippo_l", "seg_hippo_r", "seg_ent_l", "seg_ent_r"};
}

struct AdaptConfig {
    double localTrainFraction = 1.0;
    std::vector<std::string> auxSubset = default_adapt_aux();
    int ftIters = 500;

    void validate() const {
        if (!(localTrainFraction > 0.0 && localTrainFraction <= 1.0))
            throw ConfigError("adapt.localTrainFraction must lie in (0, 1]");
        if (ftIters < 0) throw ConfigError("adapt.ftIters must be non-negative");
        for (const auto& n : auxSubset) aux_index(n);
    }
};

/// Aux encoding used on the local site: stats from the (used part of the) local train split,
/// variables outside the subset masked as missing.
struct LocalData {
    std::vector<const data::Subject*> trainSubjects;
    data::AuxStats auxStats;
    data::AuxMask mask;
};

inline LocalData local_data(const data::Cohort& local, const AdaptConfig& cfg) {
    cfg.validate();
    LocalData d;
    const auto all = local.of(data::Split::Train);
    if (all.empty()) throw ConfigError("local cohort has no training subjects");
    const auto used = std::size_t(std::ceil(cfg.localTrainFraction * double(all.size()) - 1e-9));
    d.trainSubjects.assign(all.begin(), all.begin() + std::max<std::size_t>(1, used));
    d.auxStats = data::aux_stats(d.trainSubjects);
    d.mask = data::aux_mask_of(cfg.auxSubset);
    return d;
}

/// Continues training a base model on the local train split; selects on local validation MAE.
/// Continues training a base model on the local train split for ftIters steps; lr, seed,
/// validation cadence and threads come from `tc`. Selects on local validation MAE.
template <class T>
TrainResult<T> local_adapt(const DenoiserModel<T>& base, const data::Cohort& local, const AdaptConfig& cfg,
                           TrainConfig tc, const std::function<void(const LogRow&)>& onLog = {}) {
    const auto d = local_data(local, cfg);
    tc.maxIters = cfg.ftIters;
    tc.valEvery = std::max(1, std::min(tc.valEvery, cfg.ftIters));
    return train(base, examples(d.trainSubjects, d.auxStats, d.mask),
                 examples(local.of(data::Split::Val), d.auxStats, d.mask), tc, onLog);
}

}  // namespace sim2p::train
