#pragma once

// Evaluation reports, the per-variable auxiliary sensitivity ablation and the steps sweep.

#include <algorithm>
#include <string>
#include <vector>

#include "sim2p/training.hpp"

namespace sim2p::experiments {

using train::Evaluation;
using train::Example;

/// Per-subject rows with strata taken from each example's subject (when attached).
inline metrics::MetricReport report(const std::vector<Example>& xs, const Evaluation& ev) {
    std::vector<metrics::SubjectMetrics> rows = ev.scores;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto* s = xs[i].subject;
        if (!s) continue;
        rows[i].classLabel = data::to_string(s->label);
        if (const auto age = s->aux("age")) rows[i].ageBand = metrics::age_band(*age);
        if (const auto g = s->aux("gender")) rows[i].gender = *g > 0.5 ? "F" : "M";
    }
    return metrics::MetricReport::build(std::move(rows));
}

/// Keeps the variables in `keep` at their encoded values; every other variable is set to the
/// training mean (standardized 0) and marked present.
inline AuxVector keep_only(const AuxVector& a, const data::AuxMask& keep) {
    AuxVector out = a;
    for (std::size_t v = 0; v < kAuxVariables; ++v)
        if (!keep.test(v)) {
            out.values[v] = 0.0;
            out.flags[v] = 1.0;
        }
    return out;
}

struct SensitivityResult {
    std::vector<std::string> kept;
    double maeDelta = 0, psnrDelta = 0, ssimDelta = 0;  // kept minus all-variables baseline
    Evaluation baseline, ablated;
};

template <class T>
SensitivityResult aux_sensitivity(const net::DenoiserModel<T>& model, const std::vector<Example>& xs,
                                  const std::vector<std::string>& keepNames, const sampler::SamplerConfig& cfg,
                                  int threads = 1, const Evaluation* baseline = nullptr) {
    const auto keep = data::aux_mask_of(keepNames);
    auto ablatedSet = xs;
    for (auto& e : ablatedSet) e.aux = keep_only(e.aux, keep);
    SensitivityResult r;
    r.kept = keepNames;
    r.baseline = baseline ? *baseline : train::evaluate(model, xs, cfg, threads);
    r.ablated = train::evaluate(model, ablatedSet, cfg, threads);
    r.maeDelta = r.ablated.mean_mae() - r.baseline.mean_mae();
    r.psnrDelta = r.ablated.mean_psnr() - r.baseline.mean_psnr();
    r.ssimDelta = r.ablated.mean_ssim() - r.baseline.mean_ssim();
    return r;
}

inline std::vector<int> default_step_list() { return {10, 20, 30, 50, 80, 100, 120, 150, 180}; }

struct SweepRow {
    int nStep = 0;
    metrics::Summary mae, mse, psnr, ssim, seconds;
    double secondsMedian = 0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// One evaluation per step count. Subjects run sequentially so the per-subject wall clock is
/// not distorted by sharing cores; one untimed sample first warms caches and the allocator.
template <class T>
std::vector<SweepRow> steps_sweep(const net::DenoiserModel<T>& model, const std::vector<Example>& xs,
                                  const std::vector<int>& stepList, sampler::SamplerConfig cfg) {
    if (stepList.empty()) throw ConfigError("eval.stepList must not be empty");
    std::vector<SweepRow> rows;
    if (!xs.empty()) {
        auto w = cfg;
        w.nStep = *std::min_element(stepList.begin(), stepList.end());
        sampler::hybrid_sample(*xs[0].y, xs[0].aux, model, w);
    }
    // subjects outer, steps inner: slow drift of the machine hits every nStep alike
    std::vector<std::vector<metrics::SubjectMetrics>> scores(stepList.size());
    std::vector<std::vector<double>> seconds(stepList.size());
    for (const auto& x : xs)
        for (std::size_t k = 0; k < stepList.size(); ++k) {
            cfg.nStep = stepList[k];
            const auto ev = train::evaluate(model, {x}, cfg, 1);
            scores[k].push_back(ev.scores[0]);
            seconds[k].push_back(ev.seconds[0]);
        }
    for (std::size_t k = 0; k < stepList.size(); ++k) {
        std::vector<double> a, b, c, d;
        for (const auto& m : scores[k]) {
            a.push_back(m.mae);
            b.push_back(m.mse);
            c.push_back(m.psnr);
            d.push_back(m.ssim);
        }
        rows.push_back({stepList[k], metrics::summarize(a), metrics::summarize(b), metrics::summarize(c),
                        metrics::summarize(d), metrics::summarize(seconds[k]), median(seconds[k])});
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream o;
    o.precision(10);
    o << "nStep,maeMean,maeSd,mseMean,mseSd,psnrMean,psnrSd,ssimMean,ssimSd,secondsMean,secondsMedian\n";
    for (const auto& r : rows)
        o << r.nStep << ',' << r.mae.mean << ',' << r.mae.sd << ',' << r.mse.mean << ',' << r.mse.sd << ','
          << r.psnr.mean << ',' << r.psnr.sd << ',' << r.ssim.mean << ',' << r.ssim.sd << ',' << r.seconds.mean << ',' << r.secondsMedian << '\n';
    return o.str();
}

}  // namespace sim2p::experiments
