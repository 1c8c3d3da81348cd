// Acceptance run: one PASS/FAIL line per criterion. Artifacts (training logs, sweep table,
// per-subject metrics) go to --out. Exit status is 0 only if every selected criterion passes.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sim2p/checkpoint.hpp"
#include "sim2p/experiments.hpp"
#include "sim2p/runtime.hpp"

namespace fs = std::filesystem;
using namespace sim2p;
using bridge::BridgeSchedule;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    outcomes.push_back({id, name, pass, detail});
    std::printf("%s  [%2d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

// ---- 1: pinned forward SDE against the analytic marginal ----

void c1() {
    const auto t0 = Clock::now();
    const double x0 = 0.3, y = 0.9;
    const std::vector<double> cps{0.25, 0.5, 0.75};
    double worstMean = 0, worstVar = 0;
    for (auto [s, sde] : {std::pair{BridgeSchedule::vp(), oracle::vp_sde(BridgeSchedule::vp().beta0)},
                          std::pair{BridgeSchedule::ve(), oracle::ve_sde(BridgeSchedule::ve().sigmaMaxVE)}}) {
        const auto mom = oracle::pinned_forward_moments(sde, x0, y, 10000, 1000, cps, 17);
        for (std::size_t i = 0; i < cps.size(); ++i) {
            const auto k = bridge::bridge_coeffs(s, cps[i]);
            worstMean = std::max(worstMean, rel(mom[i].mean, k.a * y + k.b * x0));
            worstVar = std::max(worstVar, rel(mom[i].var, k.c));
        }
    }
    const double sec = seconds_since(t0);
    report(1, "bridge-marginal oracle", worstMean < 0.02 && worstVar < 0.02 && sec < 10,
           fmt("VP+VE, 10000 paths x 1000 steps: max rel err mean %.2e var %.2e (< 2e-2), %.1f s (< 10 s)", worstMean,
               worstVar, sec));
}

// ---- 2: h-transform and score against finite differences ----

void c2() {
    std::mt19937_64 eng(2);
    std::uniform_real_distribution<double> ux(-1.0, 2.0), ut(0.02, 0.95);
    double worstH = 0, worstS = 0;
    auto err = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); };
    for (auto [s, sde] : {std::pair{BridgeSchedule::vp(), oracle::vp_sde(BridgeSchedule::vp().beta0)},
                          std::pair{BridgeSchedule::ve(), oracle::ve_sde(BridgeSchedule::ve().sigmaMaxVE)}}) {
        for (int i = 0; i < 100; ++i) {
            const double x = ux(eng), y = ux(eng), t = ut(eng), x0 = ux(eng);
            const double h = bridge::h_drift_scalar(s, x, y, t);
            const double fdH = oracle::central_diff([&](double xx) { return sde.log_kernel(xx, y, t); }, x, 1e-4);
            worstH = std::max(worstH, err(h, fdH));
            const auto k = bridge::bridge_coeffs(s, t);
            const Volume xv({1, 1, 1}, x), x0v({1, 1, 1}, x0), yv({1, 1, 1}, y);
            const double score = bridge::score_from_pred(xv, x0v, yv, k)[0];
            const auto logp = [&](double xx) {
                const double m = k.a * y + k.b * x0;
                return -0.5 * (xx - m) * (xx - m) / k.c - 0.5 * std::log(2 * M_PI * k.c);
            };
            worstS = std::max(worstS, err(score, oracle::central_diff(logp, x, 1e-4)));
        }
    }
    report(2, "h-transform and score oracles", worstH < 1e-6 && worstS < 1e-6,
           fmt("100 triples per schedule (VP, VE): max rel err h %.2e, score %.2e (< 1e-6)", worstH, worstS));
}

// ---- 3: endpoint pinning ----

void c3() {
    bool ok = true;
    Rng rng(3);
    for (const auto& s : {BridgeSchedule::vp(), BridgeSchedule::ve()}) {
        const auto k = bridge::bridge_coeffs(s, s.tMax);
        ok &= k.a == 1.0 && k.b == 0.0 && k.c == 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            Volume x0 = Volume::cube(16), y = Volume::cube(16), z = Volume::cube(16);
            for (std::size_t i = 0; i < x0.size(); ++i) {
                x0[i] = rng.uniform();
                y[i] = rng.uniform();
                z[i] = rng.normal();
            }
            ok &= bridge::forward_marginal_sample(k, x0, y, z) == y;
        }
    }
    report(3, "endpoint pinning", ok, "bridge_coeffs(T) == (1,0,0) and forward marginal at T == y bit-exactly (VP, VE, 20 volumes each)");
}

// ---- 4: sampler on the closed-form Gaussian bridge ----

struct GaussianDenoiser {
    BridgeSchedule sched = BridgeSchedule::vp();
    oracle::GaussianPosterior post{0.5, 0.09};
    const BridgeSchedule& schedule() const { return sched; }
    Volume denoise(const Volume& x, double t, const Volume& y, const AuxVector&) const {
        const auto k = bridge::bridge_coeffs(sched, t);
        Volume out(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = post.mean_x0(x[i], y[i], k.a, k.b, k.c);
        return out;
    }
};

double heun_error(int nSteps) {
    GaussianDenoiser d;
    sampler::SamplerConfig cfg;
    cfg.clampPrediction = false;
    const double tA = 0.9, tB = 0.1, y = 0.8;
    auto marg = [&](double t) {
        const auto k = bridge::bridge_coeffs(d.sched, t);
        return std::pair{k.a * y + k.b * d.post.m, std::sqrt(k.b * k.b * d.post.v + k.c)};
    };
    const auto [muA, sdA] = marg(tA);
    const auto [muB, sdB] = marg(tB);
    const double xA = muA + 1.3 * sdA;
    Volume x({1, 1, 1}, xA);
    const Volume yv({1, 1, 1}, y);
    const double h = (tA - tB) / nSteps;
    for (int i = 0; i < nSteps; ++i) x = sampler::heun_step(x, tA - i * h, tA - (i + 1) * h, yv, {}, d, cfg);
    return std::abs(x[0] - oracle::gaussian_flow(xA, muA, sdA, muB, sdB));
}

void c4() {
    const auto t0 = Clock::now();
    GaussianDenoiser d;
    sampler::SamplerConfig cfg;
    cfg.clampPrediction = false;
    cfg.seed = 2024;
    const Volume y({10000, 1, 1}, 0.8);
    const Volume out = sampler::hybrid_sample(y, {}, d, cfg);
    const double m = out.mean();
    double v = 0;
    for (double x : out.values()) v += (x - m) * (x - m);
    v /= double(out.size());
    std::vector<double> lx, ly;
    for (int n : {40, 80, 160, 320}) {
        lx.push_back(std::log(double(n)));
        ly.push_back(std::log(heun_error(n)));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / 4, my = std::accumulate(ly.begin(), ly.end(), 0.0) / 4;
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 4; ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double order = -sxy / sxx;
    const double sec = seconds_since(t0);
    const double em = rel(m, d.post.m), ev = rel(v, d.post.v);
    report(4, "sampler oracle", em < 0.02 && ev < 0.05 && order >= 1.8 && sec < 120,
           fmt("10000 runs at nStep=100: mean rel err %.2e (< 2e-2), var rel err %.2e (< 5e-2); Heun order %.2f (>= 1.8); %.1f s",
               em, ev, order, sec));
}

// ---- 5: gradient check ----

void c5() {
    double worstD = 0, worstF = 0;
    for (auto f : {net::Fusion::Concat, net::Fusion::Add, net::Fusion::Multiply}) {
        auto c = net::NetConfig::micro();
        c.fusion = f;
        net::DenoiserModel<double> md(c, BridgeSchedule::vp(), {}, 1);
        gradcheck::randomize(md, 21);
        worstD = std::max(worstD, gradcheck::check(md, gradcheck::random_problem(4, 22), 1e-7).maxRelErr);
        net::DenoiserModel<float> mf(c, BridgeSchedule::vp(), {}, 1);
        gradcheck::randomize(mf, 23);
        worstF = std::max(worstF, gradcheck::check(mf, gradcheck::random_problem(4, 24), 1e-4).maxRelErr);
    }
    report(5, "gradient check", worstD < 1e-5 && worstF < 1e-3,
           fmt("4^3 micro config, every parameter, 3 fusions: max rel err double %.2e (< 1e-5), single %.2e (< 1e-3)", worstD,
               worstF));
}

// ---- 6: adaLN-Zero identity ----

void c6() {
    const net::DenoiserModel<float> m(net::NetConfig{}, BridgeSchedule::vp(), {}, 6);
    Rng rng(6);
    bool ok = true;
    for (int trial = 0; trial < 50 && ok; ++trial) {
        Volume x = Volume::cube(16), y = Volume::cube(16);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.normal();
            y[i] = rng.uniform();
        }
        AuxVector aux;
        for (std::size_t v = 0; v < kAuxVariables; ++v) {
            aux.values[v] = rng.normal();
            aux.flags[v] = 1.0;
        }
        const double t = rng.uniform(m.schedule().tMin, m.schedule().tMax);
        const double cSkip = bridge::scalings(m.schedule(), m.stats(), t).cSkip;
        const Volume d = m.denoise(x, t, y, aux);
        for (std::size_t i = 0; i < x.size(); ++i) ok &= d[i] == cSkip * x[i];
    }
    report(6, "adaLN-Zero identity", ok, "fresh 16^3 model: D(x_t) == c_skip * x_t bit-exactly on 50 random inputs");
}

// ---- 11: metrics unit suite ----

void c11() {
    bool ok = true;
    Rng rng(11);
    Volume v = Volume::cube(10);
    for (auto& x : v.raw()) x = rng.uniform();
    const auto id = metrics::score_subject(v, v);
    ok &= id.mae == 0.0 && id.mse == 0.0 && id.ssim == 1.0 && std::isinf(id.psnr) && id.psnr > 0;
    const auto h = metrics::mae_mse(Volume({2, 1, 1}, 0.0), Volume({2, 1, 1}, std::vector<double>{1.0, 0.5}));
    ok &= h.mae == 0.75 && h.mse == 0.625;
    ok &= std::abs(metrics::psnr_from_mse(0.01) - 20.0) < 1e-12 && std::abs(metrics::psnr_from_mse(0.001) - 30.0) < 1e-12;
    const double p = metrics::wilcoxon_one_sided({0.1, 0.2, 0.3, 0.4, 0.5});
    ok &= p == 1.0 / 32.0;
    std::vector<metrics::SubjectMetrics> rows;
    const char* cls[] = {"CN", "AD", "FTD"};
    for (int i = 0; i < 41; ++i) {
        metrics::SubjectMetrics m;
        m.id = "s" + std::to_string(i);
        m.classLabel = cls[i % 3];
        m.ageBand = metrics::age_band(55 + 35 * rng.uniform());
        m.gender = i % 2 ? "F" : "M";
        m.mae = rng.uniform();
        m.mse = rng.uniform();
        m.psnr = 20 + 10 * rng.uniform();
        m.ssim = rng.uniform();
        rows.push_back(m);
    }
    const auto rep = metrics::MetricReport::build(rows);
    double worst = 0;
    for (const std::string prefix : {"class=", "age=", "gender="}) {
        double wm = 0, n = 0;
        for (const auto& [k, s] : rep.strata)
            if (k.rfind(prefix, 0) == 0) {
                wm += s.mae.mean * double(s.count);
                n += double(s.count);
            }
        worst = std::max(worst, std::abs(wm / n - rep.overall().mae.mean));
    }
    ok &= worst < 1e-10;
    report(11, "metrics unit suite", ok,
           fmt("identity (MAE 0, SSIM 1, PSNR +inf), hand values, Wilcoxon p=%.5f (1/32), strata gap %.1e (< 1e-10)", p, worst));
}

// ---- 7 onward: trained models on phantom cohorts ----

struct Pipeline {
    fs::path out;
    data::Cohort cohort;
    data::AuxStats auxStats;
    std::vector<train::Example> trainSet, valSet, heldOut;
    train::TrainConfig tc;
    std::optional<train::TrainResult<float>> vp;
    double vpSeconds = 0;

    Pipeline(fs::path dir) : out(std::move(dir)) {
        data::CohortConfig cc;  // 60 subjects, 16^3, public site
        cohort.subjects = data::generate_cohort(cc);
        cohort.split = data::propensity_split(cohort.subjects, {}, 20, cc.seed).split;
        auxStats = data::aux_stats(cohort.of(data::Split::Train));
        trainSet = train::examples(cohort.of(data::Split::Train), auxStats);
        valSet = train::examples(cohort.of(data::Split::Val), auxStats);
        heldOut = valSet;
        for (const auto& e : train::examples(cohort.of(data::Split::Test), auxStats)) heldOut.push_back(e);
        tc.maxIters = 2000;
        tc.seed = 7;
        tc.threads = 1;
    }

    train::TrainResult<float> fit(const BridgeSchedule& s, const std::vector<train::Example>& tr,
                                  const std::vector<train::Example>& va, const std::string& tag) {
        std::printf("       training %s (%zu train / %zu val subjects, %d iterations)\n", tag.c_str(), tr.size(), va.size(),
                    tc.maxIters);
        net::DenoiserModel<float> m(net::NetConfig{}, s, train::stats_of(tr), tc.seed);
        auto r = train::train(m, tr, va, tc, [](const train::LogRow& l) {
            std::printf("         iter %4d  loss(ema) %.4f  val MAE %.5f  SSIM %.4f  %.0f s\n", l.iter, l.trainLossEma, l.valMae,
                        l.valSsim, l.wallClockSec);
            std::fflush(stdout);
        });
        io::write_text(out / (tag + "_log.csv"), train::log_csv(r.log));
        ckpt::save(r.best, out / (tag + ".ckpt"));
        return r;
    }

    const train::TrainResult<float>& vp_model() {
        if (!vp) {
            const auto t0 = Clock::now();
            vp = fit(BridgeSchedule::vp(), trainSet, valSet, "vp");
            vpSeconds = seconds_since(t0);
        }
        return *vp;
    }

    sampler::SamplerConfig val_sampler() const {
        sampler::SamplerConfig s;
        s.nStep = tc.valNStep;
        s.seed = derive_seed(tc.seed, "validation");
        return s;
    }
};

void c7(Pipeline& p) {
    const auto& a = p.vp_model();
    const double base = a.log.front().valMae, fin = a.log.back().valMae;
    std::printf("       rerun for determinism\n");
    const auto b = p.fit(BridgeSchedule::vp(), p.trainSet, p.valSet, "vp_rerun");
    const bool sameLog = train::log_csv(a.log, false) == train::log_csv(b.log, false);
    const bool sameCkpt = ckpt::encode(a.best) == ckpt::encode(b.best);
    const double ratio = fin / base;
    report(7, "training progress", ratio <= 0.7 && sameLog && sameCkpt && p.vpSeconds < 1200,
           fmt("val MAE %.5f -> %.5f after %d iters, ratio %.3f (<= 0.7); rerun log %s, checkpoint %s; %.0f s (< 1200 s)", base,
               fin, p.tc.maxIters, ratio, sameLog ? "identical" : "DIFFERENT", sameCkpt ? "identical" : "DIFFERENT",
               p.vpSeconds));
}

void c8(Pipeline& p) {
    const auto& base = p.vp_model().best;
    data::CohortConfig lc;
    lc.n = 80;
    lc.seed = 8;
    lc.site = data::Site::Local;
    lc.idPrefix = "loc";
    data::Cohort local;
    local.subjects = data::generate_cohort(lc);
    local.split = data::propensity_split(local.subjects, {0.5, 0.2, 0.3}, 20, lc.seed).split;
    train::TrainConfig tc = p.tc;
    tc.valEvery = 500;
    sampler::SamplerConfig sc;  // final evaluation at the default nStep = 100
    sc.seed = 8;

    auto test_set = [&](const train::AdaptConfig& ac) {
        const auto d = train::local_data(local, ac);
        return train::examples(local.of(data::Split::Test), d.auxStats, d.mask);
    };
    train::AdaptConfig full;
    full.ftIters = 500;
    const auto te = test_set(full);
    std::printf("       local cohort: %zu train / %zu val / %zu test; evaluating unadapted base\n",
                local.count(data::Split::Train), local.count(data::Split::Val), te.size());
    const auto evBase = train::evaluate(base, te, sc);
    auto adapt = [&](double fraction) {
        auto ac = full;
        ac.localTrainFraction = fraction;
        std::printf("       adapting on %.0f%% of the local train split\n", 100 * fraction);
        const auto r = train::local_adapt(base, local, ac, tc);
        io::write_text(p.out / fmt("adapt_%03d_log.csv", int(std::lround(100 * fraction))), train::log_csv(r.log));
        return train::evaluate(r.best, test_set(ac), sc);
    };
    const auto ev100 = adapt(1.0);
    const auto ev10 = adapt(0.1);
    std::vector<double> diff;
    for (std::size_t i = 0; i < te.size(); ++i) diff.push_back(evBase.scores[i].mae - ev100.scores[i].mae);
    const double pval = metrics::wilcoxon_one_sided(diff);
    const double mb = evBase.mean_mae(), m100 = ev100.mean_mae(), m10 = ev10.mean_mae();
    const double drift = std::abs(m10 - m100) / m100;
    io::write_text(p.out / "adapt_test_unadapted.csv", experiments::report(te, evBase).csv());
    io::write_text(p.out / "adapt_test_100.csv", experiments::report(te, ev100).csv());
    report(8, "Local-Adapt direction", m100 < mb && pval < 0.05 && te.size() >= 20 && drift < 0.2,
           fmt("local test MAE (n=%zu, nStep=100): unadapted %.5f, adapted %.5f, Wilcoxon p=%.2e (< 0.05); 10%% data %.5f, "
               "%.1f%% from 100%% (< 20%%)",
               te.size(), mb, m100, pval, m10, 100 * drift));
}

void c9(Pipeline& p) {
    const auto& withAux = p.vp_model().best;
    const data::AuxMask none;
    const auto trM = train::examples(p.cohort.of(data::Split::Train), p.auxStats, none);
    const auto vaM = train::examples(p.cohort.of(data::Split::Val), p.auxStats, none);
    const auto masked = p.fit(BridgeSchedule::vp(), trM, vaM, "vp_aux_masked").best;
    const auto sc = p.val_sampler();
    const auto ea = train::evaluate(withAux, p.valSet, sc), em = train::evaluate(masked, vaM, sc);
    std::vector<double> diff;
    for (std::size_t i = 0; i < p.valSet.size(); ++i) diff.push_back(em.scores[i].mae - ea.scores[i].mae);
    const double pval = metrics::wilcoxon_one_sided(diff);
    report(9, "aux-conditioning direction", ea.mean_mae() < em.mean_mae() && pval < 0.05,
           fmt("val MAE (n=%zu): aux-conditioned %.5f, aux-masked %.5f, Wilcoxon p=%.2e (< 0.05)", p.valSet.size(),
               ea.mean_mae(), em.mean_mae(), pval));
}

void c10(Pipeline& p) {
    const auto& m = p.vp_model().best;
    sampler::SamplerConfig sc;
    sc.seed = 10;
    const std::vector<int> steps{10, 20, 30, 50, 80, 100};
    std::printf("       sweeping %zu held-out subjects over nStep 10..100\n", p.heldOut.size());
    const auto rows = experiments::steps_sweep(m, p.heldOut, steps, sc);
    io::write_text(p.out / "steps_sweep.csv", experiments::sweep_csv(rows));
    bool monotone = true;
    std::size_t argmax = 1;
    std::string ssims;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ssims += fmt("%s%d:%.4f", i ? " " : "", rows[i].nStep, rows[i].ssim.mean);
        if (i == 0) continue;
        const double inc = rows[i].ssim.mean - rows[i - 1].ssim.mean;
        monotone &= inc >= 0.0;
        if (inc > rows[argmax].ssim.mean - rows[argmax - 1].ssim.mean) argmax = i;
    }
    const bool earlyPeak = rows[argmax].nStep <= 30;
    const double r1 = rows[1].secondsMedian / rows[0].secondsMedian;  // 10 -> 20
    const double r2 = rows[5].secondsMedian / rows[3].secondsMedian;  // 50 -> 100
    const bool timing = r1 >= 1.8 && r1 <= 2.2 && r2 >= 1.8 && r2 <= 2.2;
    report(10, "steps sweep", monotone && earlyPeak && timing,
           fmt("mean SSIM %s; non-decreasing %s; largest increment ends at nStep=%d (needs <= 30); runtime x%.2f (10->20), "
               "x%.2f (50->100) in [1.8, 2.2]",
               ssims.c_str(), monotone ? "yes" : "NO", rows[argmax].nStep, r1, r2));
}

void c12(Pipeline& p) {
    const auto& vp = p.vp_model();
    const auto ve = p.fit(BridgeSchedule::ve(), p.trainSet, p.valSet, "ve");
    const auto sc = p.val_sampler();
    const auto evp = train::evaluate(vp.best, p.valSet, sc), eve = train::evaluate(ve.best, p.valSet, sc);
    report(12, "VP-vs-VE direction", evp.mean_ssim() > eve.mean_ssim(),
           fmt("val SSIM (n=%zu, nStep=%d, same %d-iteration budget): VP %.4f vs VE %.4f; MAE VP %.5f vs VE %.5f", p.valSet.size(),
               sc.nStep, p.tc.maxIters, evp.mean_ssim(), eve.mean_ssim(), evp.mean_mae(), eve.mean_mae()));
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"acceptance criteria"};
    std::string out = "acceptance_artifacts";
    std::vector<int> only;
    app.add_option("--out", out, "artifact directory");
    app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    std::set<int> sel(only.begin(), only.end());
    auto want = [&](int i) { return sel.empty() || sel.count(i); };
    fs::create_directories(out);
    const auto t0 = Clock::now();

    if (want(1)) c1();
    if (want(2)) c2();
    if (want(3)) c3();
    if (want(4)) c4();
    if (want(5)) c5();
    if (want(6)) c6();
    if (want(11)) c11();
    std::optional<Pipeline> p;
    for (int i : {7, 9, 12, 8, 10})
        if (want(i)) {
            if (!p) p.emplace(out);
            try {
                switch (i) {
                    case 7: c7(*p); break;
                    case 8: c8(*p); break;
                    case 9: c9(*p); break;
                    case 10: c10(*p); break;
                    case 12: c12(*p); break;
                }
            } catch (const std::exception& e) {
                report(i, "criterion", false, std::string("exception: ") + e.what());
            }
        }

    std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    int passed = 0;
    std::printf("\nsummary (%.0f s):\n", seconds_since(t0));
    for (const auto& o : outcomes) {
        std::printf("%s  [%2d] %s\n", o.pass ? "PASS" : "FAIL", o.id, o.name.c_str());
        passed += o.pass;
    }
    std::printf("%d/%zu criteria passed\n", passed, outcomes.size());
    return passed == int(outcomes.size()) ? 0 : 1;
}
