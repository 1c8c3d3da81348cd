#include <gtest/gtest.h>

#include "sim2p/experiments.hpp"

using namespace sim2p;
using namespace sim2p::experiments;

namespace {

struct Setup {
    std::vector<data::Subject> subjects;
    std::vector<train::Example> xs;
    net::DenoiserModel<float> model{[] {
        auto c = net::NetConfig::micro();
        c.volumeSide = 8;
        return c;
    }(), bridge::BridgeSchedule::vp(), {}, 4};
};

Setup setup() {
    Setup s;
    data::CohortConfig cc;
    cc.n = 5;
    cc.volumeSide = 8;
    s.subjects = data::generate_cohort(cc);
    std::vector<const data::Subject*> ptrs;
    for (const auto& x : s.subjects) ptrs.push_back(&x);
    s.xs = train::examples(ptrs, data::aux_stats(ptrs));
    // move the zero-initialized heads away from zero so aux actually reaches the output
    Rng rng(9);
    for (auto& p : s.model.parameters()) p += float(0.05 * rng.normal());
    return s;
}

sampler::SamplerConfig quick() {
    sampler::SamplerConfig c;
    c.nStep = 4;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(AuxSensitivity, KeepingEverythingGivesZeroDeltas) {
    const auto s = setup();
    std::vector<std::string> all;
    for (auto n : kAuxNames) all.emplace_back(n);
    const auto r = aux_sensitivity(s.model, s.xs, all, quick());
    EXPECT_EQ(r.maeDelta, 0.0);
    EXPECT_EQ(r.psnrDelta, 0.0);
    EXPECT_EQ(r.ssimDelta, 0.0);
}

TEST(AuxSensitivity, DeterministicAndSensitive) {
    const auto s = setup();
    const auto a = aux_sensitivity(s.model, s.xs, {"mmse"}, quick());
    const auto b = aux_sensitivity(s.model, s.xs, {"mmse"}, quick(), 2);
    EXPECT_EQ(a.maeDelta, b.maeDelta);
    EXPECT_EQ(a.ablated.predictions, b.ablated.predictions);
    EXPECT_NE(a.maeDelta, 0.0);
    EXPECT_THROW(aux_sensitivity(s.model, s.xs, {"iq"}, quick()), ConfigError);
}

TEST(AuxSensitivity, OthersSetToMeanAndPresent) {
    AuxVector a;
    a.values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13};
    a.flags.fill(0.0);
    a.flags[3] = 1.0;
    const auto k = keep_only(a, data::aux_mask_of({"mmse"}));
    for (std::size_t v = 0; v < kAuxVariables; ++v) {
        EXPECT_EQ(k.values[v], v == 3 ? 4.0 : 0.0);
        EXPECT_EQ(k.flags[v], 1.0);
    }
}

TEST(StepsSweep, SingletonListGivesOneRow) {
    const auto s = setup();
    const auto rows = steps_sweep(s.model, s.xs, {6}, quick());
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].nStep, 6);
    EXPECT_EQ(rows[0].ssim.n, s.xs.size());
    EXPECT_GT(rows[0].secondsMedian, 0.0);
    EXPECT_THROW(steps_sweep(s.model, s.xs, {}, quick()), ConfigError);
    const auto csv = sweep_csv(rows);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(StepsSweep, DefaultList) {
    EXPECT_EQ(default_step_list(), (std::vector<int>{10, 20, 30, 50, 80, 100, 120, 150, 180}));
}

TEST(Report, StrataFromSubjects) {
    const auto s = setup();
    const auto ev = train::evaluate(s.model, s.xs, quick());
    const auto rep = report(s.xs, ev);
    EXPECT_EQ(rep.overall().count, s.xs.size());
    std::size_t classes = 0;
    for (const auto& [k, st] : rep.strata)
        if (k.rfind("class=", 0) == 0) classes += st.count;
    EXPECT_EQ(classes, s.xs.size());
    EXPECT_EQ(rep.strata.count("gender="), 0u);
}

TEST(Evaluate, IdenticalPairsScoreZero) {
    const auto s = setup();
    auto xs = s.xs;
    for (auto& e : xs) e.x0 = e.y;
    struct Echo {
        bridge::BridgeSchedule sched = bridge::BridgeSchedule::vp();
        const bridge::BridgeSchedule& schedule() const { return sched; }
        Volume denoise(const Volume&, double, const Volume& y, const AuxVector&) const { return y; }
    } echo;
    // the final denoise returns y exactly, so every error metric vanishes
    sampler::SamplerConfig c = quick();
    for (const auto& e : xs) {
        const Volume out = sampler::hybrid_sample(*e.y, e.aux, echo, c);
        EXPECT_EQ(metrics::mae_mse(out, *e.x0).mae, 0.0);
    }
}
