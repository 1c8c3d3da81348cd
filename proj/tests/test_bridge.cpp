#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "oracles.hpp"
#include "sim2p/bridge.hpp"

using namespace sim2p;
using namespace sim2p::bridge;

namespace {
Volume scalar(double v) { return Volume({1, 1, 1}, v); }
}  // namespace

TEST(ScheduleEval, VpClosedFormAtHorizon) {
    const auto v = schedule_eval(BridgeSchedule::vp(2.0), 1.0);
    EXPECT_NEAR(v.alpha, 0.36787944117144233, 1e-14);
    EXPECT_NEAR(v.sigma, 0.9298734950321937, 1e-14);
    EXPECT_NEAR(v.snr, 0.15651764274966568, 1e-14);
}

TEST(ScheduleEval, VpNearZeroApproachesPureSignal) {
    auto s = BridgeSchedule::vp(2.0);
    s.tMin = 1e-14;
    const auto v = schedule_eval(s, 1e-14);
    EXPECT_NEAR(v.alpha, 1.0, 1e-12);
    EXPECT_NEAR(v.sigma, 0.0, 1e-6);
    EXPECT_EQ(v.snr, kSnrCeiling);
}

TEST(ScheduleEval, VeLinear) {
    const auto v = schedule_eval(BridgeSchedule::ve(1.0), 0.5);
    EXPECT_EQ(v.alpha, 1.0);
    EXPECT_DOUBLE_EQ(v.sigma, 0.5);
    EXPECT_DOUBLE_EQ(v.snr, 4.0);
}

TEST(ScheduleEval, OutsideDomainThrows) {
    const auto s = BridgeSchedule::vp();
    EXPECT_THROW(schedule_eval(s, 0.0), DomainError);
    EXPECT_THROW(schedule_eval(s, 1.5), DomainError);
}

TEST(ScheduleEval, SnrStrictlyDecreasing) {
    for (const auto& s : {BridgeSchedule::vp(), BridgeSchedule::ve()}) {
        double prev = INFINITY;
        for (int i = 0; i <= 1000; ++i) {
            const double t = s.tMin + (s.tMax - s.tMin) * i / 1000.0;
            const double snr = schedule_eval(s, t).snr;
            EXPECT_LT(snr, prev) << "t=" << t;
            prev = snr;
        }
    }
}

TEST(BridgeCoeffs, PinnedAtHorizon) {
    for (const auto& s : {BridgeSchedule::vp(), BridgeSchedule::ve()}) {
        const auto k = bridge_coeffs(s, s.tMax);
        EXPECT_EQ(k.a, 1.0);
        EXPECT_EQ(k.b, 0.0);
        EXPECT_EQ(k.c, 0.0);
    }
}

TEST(BridgeCoeffs, PinnedToSourceNearZero) {
    auto s = BridgeSchedule::vp(2.0);
    s.tMin = 1e-12;
    const auto k = bridge_coeffs(s, 1e-12);
    EXPECT_NEAR(k.a, 0.0, 1e-10);
    EXPECT_NEAR(k.b, 1.0, 1e-10);
    EXPECT_NEAR(k.c, 0.0, 1e-10);
}

TEST(BridgeCoeffs, VpMidpointMatchesHandComposition) {
    // alpha, sigma, SNR evaluated by hand at t=0.5 and t=1, then composed
    const auto k = bridge_coeffs(BridgeSchedule::vp(2.0), 0.5);
    EXPECT_NEAR(k.a, 0.443409441985037, 1e-12);
    EXPECT_NEAR(k.b, 0.4434094419850369, 1e-12);
    EXPECT_NEAR(k.c, 0.4621171572600097, 1e-12);
}

TEST(BridgeCoeffs, VarianceNonNegative) {
    for (const auto& s : {BridgeSchedule::vp(), BridgeSchedule::ve()})
        for (int i = 0; i <= 200; ++i) EXPECT_GE(bridge_coeffs(s, s.tMin + (s.tMax - s.tMin) * i / 200.0).c, 0.0);
}

TEST(ForwardMarginal, ZeroNoiseIsMean) {
    const auto k = bridge_coeffs(BridgeSchedule::vp(), 0.3);
    const auto out = forward_marginal_sample(k, scalar(0.2), scalar(0.7), scalar(0.0));
    EXPECT_EQ(out[0], k.a * 0.7 + k.b * 0.2);
}

TEST(ForwardMarginal, HorizonReturnsSourceBitExactly) {
    const auto s = BridgeSchedule::vp();
    Volume y = Volume::cube(3), x0 = Volume::cube(3), noise = Volume::cube(3);
    std::mt19937_64 eng(3);
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = nd(eng);
        x0[i] = nd(eng);
        noise[i] = nd(eng);
    }
    y[0] = -0.0;
    const auto out = forward_marginal_sample(bridge_coeffs(s, s.tMax), x0, y, noise);
    ASSERT_EQ(out.size(), y.size());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(std::signbit(out[i]), std::signbit(y[i]));
    EXPECT_EQ(std::memcmp(out.raw().data(), y.raw().data(), y.size() * sizeof(double)), 0);
}

TEST(ForwardMarginal, ScalarExample) {
    const auto k = bridge_coeffs(BridgeSchedule::vp(2.0), 0.5);
    const auto out = forward_marginal_sample(k, scalar(0.0), scalar(1.0), scalar(1.0));
    EXPECT_NEAR(out[0], 0.443409441985037 + 0.6797919955839504, 1e-12);
}

TEST(ForwardMarginal, ShapeMismatchThrows) {
    const auto k = bridge_coeffs(BridgeSchedule::vp(), 0.5);
    EXPECT_THROW(forward_marginal_sample(k, Volume::cube(2), Volume::cube(3), Volume::cube(3)), ShapeError);
}

TEST(HDrift, ZeroOnNoiselessPath) {
    const auto s = BridgeSchedule::vp();
    const double t = 0.4, y = 0.8;
    const double x = schedule_eval(s, t).alpha / schedule_eval(s, 1.0).alpha * y;
    EXPECT_NEAR(h_drift_scalar(s, x, y, t), 0.0, 1e-14);
}

TEST(HDrift, VeScalarExample) {
    EXPECT_NEAR(h_drift(BridgeSchedule::ve(1.0), scalar(0.0), scalar(1.0), 0.5)[0], 4.0 / 3.0, 1e-14);
}

TEST(HDrift, SingularAtHorizon) {
    const auto s = BridgeSchedule::vp();
    EXPECT_THROW(h_drift(s, scalar(0.0), scalar(1.0), 1.0), SingularityError);
}

TEST(HDrift, MatchesFiniteDifferenceOfLogKernel) {
    std::mt19937_64 eng(11);
    std::uniform_real_distribution<double> ux(-1.0, 2.0), ut(0.01, 0.95);
    for (auto [s, sde] : {std::pair{BridgeSchedule::vp(2.0), oracle::vp_sde(2.0)},
                          std::pair{BridgeSchedule::ve(1.0), oracle::ve_sde(1.0)}}) {
        for (int i = 0; i < 25; ++i) {
            const double x = ux(eng), y = ux(eng), t = ut(eng);
            const double h = h_drift_scalar(s, x, y, t);
            const double fd = oracle::central_diff([&](double xx) { return sde.log_kernel(xx, y, t); }, x, 1e-4);
            EXPECT_LT(std::abs(h - fd) / std::max(std::abs(h), 1e-3), 1e-6) << "x=" << x << " y=" << y << " t=" << t;
        }
    }
}

TEST(Scalings, HorizonWithDefaultStats) {
    const auto sc = scalings(BridgeSchedule::vp(), DataStats{}, 1.0);
    // (a, b, c) = (1, 0, 0): c_in = 1/sqrt(varT), c_out = sqrt(varT var0) c_in
    EXPECT_DOUBLE_EQ(sc.cIn, 2.0);
    EXPECT_DOUBLE_EQ(sc.cOut, 0.5);
    EXPECT_EQ(sc.cSkip, 0.0);
    EXPECT_EQ(sc.cNoise, 0.0);
    EXPECT_DOUBLE_EQ(loss_weight(sc), 4.0);
}

TEST(Scalings, NoiseConditioningIsQuarterLog) {
    EXPECT_NEAR(scalings(BridgeSchedule::vp(), DataStats{}, 0.1).cNoise, -0.5756462732485114, 1e-14);
}

TEST(Scalings, DegenerateStatsRejected) {
    EXPECT_THROW(scalings(BridgeSchedule::vp(), DataStats{0.25, 0.25, 0.25}, 0.5), DegenerateStatsError);
}

TEST(Scalings, PositiveOnInterior) {
    const DataStats st{0.05, 0.08, 0.04};
    for (int i = 1; i < 100; ++i) {
        const auto sc = scalings(BridgeSchedule::vp(), st, i / 100.0);
        EXPECT_GT(sc.cIn, 0.0);
        EXPECT_GT(sc.cOut, 0.0);
    }
}

TEST(ScoreFromPred, ZeroAtMarginalMean) {
    const auto k = bridge_coeffs(BridgeSchedule::vp(), 0.6);
    const auto s = score_from_pred(scalar(k.a * 0.9 + k.b * 0.3), scalar(0.3), scalar(0.9), k);
    EXPECT_NEAR(s[0], 0.0, 1e-15);
}

TEST(ScoreFromPred, MatchesGradientOfGaussianBridgeDensity) {
    std::mt19937_64 eng(5);
    std::uniform_real_distribution<double> ux(-1.0, 2.0), ut(0.01, 0.99);
    const auto sch = BridgeSchedule::vp();
    for (int i = 0; i < 50; ++i) {
        const double x0 = ux(eng), y = ux(eng), xt = ux(eng), t = ut(eng);
        const auto k = bridge_coeffs(sch, t);
        // analytic gradient of log N(xt; a y + b x0, c)
        const double expected = -(xt - k.a * y - k.b * x0) / k.c;
        EXPECT_NEAR(score_from_pred(scalar(xt), scalar(x0), scalar(y), k)[0], expected,
                    1e-12 * std::max(1.0, std::abs(expected)));
    }
}

TEST(ScoreFromPred, DoublingVarianceHalvesScore) {
    BridgeCoeffs k{0.3, 0.4, 0.2};
    const double s1 = score_from_pred(scalar(1.0), scalar(0.5), scalar(0.2), k)[0];
    k.c *= 2;
    EXPECT_DOUBLE_EQ(score_from_pred(scalar(1.0), scalar(0.5), scalar(0.2), k)[0], 0.5 * s1);
}

TEST(ScoreFromPred, SingularAtHorizon) {
    EXPECT_THROW(score_from_pred(scalar(1.0), scalar(0.5), scalar(0.2), {1, 0, 0}), SingularityError);
}

TEST(LossWeight, InverseSquare) {
    EXPECT_EQ(loss_weight({1, 1.0, 0, 0}), 1.0);
    EXPECT_EQ(loss_weight({1, 0.5, 0, 0}), 4.0);
    EXPECT_THROW(loss_weight({1, 0.0, 0, 0}), SingularityError);
}

TEST(DiffusionCoefficient, VeIsTwoT) {
    EXPECT_DOUBLE_EQ(diffusion_sq(BridgeSchedule::ve(1.0), 0.3), 0.6);
}

TEST(DiffusionCoefficient, VpIsConstantBeta) {
    // d sigma^2/dt - 2 sigma^2 dlog(alpha)/dt = beta e^{-beta t} + beta (1 - e^{-beta t})
    for (double t : {0.1, 0.5, 0.9}) EXPECT_NEAR(diffusion_sq(BridgeSchedule::vp(2.0), t), 2.0, 1e-14);
}

TEST(BridgeMath, PureFunctions) {
    const auto s = BridgeSchedule::vp();
    const DataStats st{0.05, 0.07, 0.03};
    const auto a = scalings(s, st, 0.37), b = scalings(s, st, 0.37);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof(a)), 0);
}

TEST(MarginalConsistency, PinnedSdeMatchesCoefficients) {
    const auto s = BridgeSchedule::vp(2.0);
    const double x0 = 0.3, y = 0.9;
    const std::vector<double> cps{0.25, 0.5, 0.75};
    const auto mom = oracle::pinned_forward_moments(oracle::vp_sde(2.0), x0, y, 4000, 1000, cps, 17);
    ASSERT_EQ(mom.size(), cps.size());
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const auto k = bridge_coeffs(s, cps[i]);
        const double mean = k.a * y + k.b * x0;
        EXPECT_LT(std::abs(mom[i].mean - mean) / mean, 0.02) << "t=" << cps[i];
        EXPECT_LT(std::abs(mom[i].var - k.c) / k.c, 0.02) << "t=" << cps[i];
    }
}
