#pragma once

// Auxiliary-variable standardization and propensity-balanced train/val/test splitting.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <limits>
#include <vector>

#include "sim2p/phantom.hpp"

namespace sim2p::data {

enum class Split : int { Train = 0, Val = 1, Test = 2 };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw FormatError("unknown split '" + s + "'");
}

// ---- auxiliary encoding ----

struct AuxStats {
    std::array<double, kAuxVariables> mean{};
    std::array<double, kAuxVariables> sd{};
};

inline constexpr double kMinAuxSd = 1e-8;

/// Per-variable mean and population sd over the present values of `subjects`.
inline AuxStats aux_stats(const std::vector<const Subject*>& subjects) {
    AuxStats st;
    for (std::size_t v = 0; v < kAuxVariables; ++v) {
        double n = 0, s = 0;
        for (const auto* sub : subjects)
            if (sub->auxRaw[v]) {
                s += *sub->auxRaw[v];
                ++n;
            }
        if (n == 0) continue;
        const double m = s / n;
        double ss = 0;
        for (const auto* sub : subjects)
            if (sub->auxRaw[v]) ss += (*sub->auxRaw[v] - m) * (*sub->auxRaw[v] - m);
        st.mean[v] = m;
        st.sd[v] = std::sqrt(ss / n);
    }
    return st;
}

using AuxMask = std::bitset<kAuxVariables>;

inline AuxMask all_aux() { return AuxMask().set(); }

inline AuxMask aux_mask_of(const std::vector<std::string>& names) {
    AuxMask m;
    for (const auto& n : names) m.set(aux_index(n));
    return m;
}

/// Standardizes present values; missing or masked-out variables encode as (0, flag 0).
inline AuxVector aux_encode(const AuxRaw& raw, const AuxStats& st, const AuxMask& keep = all_aux()) {
    AuxVector a;
    for (std::size_t v = 0; v < kAuxVariables; ++v) {
        if (!raw[v] || !keep.test(v)) continue;
        a.flags[v] = 1.0;
        a.values[v] = st.sd[v] < kMinAuxSd ? 0.0 : (*raw[v] - st.mean[v]) / st.sd[v];
    }
    return a;
}

inline AuxRaw aux_decode(const AuxVector& a, const AuxStats& st) {
    AuxRaw r{};
    for (std::size_t v = 0; v < kAuxVariables; ++v)
        if (a.flags[v] != 0.0) r[v] = a.values[v] * st.sd[v] + st.mean[v];
    return r;
}

// ---- propensity-balanced splitting ----

struct SplitRatios {
    double train = 0.7, val = 0.15, test = 0.15;
};

struct SplitAssignment {
    std::vector<Split> split;  // parallel to the subject list
    double imbalance = 0;
    std::size_t candidateIndex = 0;
    std::uint64_t candidateSeed = 0;
    bool usedFallback = false;

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == s) out.push_back(i);
        return out;
    }
};

/// Confounder design: intercept, AD and FTD indicators, standardized age, gender.
inline Eigen::MatrixXd confounder_design(const std::vector<Subject>& subjects) {
    const Eigen::Index n = Eigen::Index(subjects.size());
    Eigen::MatrixXd X(n, 5);
    double ma = 0, sa = 0;
    for (const auto& s : subjects) ma += s.aux("age").value_or(0.0);
    ma /= double(n);
    for (const auto& s : subjects) sa += std::pow(s.aux("age").value_or(ma) - ma, 2);
    sa = std::sqrt(sa / double(n));
    if (sa < kMinAuxSd) sa = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = subjects[i];
        X(i, 0) = 1.0;
        X(i, 1) = s.label == ClassLabel::AD;
        X(i, 2) = s.label == ClassLabel::FTD;
        X(i, 3) = (s.aux("age").value_or(ma) - ma) / sa;
        X(i, 4) = s.aux("gender").value_or(0.5);
    }
    return X;
}

/// Logistic regression by IRLS with a small ridge. Returns nullopt when it fails to converge.
inline std::optional<Eigen::VectorXd> fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                                   int maxIter = 100, double ridge = 1e-6, double tol = 1e-8) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
    for (int it = 0; it < maxIter; ++it) {
        const Eigen::VectorXd eta = X * beta;
        const Eigen::VectorXd p = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
        const Eigen::VectorXd w = p.cwiseProduct((1.0 - p.array()).matrix()).cwiseMax(1e-12);
        Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
        H.diagonal().array() += ridge;
        const Eigen::VectorXd grad = X.transpose() * (y - p) - ridge * beta;
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        if (!step.allFinite()) return std::nullopt;
        beta += step;
        if (step.cwiseAbs().maxCoeff() < tol) return beta;
    }
    return std::nullopt;
}

/// Percentile (linear interpolation between order statistics) at q in [0, 100].
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw Error("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * double(v.size() - 1);
    const std::size_t lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

/// Largest gap between any two splits' percentile curves (1..99) of `score`.
inline double percentile_gap(const std::vector<double>& score, const std::vector<Split>& split) {
    std::array<std::vector<double>, 3> parts;
    for (std::size_t i = 0; i < score.size(); ++i) parts[int(split[i])].push_back(score[i]);
    double gap = 0;
    for (int q = 1; q <= 99; ++q) {
        std::array<double, 3> pc{};
        for (int k = 0; k < 3; ++k) pc[k] = percentile(parts[k], q);
        gap = std::max({gap, std::abs(pc[0] - pc[1]), std::abs(pc[0] - pc[2]), std::abs(pc[1] - pc[2])});
    }
    return gap;
}

struct ImbalanceResult {
    double value = 0;
    bool usedFallback = false;
};

/// Propensity of train membership given confounders, compared across splits. Falls back to
/// the worst raw-confounder percentile gap when the logistic fit does not converge.
inline ImbalanceResult imbalance(const Eigen::MatrixXd& X, const std::vector<Split>& split) {
    Eigen::VectorXd y(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) y(i) = split[i] == Split::Train ? 1.0 : 0.0;
    if (const auto beta = fit_logistic(X, y)) {
        const Eigen::VectorXd eta = X * *beta;
        std::vector<double> score(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) score[i] = 1.0 / (1.0 + std::exp(-eta(i)));
        return {percentile_gap(score, split), false};
    }
    double gap = 0;
    for (Eigen::Index c = 1; c < X.cols(); ++c) {
        std::vector<double> col(X.col(c).data(), X.col(c).data() + X.rows());
        gap = std::max(gap, percentile_gap(col, split));
    }
    return {gap, true};
}

inline ImbalanceResult imbalance(const std::vector<Subject>& subjects, const std::vector<Split>& split) {
    return imbalance(confounder_design(subjects), split);
}

inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
    const double tot = r.train + r.val + r.test;
    if (!(r.train > 0 && r.val > 0 && r.test > 0) || std::abs(tot - 1.0) > 1e-9)
        throw ConfigError("data.splitRatios must be positive and sum to 1");
    const std::size_t nTrain = std::size_t(std::llround(double(n) * r.train));
    const std::size_t nVal = std::size_t(std::llround(double(n) * r.val));
    if (nTrain == 0 || nVal == 0 || nTrain + nVal >= n)
        throw ConfigError("cohort of " + std::to_string(n) + " subjects too small for the split ratios");
    return {nTrain, nVal, n - nTrain - nVal};
}

inline std::vector<Split> random_partition(std::size_t n, const SplitRatios& r, std::uint64_t seed) {
    const auto sz = split_sizes(n, r);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<Split> s(n);
    for (std::size_t k = 0; k < n; ++k) s[perm[k]] = k < sz[0] ? Split::Train : k < sz[0] + sz[1] ? Split::Val : Split::Test;
    return s;
}

/// Index of the smallest value; the lower index wins ties.
inline std::size_t argmin_first(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] < v[best]) best = i;
    return best;
}

/// Best of `nCandidates` random partitions by propensity imbalance; lower index wins ties.
inline SplitAssignment propensity_split(const std::vector<Subject>& subjects, const SplitRatios& ratios,
                                        int nCandidates, std::uint64_t seed) {
    if (nCandidates < 1) throw ConfigError("data.nCandidates must be at least 1");
    const Eigen::MatrixXd X = confounder_design(subjects);
    std::vector<double> values;
    std::vector<bool> fallback;
    for (int k = 0; k < nCandidates; ++k) {
        const auto imb = imbalance(X, random_partition(subjects.size(), ratios, derive_seed(seed, std::uint64_t(k))));
        values.push_back(imb.value);
        fallback.push_back(imb.usedFallback);
    }
    SplitAssignment best;
    best.candidateIndex = argmin_first(values);
    best.candidateSeed = derive_seed(seed, std::uint64_t(best.candidateIndex));
    best.split = random_partition(subjects.size(), ratios, best.candidateSeed);
    best.imbalance = values[best.candidateIndex];
    best.usedFallback = fallback[best.candidateIndex];
    return best;
}

}  // namespace sim2p::data
