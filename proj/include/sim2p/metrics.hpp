#pragma once

// Image-quality metrics, the one-sided Wilcoxon signed-rank test and stratified reports.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sim2p/error.hpp"
#include "sim2p/volume.hpp"

namespace sim2p::metrics {

struct MaeMse {
    double mae = 0;
    double mse = 0;
};

inline MaeMse mae_mse(const Volume& x, const Volume& y) {
    require_same_shape(x, y, "mae_mse");
    MaeMse r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        r.mae += std::abs(d);
        r.mse += d * d;
    }
    if (!x.empty()) {
        r.mae /= double(x.size());
        r.mse /= double(x.size());
    }
    return r;
}

inline constexpr double kPsnrInf = std::numeric_limits<double>::infinity();

inline double psnr_from_mse(double mse, double range = 1.0) {
    if (mse == 0.0) return kPsnrInf;
    return 10.0 * std::log10(range * range / mse);
}

inline double psnr(const Volume& x, const Volume& y, double range = 1.0) {
    return psnr_from_mse(mae_mse(x, y).mse, range);
}

inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01, kSsimK2 = 0.03;

namespace detail {

// inclusive-exclusive 3D prefix sums with one voxel of zero padding on each low side
class Integral {
public:
    Integral(const Dims& d) : nx_(d.nx + 1), ny_(d.ny + 1), nz_(d.nz + 1), s_(nx_ * ny_ * nz_, 0.0) {}

    template <class F>
    void build(const Dims& d, F value) {
        for (std::size_t x = 1; x < nx_; ++x)
            for (std::size_t y = 1; y < ny_; ++y)
                for (std::size_t z = 1; z < nz_; ++z)
                    at(x, y, z) = value(x - 1, y - 1, z - 1) + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) -
                                  at(x - 1, y - 1, z) - at(x - 1, y, z - 1) - at(x, y - 1, z - 1) +
                                  at(x - 1, y - 1, z - 1);
        (void)d;
    }

    // sum over [x, x+w) x [y, y+w) x [z, z+w)
    double box(std::size_t x, std::size_t y, std::size_t z, std::size_t w) const {
        const std::size_t X = x + w, Y = y + w, Z = z + w;
        return at(X, Y, Z) - at(x, Y, Z) - at(X, y, Z) - at(X, Y, z) + at(x, y, Z) + at(x, Y, z) + at(X, y, z) -
               at(x, y, z);
    }

private:
    double& at(std::size_t x, std::size_t y, std::size_t z) { return s_[(x * ny_ + y) * nz_ + z]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const { return s_[(x * ny_ + y) * nz_ + z]; }
    std::size_t nx_, ny_, nz_;
    std::vector<double> s_;
};

}  // namespace detail

/// Mean SSIM over all fully contained 7^3 windows (uniform weights, population moments, L = 1).
inline double ssim3d(const Volume& x, const Volume& y) {
    require_same_shape(x, y, "ssim3d");
    const auto& d = x.dims();
    const std::size_t w = kSsimWindow;
    if (d.nx < w || d.ny < w || d.nz < w)
        throw ShapeError("ssim3d: volume " + d.str() + " smaller than the 7^3 window");
    detail::Integral sx(d), sy(d), sxx(d), syy(d), sxy(d);
    sx.build(d, [&](auto i, auto j, auto k) { return x.at(i, j, k); });
    sy.build(d, [&](auto i, auto j, auto k) { return y.at(i, j, k); });
    sxx.build(d, [&](auto i, auto j, auto k) { return x.at(i, j, k) * x.at(i, j, k); });
    syy.build(d, [&](auto i, auto j, auto k) { return y.at(i, j, k) * y.at(i, j, k); });
    sxy.build(d, [&](auto i, auto j, auto k) { return x.at(i, j, k) * y.at(i, j, k); });
    const double n = double(w * w * w);
    const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
    double total = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + w <= d.nx; ++i)
        for (std::size_t j = 0; j + w <= d.ny; ++j)
            for (std::size_t k = 0; k + w <= d.nz; ++k) {
                const double mx = sx.box(i, j, k, w) / n, my = sy.box(i, j, k, w) / n;
                const double vx = sxx.box(i, j, k, w) / n - mx * mx;
                const double vy = syy.box(i, j, k, w) / n - my * my;
                const double cxy = sxy.box(i, j, k, w) / n - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return total / double(count);
}

// ---- Wilcoxon signed-rank ----

enum class WilcoxonMode { Auto, Exact, Normal };

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

struct SignedRanks {
    std::vector<double> ranks;  // average ranks of |d|, zeros dropped
    std::vector<bool> positive;
    double wPlus = 0;
    double tieTerm = 0;  // sum of t^3 - t over tie groups
};

inline SignedRanks signed_ranks(const std::vector<double>& diffs) {
    std::vector<std::pair<double, bool>> a;
    for (double d : diffs) {
        if (!std::isfinite(d)) throw DomainError("wilcoxon: non-finite difference");
        if (d != 0.0) a.push_back({std::abs(d), d > 0});
    }
    if (a.empty()) throw DomainError("wilcoxon: all differences are zero, the test is undefined");
    std::sort(a.begin(), a.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
    SignedRanks s;
    s.ranks.resize(a.size());
    s.positive.resize(a.size());
    for (std::size_t i = 0; i < a.size();) {
        std::size_t j = i;
        while (j < a.size() && a[j].first == a[i].first) ++j;
        const double r = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
        const double t = double(j - i);
        s.tieTerm += t * t * t - t;
        for (std::size_t k = i; k < j; ++k) {
            s.ranks[k] = r;
            s.positive[k] = a[k].second;
            if (a[k].second) s.wPlus += r;
        }
        i = j;
    }
    return s;
}

/// p-value for the alternative "differences tend to be positive". Exact enumeration of
/// the sign-flip distribution for n <= 20 (ties handled with doubled ranks), otherwise a
/// normal approximation with tie and continuity corrections.
inline double wilcoxon_one_sided(const std::vector<double>& diffs, WilcoxonMode mode = WilcoxonMode::Auto) {
    const auto s = signed_ranks(diffs);
    const std::size_t n = s.ranks.size();
    const bool exact = mode == WilcoxonMode::Exact || (mode == WilcoxonMode::Auto && n <= 20);
    if (exact) {
        if (n > 40) throw DomainError("wilcoxon: exact mode limited to 40 non-zero differences");
        std::vector<int> r2(n);
        int total = 0;
        for (std::size_t i = 0; i < n; ++i) total += (r2[i] = int(std::lround(2.0 * s.ranks[i])));
        // counts[w] = number of sign assignments whose doubled positive-rank sum is w
        std::vector<double> counts(std::size_t(total) + 1, 0.0);
        counts[0] = 1.0;
        int reach = 0;
        for (int r : r2) {
            for (int w = reach; w >= 0; --w)
                if (counts[w] != 0.0) counts[w + r] += counts[w];
            reach += r;
        }
        const int obs = int(std::lround(2.0 * s.wPlus));
        double tail = 0;
        for (int w = obs; w <= total; ++w) tail += counts[w];
        return tail / std::ldexp(1.0, int(n));
    }
    const double nn = double(n);
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - s.tieTerm / 48.0;
    if (!(var > 0)) throw DomainError("wilcoxon: zero variance");
    const double z = (s.wPlus - mean - 0.5) / std::sqrt(var);
    return normal_sf(z);
}

// ---- stratified reports ----

struct SubjectMetrics {
    std::string id;
    std::string classLabel;
    std::string ageBand;
    std::string gender;
    double mae = 0, mse = 0, psnr = 0, ssim = 0;
};

inline std::string age_band(double age) {
    if (age < 65.0) return "<65";
    if (age < 75.0) return "65-75";
    return ">=75";
}

inline SubjectMetrics score_subject(const Volume& pred, const Volume& truth) {
    SubjectMetrics m;
    const auto e = mae_mse(pred, truth);
    m.mae = e.mae;
    m.mse = e.mse;
    m.psnr = psnr_from_mse(e.mse);
    m.ssim = ssim3d(pred, truth);
    return m;
}

struct Summary {
    double mean = 0, sd = 0;
    std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& v) {
    Summary s;
    for (double x : v)
        if (std::isfinite(x)) {
            s.mean += x;
            ++s.n;
        }
    if (s.n == 0) return s;
    s.mean /= double(s.n);
    double ss = 0;
    for (double x : v)
        if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
    s.sd = s.n > 1 ? std::sqrt(ss / double(s.n - 1)) : 0.0;
    return s;
}

struct Stratum {
    std::size_t count = 0;
    Summary mae, mse, psnr, ssim;
    std::size_t psnrInfinite = 0;  // zero-MSE subjects excluded from the PSNR summary
};

struct MetricReport {
    std::vector<SubjectMetrics> perSubject;
    std::map<std::string, Stratum> strata;  // "overall", "class=AD", "age=<65", "gender=F", ...

    static Stratum aggregate(const std::vector<const SubjectMetrics*>& rows) {
        Stratum s;
        s.count = rows.size();
        std::vector<double> a, b, c, d;
        for (const auto* r : rows) {
            a.push_back(r->mae);
            b.push_back(r->mse);
            c.push_back(r->psnr);
            d.push_back(r->ssim);
            if (std::isinf(r->psnr)) ++s.psnrInfinite;
        }
        s.mae = summarize(a);
        s.mse = summarize(b);
        s.psnr = summarize(c);
        s.ssim = summarize(d);
        return s;
    }

    static MetricReport build(std::vector<SubjectMetrics> rows) {
        std::sort(rows.begin(), rows.end(), [](const auto& l, const auto& r) { return l.id < r.id; });
        MetricReport rep;
        rep.perSubject = std::move(rows);
        std::map<std::string, std::vector<const SubjectMetrics*>> groups;
        for (const auto& r : rep.perSubject) {
            groups["overall"].push_back(&r);
            groups["class=" + r.classLabel].push_back(&r);
            groups["age=" + r.ageBand].push_back(&r);
            groups["gender=" + r.gender].push_back(&r);
        }
        for (const auto& [k, v] : groups) rep.strata[k] = aggregate(v);
        return rep;
    }

    const Stratum& overall() const { return strata.at("overall"); }

    std::string csv() const {
        std::ostringstream o;
        o.precision(10);
        o << "id,class,ageBand,gender,mae,mse,psnr,ssim\n";
        for (const auto& r : perSubject)
            o << r.id << ',' << r.classLabel << ',' << r.ageBand << ',' << r.gender << ',' << r.mae << ',' << r.mse
              << ',' << (std::isinf(r.psnr) ? std::string("inf") : std::to_string(r.psnr)) << ',' << r.ssim << '\n';
        return o.str();
    }

    nlohmann::ordered_json json() const {
        auto sj = [](const Summary& s) { return nlohmann::ordered_json{{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}}; };
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [k, s] : strata) {
            nlohmann::ordered_json e;
            e["count"] = s.count;
            e["mae"] = sj(s.mae);
            e["mse"] = sj(s.mse);
            e["psnr"] = sj(s.psnr);
            e["psnrInfiniteExcluded"] = s.psnrInfinite;
            e["ssim"] = sj(s.ssim);
            j[k] = e;
        }
        return j;
    }
};

}  // namespace sim2p::metrics
