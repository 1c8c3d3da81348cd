#pragma once

// Procedural paired phantoms: an MRI-like structure volume and a PET-like
// function volume per subject, with class-specific regional patterns and
// auxiliary variables coupled to the function intensity.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sim2p/aux_vector.hpp"
#include "sim2p/error.hpp"
#include "sim2p/rng.hpp"
#include "sim2p/volume.hpp"

namespace sim2p::data {

enum class ClassLabel : int { CN = 0, AD = 1, FTD = 2 };

inline const char* to_string(ClassLabel c) {
    switch (c) {
        case ClassLabel::CN: return "CN";
        case ClassLabel::AD: return "AD";
        case ClassLabel::FTD: return "FTD";
    }
    return "?";
}

inline ClassLabel class_from_string(const std::string& s) {
    if (s == "CN") return ClassLabel::CN;
    if (s == "AD") return ClassLabel::AD;
    if (s == "FTD") return ClassLabel::FTD;
    throw FormatError("unknown class label '" + s + "'");
}

enum class Site { Public, Local };

using AuxRaw = std::array<std::optional<double>, kAuxVariables>;

struct Subject {
    std::string id;
    ClassLabel label = ClassLabel::CN;
    Volume structure;
    Volume function;
    AuxRaw auxRaw{};
    std::uint64_t seed = 0;

    std::optional<double> aux(std::string_view name) const { return auxRaw[aux_index(name)]; }
};

struct CohortConfig {
    int n = 60;
    std::array<double, 3> classMix{0.4, 0.3, 0.3};
    int volumeSide = 16;
    std::uint64_t seed = 7;
    Site site = Site::Public;
    double missingRate = 0.1;
    std::string idPrefix = "sub";

    void validate() const {
        if (n < 3) throw ConfigError("data.n must be at least 3");
        double s = 0;
        for (double p : classMix) {
            if (!(p >= 0.0)) throw ConfigError("data.classMix entries must be non-negative");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ConfigError("data.classMix must sum to 1 (got " + std::to_string(s) + ")");
        if (volumeSide < 8) throw ConfigError("data.volumeSide must be at least 8");
        if (!(missingRate >= 0.0 && missingRate < 1.0)) throw ConfigError("data.missingRate must be in [0, 1)");
    }
};

enum class Region : int { FrontalL = 0, FrontalR, TemporoparietalL, TemporoparietalR, Occipital, Hippocampal };
inline constexpr std::array<const char*, 6> kRegionNames = {"frontal_l",        "frontal_r", "temporoparietal_l",
                                                            "temporoparietal_r", "occipital", "hippocampal"};

struct Vec3 {
    double x, y, z;
};

/// Brain ellipsoid in normalized [-1, 1]^3 coordinates (y runs posterior to anterior).
struct Geometry {
    Vec3 center{0, 0, 0};
    Vec3 radii{0.82, 0.9, 0.75};
    double ventricleScale = 1.0;

    static Geometry reference() { return {}; }

    Vec3 scaled(double ux, double uy, double uz) const {
        return {center.x + ux * radii.x, center.y + uy * radii.y, center.z + uz * radii.z};
    }

    /// Region centers (and blob radius) relative to the ellipsoid.
    std::pair<std::vector<Vec3>, double> region(Region r) const {
        switch (r) {
            case Region::FrontalL: return {{scaled(-0.45, 0.62, 0.15)}, 0.3};
            case Region::FrontalR: return {{scaled(0.45, 0.62, 0.15)}, 0.3};
            case Region::TemporoparietalL: return {{scaled(-0.7, -0.2, -0.1)}, 0.32};
            case Region::TemporoparietalR: return {{scaled(0.7, -0.2, -0.1)}, 0.32};
            case Region::Occipital: return {{scaled(0.0, -0.8, 0.05)}, 0.3};
            case Region::Hippocampal: return {{scaled(-0.35, -0.05, -0.45), scaled(0.35, -0.05, -0.45)}, 0.22};
        }
        return {{}, 0.0};
    }

    /// Smooth membership in (0, 1]; 1 at a region center.
    double region_weight(Region r, const Vec3& p) const {
        const auto [centers, rad] = region(r);
        double w = 0;
        for (const auto& c : centers) {
            const double d2 = (p.x - c.x) * (p.x - c.x) + (p.y - c.y) * (p.y - c.y) + (p.z - c.z) * (p.z - c.z);
            w = std::max(w, std::exp(-0.5 * d2 / (rad * rad)));
        }
        return w;
    }

    double ellipsoid_radius(const Vec3& p) const {
        const double dx = (p.x - center.x) / radii.x, dy = (p.y - center.y) / radii.y, dz = (p.z - center.z) / radii.z;
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }

    double ventricle_weight(const Vec3& p) const {
        double w = 0;
        for (double side : {-1.0, 1.0}) {
            const Vec3 c = scaled(0.17 * side, 0.05, 0.1);
            const double rx = 0.1 * ventricleScale, ry = 0.3 * ventricleScale, rz = 0.12 * ventricleScale;
            const double d = std::sqrt(std::pow((p.x - c.x) / rx, 2) + std::pow((p.y - c.y) / ry, 2) +
                                       std::pow((p.z - c.z) / rz, 2));
            w = std::max(w, 1.0 / (1.0 + std::exp((d - 1.0) / 0.15)));
        }
        return w;
    }
};

inline Vec3 voxel_coord(int i, int j, int k, int side) {
    auto u = [side](int v) { return 2.0 * (v + 0.5) / side - 1.0; };
    return {u(i), u(j), u(k)};
}

/// Binary mask of voxels whose membership in `r` exceeds 0.3 on the reference geometry.
inline Volume region_mask(Region r, int side, const Geometry& g = Geometry::reference()) {
    Volume m = Volume::cube(side);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            for (int k = 0; k < side; ++k) {
                const Vec3 p = voxel_coord(i, j, k, side);
                m.at(i, j, k) = (g.region_weight(r, p) > 0.3 && g.ellipsoid_radius(p) < 1.0) ? 1.0 : 0.0;
            }
    return m;
}

inline Volume brain_mask(int side, const Geometry& g = Geometry::reference()) {
    Volume m = Volume::cube(side);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            for (int k = 0; k < side; ++k) m.at(i, j, k) = g.ellipsoid_radius(voxel_coord(i, j, k, side)) < 1.0;
    return m;
}

/// Separable Gaussian blur (kernel truncated at 3 sigma, renormalized at the borders).
inline Volume gaussian_blur(const Volume& v, double sigma) {
    if (sigma <= 0.0) return v;
    const int r = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    const auto& d = v.dims();
    const std::array<int, 3> n{int(d.nx), int(d.ny), int(d.nz)};
    Volume cur = v;
    for (int axis = 0; axis < 3; ++axis) {
        Volume out(d);
        for (int x = 0; x < n[0]; ++x)
            for (int y = 0; y < n[1]; ++y)
                for (int z = 0; z < n[2]; ++z) {
                    std::array<int, 3> p{x, y, z};
                    const int c = p[axis];
                    double s = 0, ws = 0;
                    for (int o = -r; o <= r; ++o) {
                        const int q = c + o;
                        if (q < 0 || q >= n[axis]) continue;
                        p[axis] = q;
                        s += k[o + r] * cur.at(p[0], p[1], p[2]);
                        ws += k[o + r];
                    }
                    out.at(x, y, z) = s / ws;
                }
        cur = std::move(out);
    }
    return cur;
}

inline Volume smooth_noise(int side, double sigma, double amplitude, Rng& rng) {
    Volume n = Volume::cube(side);
    for (auto& v : n.raw()) v = rng.normal();
    n = gaussian_blur(n, sigma);
    double s2 = 0;
    for (double v : n.values()) s2 += v * v;
    const double sd = std::sqrt(s2 / double(n.size()));
    for (auto& v : n.raw()) v *= amplitude / sd;
    return n;
}

namespace detail {

struct Latent {
    double severity = 0;  // disease stage in [0, 1]
    double reserve = 0;   // subject-level factor scaling the function intensity
};

inline AuxRaw draw_clinical(ClassLabel c, const Latent& z, Site site, Rng& rng) {
    AuxRaw a{};
    const bool ad = c == ClassLabel::AD, ftd = c == ClassLabel::FTD;
    const double ageMean = ad ? 75.0 : ftd ? 65.0 : 72.0;
    const double age = std::clamp(ageMean + (site == Site::Local ? 4.0 : 0.0) + 6.5 * rng.normal(), 50.0, 95.0);
    a[aux_index("age")] = age;
    a[aux_index("gender")] = rng.uniform() < 0.5 ? 1.0 : 0.0;  // 1 = female
    a[aux_index("education")] = std::clamp(15.5 - (site == Site::Local ? 2.0 : 0.0) + 2.8 * rng.normal(), 6.0, 22.0);
    const double mmse = 28.5 - 7.0 * z.severity * ad - 4.5 * z.severity * ftd + 1.4 * z.reserve -
                        0.04 * (age - 70.0) + 0.5 * rng.normal() - (site == Site::Local ? 0.8 : 0.0);
    a[aux_index("mmse")] = std::clamp(mmse, 0.0, 30.0);
    const double adas = 9.0 + 18.0 * z.severity * ad + 10.0 * z.severity * ftd - 2.5 * z.reserve + 1.5 * rng.normal();
    a[aux_index("adas13")] = std::clamp(adas, 0.0, 85.0);
    const double u = rng.uniform();
    const double p0 = ad ? 0.35 : 0.7, p1 = ad ? 0.8 : 0.95;
    a[aux_index("apoe4")] = u < p0 ? 0.0 : u < p1 ? 1.0 : 2.0;
    return a;
}

}  // namespace detail

/// One subject. Everything is a deterministic function of (cfg, id, label, seed).
inline Subject generate_subject(const CohortConfig& cfg, const std::string& id, ClassLabel label, std::uint64_t seed) {
    Rng rng(seed);
    const int S = cfg.volumeSide;
    const bool ad = label == ClassLabel::AD, ftd = label == ClassLabel::FTD;
    detail::Latent z;
    z.severity = label == ClassLabel::CN ? 0.0 : rng.uniform(0.4, 1.0);
    z.reserve = std::clamp(rng.normal(), -2.5, 2.5);

    Subject s;
    s.id = id;
    s.label = label;
    s.seed = seed;
    s.auxRaw = detail::draw_clinical(label, z, cfg.site, rng);
    const double age = *s.auxRaw[aux_index("age")];
    const double ageing = (age - 70.0) / 20.0;

    Geometry g;
    g.center = {0.03 * rng.normal(), 0.03 * rng.normal(), 0.03 * rng.normal()};
    g.radii = {0.82 * (1 + 0.03 * rng.normal()), 0.9 * (1 + 0.03 * rng.normal()), 0.75 * (1 + 0.03 * rng.normal())};
    g.ventricleScale = 1.0 + 0.25 * ageing + 0.3 * z.severity * (ad ? 1.0 : ftd ? 0.5 : 0.0);
    const double cortex = 0.28 * (1.0 - 0.15 * ageing);

    Volume structure = Volume::cube(S), fclean = Volume::cube(S);
    double gmSum = 0, wmSum = 0, csfSum = 0;
    std::array<double, 4> seg{};  // hippo l/r, ent l/r
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j)
            for (int k = 0; k < S; ++k) {
                const Vec3 p = voxel_coord(i, j, k, S);
                const double r = g.ellipsoid_radius(p);
                const double brain = 1.0 / (1.0 + std::exp((r - 1.0) / 0.04));
                const double inner = 1.0 / (1.0 + std::exp((r - (1.0 - cortex)) / 0.04));
                const double vent = g.ventricle_weight(p) * inner;
                const double wm = inner * (1.0 - vent);
                double gm = brain - inner;

                const double tpL = g.region_weight(Region::TemporoparietalL, p);
                const double tpR = g.region_weight(Region::TemporoparietalR, p);
                const double hip = g.region_weight(Region::Hippocampal, p);
                const double frL = g.region_weight(Region::FrontalL, p);
                const double frR = g.region_weight(Region::FrontalR, p);

                // structural thinning and functional hypometabolism share the same regions
                double thin = 0, hypo = 0;
                if (ad) {
                    thin = z.severity * (0.25 * std::max(tpL, tpR) + 0.3 * hip);
                    hypo = z.severity * (0.5 * std::max(tpL, tpR) + 0.45 * hip);
                } else if (ftd) {
                    thin = z.severity * (0.3 * frL + 0.15 * frR);
                    hypo = z.severity * (0.55 * frL + 0.3 * frR);
                }
                const double gmEff = gm * (1.0 - thin) * (1.0 - 0.1 * ageing);
                // hippocampal structures are grey matter embedded in the white matter interior
                const double hipTissue = std::min(1.0, 1.6 * hip) * inner * (1.0 - vent);
                const double sv = 0.78 * wm * (1.0 - hipTissue) + 0.52 * (gmEff + hipTissue * (1.0 - thin)) +
                                  0.12 * vent;
                structure.at(i, j, k) = sv;

                const double base = std::pow(std::clamp(sv, 0.0, 1.0), 1.3) + 0.35 * (gmEff + hipTissue);
                fclean.at(i, j, k) = base * (1.0 - hypo);

                gmSum += gmEff;
                wmSum += wm;
                csfSum += vent;
                seg[p.x < g.center.x ? 0 : 1] += hipTissue * (1.0 - thin);
                seg[p.x < g.center.x ? 2 : 3] += gmEff * (p.x < g.center.x ? tpL : tpR);
            }

    // voxel counts expressed per 16^3 grid so the scale does not depend on resolution
    const double vox = std::pow(16.0 / S, 3);
    s.auxRaw[aux_index("seg_csf")] = csfSum * vox;
    s.auxRaw[aux_index("seg_gm")] = gmSum * vox;
    s.auxRaw[aux_index("seg_wm")] = wmSum * vox;
    s.auxRaw[aux_index("seg_hippo_l")] = seg[0] * vox;
    s.auxRaw[aux_index("seg_hippo_r")] = seg[1] * vox;
    s.auxRaw[aux_index("seg_ent_l")] = seg[2] * vox;
    s.auxRaw[aux_index("seg_ent_r")] = seg[3] * vox;

    const bool local = cfg.site == Site::Local;
    const double scale = std::clamp(1.0 + 0.14 * z.reserve, 0.6, 1.4);
    const Volume sNoise = smooth_noise(S, 0.8, 0.012, rng);
    const Volume fNoise = smooth_noise(S, 1.0, 0.015, rng);
    for (std::size_t i = 0; i < structure.size(); ++i) structure[i] += sNoise[i];
    structure = gaussian_blur(structure, local ? 1.0 : 0.5);
    Volume function(fclean.dims());
    for (std::size_t i = 0; i < fclean.size(); ++i) function[i] = 0.62 * scale * fclean[i] + fNoise[i];
    function = gaussian_blur(function, 0.7);
    for (std::size_t i = 0; i < function.size(); ++i) {
        double sv = std::clamp(structure[i], 0.0, 1.0);
        double fv = std::clamp(function[i], 0.0, 1.0);
        if (local) {
            // scanner and protocol contrast differences
            sv = std::pow(sv, 1.1);
            fv = std::pow(fv, 0.75);
        }
        structure[i] = sv;
        function[i] = fv;
    }
    s.structure = std::move(structure);
    s.function = std::move(function);

    for (std::size_t v = 0; v < kAuxVariables; ++v) {
        if (kAuxNames[v] == "age" || kAuxNames[v] == "gender") continue;
        if (rng.uniform() < cfg.missingRate) s.auxRaw[v].reset();
    }
    return s;
}

/// Per-class counts by largest remainder.
inline std::array<int, 3> class_counts(int n, const std::array<double, 3>& mix) {
    std::array<int, 3> c{};
    std::array<double, 3> rem{};
    int used = 0;
    for (int k = 0; k < 3; ++k) {
        const double e = n * mix[k];
        c[k] = int(std::floor(e));
        rem[k] = e - c[k];
        used += c[k];
    }
    while (used < n) {
        int best = 0;
        for (int k = 1; k < 3; ++k)
            if (rem[k] > rem[best]) best = k;
        ++c[best];
        rem[best] = -1;
        ++used;
    }
    return c;
}

inline std::string subject_id(const std::string& prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", i);
    return prefix + "-" + buf;
}

inline std::vector<Subject> generate_cohort(const CohortConfig& cfg) {
    cfg.validate();
    const auto counts = class_counts(cfg.n, cfg.classMix);
    std::vector<ClassLabel> labels;
    for (int k = 0; k < 3; ++k) labels.insert(labels.end(), counts[k], static_cast<ClassLabel>(k));
    Rng rng(derive_seed(cfg.seed, cfg.site == Site::Local ? "labels-local" : "labels"));
    std::shuffle(labels.begin(), labels.end(), rng.engine());
    std::vector<Subject> out;
    out.reserve(cfg.n);
    for (int i = 0; i < cfg.n; ++i) {
        const std::string id = subject_id(cfg.idPrefix, i);
        out.push_back(generate_subject(cfg, id, labels[i], derive_seed(cfg.seed, id)));
    }
    return out;
}

}  // namespace sim2p::data
