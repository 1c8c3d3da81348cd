#pragma once

// Patch-transformer denoiser with adaLN-Zero conditioning and its pred-x
// wrapper D = c_skip x_t + c_out F(c_in x_t, c_noise, y, aux).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sim2p/aux_vector.hpp"
#include "sim2p/bridge.hpp"
#include "sim2p/error.hpp"
#include "sim2p/nn/ops.hpp"
#include "sim2p/volume.hpp"

namespace sim2p::net {

using nn::LinearSlot;
using nn::Mat;
using nn::Vec;
using nn::ParamVector;

enum class Fusion : std::uint32_t { Concat = 0, Add = 1, Multiply = 2 };

inline const char* to_string(Fusion f) {
    switch (f) {
        case Fusion::Concat: return "concat";
        case Fusion::Add: return "add";
        case Fusion::Multiply: return "multiply";
    }
    return "?";
}

inline Fusion fusion_from_string(const std::string& s) {
    if (s == "concat") return Fusion::Concat;
    if (s == "add") return Fusion::Add;
    if (s == "multiply") return Fusion::Multiply;
    throw ConfigError("unknown fusion '" + s + "' (expected concat, add or multiply)");
}

struct NetConfig {
    int volumeSide = 16;
    int patchSide = 2;
    int embedDim = 64;
    int nBlocks = 4;
    int nHeads = 2;
    int auxDim = static_cast<int>(kAuxFeatures);
    int mlpRatio = 4;
    int timeFreqDim = 64;
    // feed the source volume as a second input channel
    bool sourceChannel = true;
    Fusion fusion = Fusion::Concat;

    int grid_side() const { return volumeSide / patchSide; }
    int tokens() const { return grid_side() * grid_side() * grid_side(); }
    int patch_voxels() const { return patchSide * patchSide * patchSide; }
    int in_channels() const { return sourceChannel ? 2 : 1; }
    int cond_dim() const { return fusion == Fusion::Concat ? 2 * embedDim : embedDim; }
    int head_dim() const { return embedDim / nHeads; }

    void validate() const {
        if (volumeSide <= 0 || patchSide <= 0 || volumeSide % patchSide != 0)
            throw ConfigError("net.volumeSide must be a positive multiple of net.patchSide");
        if (embedDim <= 0 || nHeads <= 0 || embedDim % nHeads != 0)
            throw ConfigError("net.embedDim must be a positive multiple of net.nHeads");
        if (embedDim < 6) throw ConfigError("net.embedDim must be at least 6");
        if (nBlocks < 0) throw ConfigError("net.nBlocks must be non-negative");
        if (auxDim != static_cast<int>(kAuxFeatures)) throw ConfigError("net.auxDim must be 26");
        if (mlpRatio <= 0) throw ConfigError("net.mlpRatio must be positive");
        if (timeFreqDim <= 0 || timeFreqDim % 2 != 0) throw ConfigError("net.timeFreqDim must be positive and even");
    }

    bool operator==(const NetConfig&) const = default;

    /// Tiny configuration used for exhaustive gradient checks.
    static NetConfig micro() {
        NetConfig c;
        c.volumeSide = 4;
        c.patchSide = 2;
        c.embedDim = 12;
        c.nBlocks = 2;
        c.nHeads = 2;
        c.timeFreqDim = 8;
        return c;
    }

    /// Full-size architecture (80^3 volumes, patch 4, 28 blocks, width 1152, 16 heads).
    static NetConfig full_scale() {
        NetConfig c;
        c.volumeSide = 80;
        c.patchSide = 4;
        c.embedDim = 1152;
        c.nBlocks = 28;
        c.nHeads = 16;
        c.timeFreqDim = 256;
        return c;
    }
};

enum class Init { TruncNormal, Zero, One };

struct Segment {
    std::string name;
    std::size_t offset;
    std::size_t rows;
    std::size_t cols;
    Init init;
    std::size_t size() const { return rows * cols; }
};

struct BlockSlots {
    std::size_t norm1 = 0;
    LinearSlot qkv, proj;
    std::size_t norm2 = 0;
    LinearSlot fc1, fc2;
    LinearSlot ada;
};

struct NetSlots {
    LinearSlot patch;
    LinearSlot tFc1, tFc2;
    LinearSlot aFc1, aFc2, aFc3;
    std::vector<BlockSlots> blocks;
    std::size_t finalNorm = 0;
    LinearSlot finalAda, finalLinear;
};

/// Named layout of the flat parameter array. Pure function of the config.
class ParamLayout {
public:
    explicit ParamLayout(const NetConfig& c) {
        c.validate();
        const int E = c.embedDim, C = c.cond_dim(), H = c.mlpRatio * E;
        slots_.patch = linear("patch_embed", E, c.in_channels() * c.patch_voxels());
        slots_.tFc1 = linear("t_embed.fc1", E, c.timeFreqDim);
        slots_.tFc2 = linear("t_embed.fc2", E, E);
        slots_.aFc1 = linear("aux_embed.fc1", E, c.auxDim);
        slots_.aFc2 = linear("aux_embed.fc2", E, E);
        slots_.aFc3 = linear("aux_embed.fc3", E, E);
        for (int k = 0; k < c.nBlocks; ++k) {
            const std::string p = "blocks." + std::to_string(k) + ".";
            BlockSlots b;
            b.norm1 = vector(p + "norm1.gain", E, Init::One);
            b.qkv = linear(p + "attn.qkv", 3 * E, E);
            b.proj = linear(p + "attn.proj", E, E);
            b.norm2 = vector(p + "norm2.gain", E, Init::One);
            b.fc1 = linear(p + "mlp.fc1", H, E);
            b.fc2 = linear(p + "mlp.fc2", E, H);
            b.ada = linear(p + "adaln", 6 * E, C, Init::Zero);
            slots_.blocks.push_back(b);
        }
        slots_.finalNorm = vector("final.norm.gain", E, Init::One);
        slots_.finalAda = linear("final.adaln", 2 * E, C, Init::Zero);
        slots_.finalLinear = linear("final.linear", c.patch_voxels(), E, Init::Zero);
    }

    std::size_t size() const { return total_; }
    const std::vector<Segment>& segments() const { return segments_; }
    const NetSlots& slots() const { return slots_; }

    const Segment& find(const std::string& name) const {
        for (const auto& s : segments_)
            if (s.name == name) return s;
        throw Error("no parameter segment named '" + name + "'");
    }

private:
    std::size_t push(std::string name, std::size_t rows, std::size_t cols, Init init) {
        const std::size_t off = total_;
        segments_.push_back({std::move(name), off, rows, cols, init});
        total_ += rows * cols;
        return off;
    }
    LinearSlot linear(const std::string& name, int out, int in, Init init = Init::TruncNormal) {
        LinearSlot s;
        s.out = out;
        s.in = in;
        s.w = push(name + ".weight", out, in, init);
        s.b = push(name + ".bias", out, 1, Init::Zero);
        return s;
    }
    std::size_t vector(const std::string& name, int n, Init init) { return push(name, n, 1, init); }

    std::vector<Segment> segments_;
    NetSlots slots_;
    std::size_t total_ = 0;
};

/// Initial parameters: truncated normal (std 0.02, cut at 2 std) for linear maps,
/// zeros for biases, modulation heads and the output projection, ones for norm gains.
template <class T>
ParamVector<T> initial_parameters(const ParamLayout& layout, std::uint64_t seed) {
    ParamVector<T> p(layout.size(), T(0));
    std::mt19937_64 eng(splitmix64(seed));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (const auto& s : layout.segments()) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            T v = T(0);
            if (s.init == Init::One) {
                v = T(1);
            } else if (s.init == Init::TruncNormal) {
                double z;
                do z = nd(eng);
                while (std::abs(z) > 2.0);
                v = T(0.02 * z);
            }
            p[s.offset + i] = v;
        }
    }
    return p;
}

/// (side/p)^3 tokens of p^3 voxels, patches and voxels within a patch both z-fastest.
template <class T>
Mat<T> patchify(const Volume& v, int patchSide) {
    const auto d = v.dims();
    if (d.nx != d.ny || d.ny != d.nz) throw ShapeError("patchify: volume must be cubic, got " + d.str());
    const int side = static_cast<int>(d.nx);
    if (patchSide <= 0 || side % patchSide != 0)
        throw ShapeError("patchify: side " + std::to_string(side) + " not divisible by patch " +
                         std::to_string(patchSide));
    const int g = side / patchSide, pv = patchSide * patchSide * patchSide;
    Mat<T> out(g * g * g, pv);
    for (int px = 0; px < g; ++px)
        for (int py = 0; py < g; ++py)
            for (int pz = 0; pz < g; ++pz) {
                const int tok = (px * g + py) * g + pz;
                int k = 0;
                for (int dx = 0; dx < patchSide; ++dx)
                    for (int dy = 0; dy < patchSide; ++dy)
                        for (int dz = 0; dz < patchSide; ++dz)
                            out(tok, k++) = T(v.at(px * patchSide + dx, py * patchSide + dy, pz * patchSide + dz));
            }
    return out;
}

template <class T>
Volume unpatchify(const Mat<T>& tokens, int side, int patchSide) {
    const int g = side / patchSide;
    if (tokens.rows() != g * g * g || tokens.cols() != patchSide * patchSide * patchSide)
        throw ShapeError("unpatchify: token matrix shape does not match volume");
    Volume v = Volume::cube(static_cast<std::uint32_t>(side));
    for (int px = 0; px < g; ++px)
        for (int py = 0; py < g; ++py)
            for (int pz = 0; pz < g; ++pz) {
                const int tok = (px * g + py) * g + pz;
                int k = 0;
                for (int dx = 0; dx < patchSide; ++dx)
                    for (int dy = 0; dy < patchSide; ++dy)
                        for (int dz = 0; dz < patchSide; ++dz)
                            v.at(px * patchSide + dx, py * patchSide + dy, pz * patchSide + dz) =
                                double(tokens(tok, k++));
            }
    return v;
}

/// Fixed 3D sine-cosine table (gridSide^3 x embedDim). Each axis gets a band of
/// 2*floor(embedDim/6) entries [sin..., cos...] in x, y, z order; leftovers are zero.
inline Mat<double> pos_embed(int n, int gridSide, int embedDim) {
    if (n != gridSide * gridSide * gridSide) throw ShapeError("pos_embed: n must equal gridSide^3");
    const int band = 2 * (embedDim / 6), half = band / 2;
    Mat<double> table = Mat<double>::Zero(n, embedDim);
    for (int px = 0; px < gridSide; ++px)
        for (int py = 0; py < gridSide; ++py)
            for (int pz = 0; pz < gridSide; ++pz) {
                const int tok = (px * gridSide + py) * gridSide + pz;
                const std::array<int, 3> coord{px, py, pz};
                for (int axis = 0; axis < 3; ++axis)
                    for (int k = 0; k < half; ++k) {
                        const double omega = std::pow(10000.0, -double(k) / double(half));
                        table(tok, axis * band + k) = std::sin(coord[axis] * omega);
                        table(tok, axis * band + half + k) = std::cos(coord[axis] * omega);
                    }
            }
    return table;
}

/// Sinusoidal features of the noise-conditioning scalar ([cos..., sin...], max period 1e4).
inline Vec<double> timestep_features(double cNoise, int dim) {
    const double v = 1000.0 * cNoise;
    const int half = dim / 2;
    Vec<double> f(dim);
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
        f(k) = std::cos(v * freq);
        f(half + k) = std::sin(v * freq);
    }
    return f;
}

template <class T>
struct BlockCache {
    Mat<T> n1, h1, m1, qkv, o, a, n2, h2, m2, hid, act, f;
    Vec<T> r1, r2, mod;
    std::vector<Mat<T>> probs;
};

template <class T>
struct NetCache {
    Mat<T> tokens;
    Vec<T> tf, th1, temb, af, ah1, ah2, aemb, cond, sc;
    std::vector<BlockCache<T>> blocks;
    Mat<T> nf, hf, mf;
    Vec<T> rf, modf;
};

namespace detail {

template <class T>
Mat<T> scale_cols(const Mat<T>& m, const Vec<T>& s) {
    return (m.array().rowwise() * s.transpose().array()).matrix();
}

// m = h * (1 + scale) + shift, per column
template <class T>
Mat<T> modulate(const Mat<T>& h, const Eigen::Ref<const Vec<T>>& shift, const Eigen::Ref<const Vec<T>>& scale) {
    Mat<T> m = (h.array().rowwise() * (scale.array() + T(1)).transpose()).matrix();
    m.rowwise() += shift.transpose();
    return m;
}

template <class T>
Vec<T> col_sum_product(const Mat<T>& a, const Mat<T>& b) {
    return (a.array() * b.array()).colwise().sum().transpose().matrix();
}

}  // namespace detail

/// The backbone F: tokens in, per-token voxel predictions out.
template <class T>
class Network {
public:
    explicit Network(const NetConfig& cfg)
        : cfg_(cfg), layout_(cfg), pos_(pos_embed(cfg.tokens(), cfg.grid_side(), cfg.embedDim).template cast<T>()) {}

    const NetConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return layout_; }
    const Mat<T>& positions() const { return pos_; }

    Vec<T> condition(const T* p, double cNoise, const std::array<double, kAuxFeatures>& aux, NetCache<T>& c) const {
        const auto& s = layout_.slots();
        c.tf = timestep_features(cNoise, cfg_.timeFreqDim).template cast<T>();
        c.th1 = nn::linear_vec(p, s.tFc1, c.tf);
        c.temb = nn::linear_vec(p, s.tFc2, nn::silu_vec(c.th1));
        c.af = Eigen::Map<const Vec<double>>(aux.data(), kAuxFeatures).template cast<T>();
        c.ah1 = nn::linear_vec(p, s.aFc1, c.af);
        c.ah2 = nn::linear_vec(p, s.aFc2, nn::silu_vec(c.ah1));
        c.aemb = nn::linear_vec(p, s.aFc3, nn::silu_vec(c.ah2));
        const int E = cfg_.embedDim;
        switch (cfg_.fusion) {
            case Fusion::Concat:
                c.cond.resize(2 * E);
                c.cond << c.temb, c.aemb;
                break;
            case Fusion::Add: c.cond = c.temb + c.aemb; break;
            case Fusion::Multiply: c.cond = c.temb.cwiseProduct(c.aemb); break;
        }
        c.sc = nn::silu_vec(c.cond);
        return c.sc;
    }

    Mat<T> block_forward(const T* p, const BlockSlots& b, const Mat<T>& x, const Vec<T>& sc, BlockCache<T>& c) const {
        const int E = cfg_.embedDim, nh = cfg_.nHeads, dh = cfg_.head_dim();
        const Eigen::Index n = x.rows();
        c.mod = nn::linear_vec(p, b.ada, sc);
        const auto shift1 = c.mod.segment(0, E), scale1 = c.mod.segment(E, E), gate1 = c.mod.segment(2 * E, E);
        const auto shift2 = c.mod.segment(3 * E, E), scale2 = c.mod.segment(4 * E, E),
                   gate2 = c.mod.segment(5 * E, E);
        const nn::CVecMap<T> g1(p + b.norm1, E), g2(p + b.norm2, E);

        c.n1 = nn::layer_norm(x, c.r1);
        c.h1 = detail::scale_cols<T>(c.n1, g1);
        c.m1 = detail::modulate<T>(c.h1, shift1, scale1);
        c.qkv = nn::linear_rows(p, b.qkv, c.m1);
        c.o.resize(n, E);
        c.probs.resize(nh);
        const T scale = T(1) / std::sqrt(T(dh));
        for (int h = 0; h < nh; ++h) {
            const auto q = c.qkv.middleCols(h * dh, dh);
            const auto k = c.qkv.middleCols(E + h * dh, dh);
            const auto v = c.qkv.middleCols(2 * E + h * dh, dh);
            Mat<T>& pr = c.probs[h];
            pr.resize(n, n);
            pr.noalias() = q * k.transpose();
            pr *= scale;
            nn::softmax_rows(pr);
            c.o.middleCols(h * dh, dh).noalias() = pr * v;
        }
        c.a = nn::linear_rows(p, b.proj, c.o);
        Mat<T> x1 = x + detail::scale_cols<T>(c.a, gate1);

        c.n2 = nn::layer_norm(x1, c.r2);
        c.h2 = detail::scale_cols<T>(c.n2, g2);
        c.m2 = detail::modulate<T>(c.h2, shift2, scale2);
        c.hid = nn::linear_rows(p, b.fc1, c.m2);
        c.act = c.hid.unaryExpr([](T v) { return nn::gelu(v); });
        c.f = nn::linear_rows(p, b.fc2, c.act);
        return x1 + detail::scale_cols<T>(c.f, gate2);
    }

    /// Backward through one block; accumulates parameter gradients and d(silu(cond)).
    Mat<T> block_backward(const T* p, T* g, const BlockSlots& b, const Vec<T>& sc, const BlockCache<T>& c,
                          const Mat<T>& dx2, Vec<T>& dsc) const {
        const int E = cfg_.embedDim, nh = cfg_.nHeads, dh = cfg_.head_dim();
        const auto scale1 = c.mod.segment(E, E), gate1 = c.mod.segment(2 * E, E);
        const auto scale2 = c.mod.segment(4 * E, E), gate2 = c.mod.segment(5 * E, E);
        const nn::CVecMap<T> g1(p + b.norm1, E), g2(p + b.norm2, E);
        nn::VecMap<T> dg1(g + b.norm1, E), dg2(g + b.norm2, E);
        Vec<T> dmod = Vec<T>::Zero(6 * E);

        // MLP branch
        dmod.segment(5 * E, E) = detail::col_sum_product<T>(dx2, c.f);
        const Mat<T> df = detail::scale_cols<T>(dx2, gate2);
        Mat<T> dact = nn::linear_rows_backward(p, g, b.fc2, c.act, df);
        const Mat<T> dhid = (dact.array() * c.hid.unaryExpr([](T v) { return nn::gelu_grad(v); }).array()).matrix();
        const Mat<T> dm2 = nn::linear_rows_backward(p, g, b.fc1, c.m2, dhid);
        dmod.segment(4 * E, E) = detail::col_sum_product<T>(dm2, c.h2);
        dmod.segment(3 * E, E) = dm2.colwise().sum().transpose();
        const Mat<T> dh2 = (dm2.array().rowwise() * (scale2.array() + T(1)).transpose()).matrix();
        dg2 += detail::col_sum_product<T>(dh2, c.n2);
        Mat<T> dx1 = dx2 + nn::layer_norm_backward<T>(detail::scale_cols<T>(dh2, g2), c.n2, c.r2);

        // attention branch
        dmod.segment(2 * E, E) = detail::col_sum_product<T>(dx1, c.a);
        const Mat<T> da = detail::scale_cols<T>(dx1, gate1);
        const Mat<T> dO = nn::linear_rows_backward(p, g, b.proj, c.o, da);
        Mat<T> dqkv(c.qkv.rows(), 3 * E);
        const T scale = T(1) / std::sqrt(T(dh));
        for (int h = 0; h < nh; ++h) {
            const auto q = c.qkv.middleCols(h * dh, dh);
            const auto k = c.qkv.middleCols(E + h * dh, dh);
            const auto v = c.qkv.middleCols(2 * E + h * dh, dh);
            const Mat<T>& pr = c.probs[h];
            const auto dOh = dO.middleCols(h * dh, dh);
            dqkv.middleCols(2 * E + h * dh, dh).noalias() = pr.transpose() * dOh;
            Mat<T> dp(pr.rows(), pr.cols());
            dp.noalias() = dOh * v.transpose();
            const Vec<T> rs = (dp.array() * pr.array()).rowwise().sum();
            Mat<T> ds = (pr.array() * (dp.array().colwise() - rs.array())).matrix();
            ds *= scale;
            dqkv.middleCols(h * dh, dh).noalias() = ds * k;
            dqkv.middleCols(E + h * dh, dh).noalias() = ds.transpose() * q;
        }
        const Mat<T> dm1 = nn::linear_rows_backward(p, g, b.qkv, c.m1, dqkv);
        dmod.segment(E, E) = detail::col_sum_product<T>(dm1, c.h1);
        dmod.segment(0, E) = dm1.colwise().sum().transpose();
        const Mat<T> dh1 = (dm1.array().rowwise() * (scale1.array() + T(1)).transpose()).matrix();
        dg1 += detail::col_sum_product<T>(dh1, c.n1);
        Mat<T> dx = dx1 + nn::layer_norm_backward<T>(detail::scale_cols<T>(dh1, g1), c.n1, c.r1);

        dsc += nn::linear_vec_backward(p, g, b.ada, sc, dmod);
        return dx;
    }

    /// tokens: (n x in_channels * p^3). Returns (n x p^3).
    Mat<T> forward(const T* p, const Mat<T>& tokens, double cNoise, const std::array<double, kAuxFeatures>& aux,
                   NetCache<T>& c) const {
        const auto& s = layout_.slots();
        const int E = cfg_.embedDim;
        c.tokens = tokens;
        Mat<T> x = nn::linear_rows(p, s.patch, tokens);
        x += pos_;
        condition(p, cNoise, aux, c);
        c.blocks.resize(s.blocks.size());
        for (std::size_t k = 0; k < s.blocks.size(); ++k) x = block_forward(p, s.blocks[k], x, c.sc, c.blocks[k]);
        c.modf = nn::linear_vec(p, s.finalAda, c.sc);
        const nn::CVecMap<T> gf(p + s.finalNorm, E);
        c.nf = nn::layer_norm(x, c.rf);
        c.hf = detail::scale_cols<T>(c.nf, gf);
        c.mf = detail::modulate<T>(c.hf, c.modf.segment(0, E), c.modf.segment(E, E));
        return nn::linear_rows(p, s.finalLinear, c.mf);
    }

    /// Accumulates d(loss)/d(params) into g given d(loss)/d(output).
    void backward(const T* p, T* g, const NetCache<T>& c, const Mat<T>& dout) const {
        const auto& s = layout_.slots();
        const int E = cfg_.embedDim;
        Vec<T> dsc = Vec<T>::Zero(c.sc.size());

        const Mat<T> dmf = nn::linear_rows_backward(p, g, s.finalLinear, c.mf, dout);
        Vec<T> dmodf(2 * E);
        dmodf.segment(0, E) = dmf.colwise().sum().transpose();
        dmodf.segment(E, E) = detail::col_sum_product<T>(dmf, c.hf);
        const Mat<T> dhf = (dmf.array().rowwise() * (c.modf.segment(E, E).array() + T(1)).transpose()).matrix();
        const nn::CVecMap<T> gf(p + s.finalNorm, E);
        nn::VecMap<T>(g + s.finalNorm, E) += detail::col_sum_product<T>(dhf, c.nf);
        Mat<T> dx = nn::layer_norm_backward<T>(detail::scale_cols<T>(dhf, gf), c.nf, c.rf);
        dsc += nn::linear_vec_backward(p, g, s.finalAda, c.sc, dmodf);

        for (std::size_t k = s.blocks.size(); k-- > 0;)
            dx = block_backward(p, g, s.blocks[k], c.sc, c.blocks[k], dx, dsc);

        nn::linear_rows_backward(p, g, s.patch, c.tokens, dx);

        const Vec<T> dcond = dsc.cwiseProduct(c.cond.unaryExpr([](T v) { return nn::silu_grad(v); }));
        Vec<T> dtemb, daemb;
        switch (cfg_.fusion) {
            case Fusion::Concat:
                dtemb = dcond.segment(0, E);
                daemb = dcond.segment(E, E);
                break;
            case Fusion::Add:
                dtemb = dcond;
                daemb = dcond;
                break;
            case Fusion::Multiply:
                dtemb = dcond.cwiseProduct(c.aemb);
                daemb = dcond.cwiseProduct(c.temb);
                break;
        }
        const auto silu_back = [](const Vec<T>& d, const Vec<T>& pre) {
            return Vec<T>(d.cwiseProduct(pre.unaryExpr([](T v) { return nn::silu_grad(v); })));
        };
        {
            const Vec<T> da2 = nn::linear_vec_backward(p, g, s.aFc3, nn::silu_vec(c.ah2), daemb);
            const Vec<T> da1 = nn::linear_vec_backward(p, g, s.aFc2, nn::silu_vec(c.ah1), silu_back(da2, c.ah2));
            nn::linear_vec_backward(p, g, s.aFc1, c.af, silu_back(da1, c.ah1));
        }
        {
            const Vec<T> dt1 = nn::linear_vec_backward(p, g, s.tFc2, nn::silu_vec(c.th1), dtemb);
            nn::linear_vec_backward(p, g, s.tFc1, c.tf, silu_back(dt1, c.th1));
        }
    }

private:
    NetConfig cfg_;
    ParamLayout layout_;
    Mat<T> pos_;
};

/// The pred-x denoiser D_theta: backbone parameters plus schedule and data statistics.
template <class T = float>
class DenoiserModel {
public:
    using Scalar = T;

    DenoiserModel(const NetConfig& cfg, const bridge::BridgeSchedule& sched, const bridge::DataStats& stats,
                  std::uint64_t initSeed = 0)
        : net_(cfg), sched_(sched), stats_(stats), params_(initial_parameters<T>(net_.layout(), initSeed)) {
        sched_.validate();
        stats_.validate();
    }

    const NetConfig& config() const { return net_.config(); }
    const Network<T>& network() const { return net_; }
    const ParamLayout& layout() const { return net_.layout(); }
    const bridge::BridgeSchedule& schedule() const { return sched_; }
    const bridge::DataStats& stats() const { return stats_; }
    void set_stats(const bridge::DataStats& s) {
        s.validate();
        stats_ = s;
    }
    ParamVector<T>& parameters() { return params_; }
    const ParamVector<T>& parameters() const { return params_; }
    std::size_t parameter_count() const { return params_.size(); }

    Mat<T> input_tokens(const Volume& xt, double cIn, const Volume& y) const {
        const auto& c = config();
        check_shape(xt, "x_t");
        check_shape(y, "y");
        Volume scaled = xt;
        for (auto& v : scaled.raw()) v *= cIn;
        const int pv = c.patch_voxels();
        Mat<T> tok(c.tokens(), c.in_channels() * pv);
        tok.leftCols(pv) = patchify<T>(scaled, c.patchSide);
        if (c.sourceChannel) tok.rightCols(pv) = patchify<T>(y, c.patchSide);
        return tok;
    }

    /// F_theta evaluated at the scaled input, returned as a volume.
    Volume backbone(const Volume& xt, double t, const Volume& y, const AuxVector& aux, NetCache<T>* cache = nullptr) const {
        const auto sc = bridge::scalings(sched_, stats_, t);
        NetCache<T> local;
        NetCache<T>& c = cache ? *cache : local;
        const Mat<T> out = net_.forward(params_.data(), input_tokens(xt, sc.cIn, y), sc.cNoise, aux.features(), c);
        return unpatchify(out, config().volumeSide, config().patchSide);
    }

    Volume denoise(const Volume& xt, double t, const Volume& y, const AuxVector& aux) const {
        const auto sc = bridge::scalings(sched_, stats_, t);
        const Volume f = backbone(xt, t, y, aux);
        Volume d(xt.dims());
        for (std::size_t i = 0; i < xt.size(); ++i) d[i] = sc.cSkip * xt[i] + sc.cOut * f[i];
        return d;
    }

    /// loss = weight * mean((D - x0)^2); d(loss)/d(params) is added into grad.
    double loss_and_gradient(const Volume& xt, double t, const Volume& y, const AuxVector& aux, const Volume& x0,
                             double weight, std::span<T> grad) const {
        if (grad.size() != params_.size()) throw ShapeError("gradient buffer size does not match parameters");
        require_same_shape(xt, x0, "loss_and_gradient");
        const auto sc = bridge::scalings(sched_, stats_, t);
        NetCache<T> cache;
        const Volume f = backbone(xt, t, y, aux, &cache);
        const double n = double(xt.size());
        double loss = 0.0;
        Volume dF(xt.dims());
        for (std::size_t i = 0; i < xt.size(); ++i) {
            const double r = sc.cSkip * xt[i] + sc.cOut * f[i] - x0[i];
            loss += r * r;
            dF[i] = weight * 2.0 * r / n * sc.cOut;
        }
        loss *= weight / n;
        const Mat<T> dout = patchify<T>(dF, config().patchSide);
        net_.backward(params_.data(), grad.data(), cache, dout);
        return loss;
    }

    template <class U>
    DenoiserModel<U> cast() const {
        DenoiserModel<U> m(config(), sched_, stats_);
        auto& q = m.parameters();
        for (std::size_t i = 0; i < params_.size(); ++i) q[i] = U(params_[i]);
        return m;
    }

private:
    void check_shape(const Volume& v, const char* what) const {
        const auto s = static_cast<std::uint32_t>(config().volumeSide);
        if (v.dims() != Dims{s, s, s})
            throw ShapeError(std::string("denoiser: ") + what + " has dims " + v.dims().str() + ", expected " +
                             std::to_string(s) + "^3");
    }

    Network<T> net_;
    bridge::BridgeSchedule sched_;
    bridge::DataStats stats_;
    ParamVector<T> params_;
};

}  // namespace sim2p::net
