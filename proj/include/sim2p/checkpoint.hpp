#pragma once

// Model checkpoint: "SIM2P-CKPT", version, network config, schedule, data
// statistics, float32 parameters, parameter count and a trailing CRC32.

#include <filesystem>

#include "sim2p/binio.hpp"
#include "sim2p/network.hpp"

namespace sim2p::ckpt {

inline constexpr std::string_view kTag = "SIM2P-CKPT";
inline constexpr std::uint32_t kVersion = 1;

template <class T>
std::vector<std::uint8_t> encode(const net::DenoiserModel<T>& m) {
    io::ByteWriter w;
    w.tag(kTag);
    w.u32(kVersion);
    const auto& c = m.config();
    for (int v : {c.volumeSide, c.patchSide, c.embedDim, c.nBlocks, c.nHeads, c.auxDim, c.mlpRatio, c.timeFreqDim})
        w.u32(std::uint32_t(v));
    w.u32(static_cast<std::uint32_t>(c.fusion));
    w.u8(c.sourceChannel ? 1 : 0);
    const auto& s = m.schedule();
    w.u32(static_cast<std::uint32_t>(s.kind));
    w.f64(s.beta0);
    w.f64(s.tMin);
    w.f64(s.tMax);
    w.f64(s.sigmaMaxVE);
    const auto& st = m.stats();
    w.f64(st.var0);
    w.f64(st.varT);
    w.f64(st.cov0T);
    for (T p : m.parameters()) w.f32(float(p));
    w.u64(m.parameter_count());
    w.u32(io::crc32(w.buffer().data(), w.buffer().size()));
    return std::move(w.buffer());
}

template <class T = float>
net::DenoiserModel<T> decode(const std::vector<std::uint8_t>& buf, const std::string& what = "checkpoint") {
    if (buf.size() < kTag.size() + 12) throw FormatError(what + ": file too short");
    const std::size_t body = buf.size() - 4;
    {
        std::uint32_t stored = 0;
        for (int i = 0; i < 4; ++i) stored |= std::uint32_t(buf[body + i]) << (8 * i);
        if (stored != io::crc32(buf.data(), body)) throw FormatError(what + ": CRC mismatch (corrupted checkpoint)");
    }
    io::ByteReader r(buf, what);
    r.expect_tag(kTag);
    const auto version = r.u32();
    if (version != kVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    net::NetConfig c;
    for (int* f : {&c.volumeSide, &c.patchSide, &c.embedDim, &c.nBlocks, &c.nHeads, &c.auxDim, &c.mlpRatio,
                   &c.timeFreqDim})
        *f = int(r.u32());
    const auto fusion = r.u32();
    if (fusion > 2) throw FormatError(what + ": bad fusion code " + std::to_string(fusion));
    c.fusion = static_cast<net::Fusion>(fusion);
    c.sourceChannel = r.u8() != 0;
    bridge::BridgeSchedule s;
    const auto kind = r.u32();
    if (kind > 1) throw FormatError(what + ": bad schedule kind " + std::to_string(kind));
    s.kind = static_cast<bridge::ScheduleKind>(kind);
    s.beta0 = r.f64();
    s.tMin = r.f64();
    s.tMax = r.f64();
    s.sigmaMaxVE = r.f64();
    bridge::DataStats st;
    st.var0 = r.f64();
    st.varT = r.f64();
    st.cov0T = r.f64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(what + ": invalid network config: " + e.what());
    }
    net::DenoiserModel<T> m(c, s, st);
    const std::size_t n = m.parameter_count();
    if (r.remaining() != n * 4 + 8 + 4)
        throw FormatError(what + ": payload size does not match network config");
    for (std::size_t i = 0; i < n; ++i) m.parameters()[i] = T(r.f32());
    if (r.u64() != n) throw FormatError(what + ": parameter count mismatch");
    return m;
}

template <class T>
void save(const net::DenoiserModel<T>& m, const std::filesystem::path& path) {
    io::write_file(path, encode(m));
}

template <class T = float>
net::DenoiserModel<T> load(const std::filesystem::path& path) {
    return decode<T>(io::read_file(path), path.string());
}

}  // namespace sim2p::ckpt
