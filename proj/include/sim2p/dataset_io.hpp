#pragma once

// Volume files ("SIM2PVOL") and the JSON-lines cohort manifest.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sim2p/binio.hpp"
#include "sim2p/cohort.hpp"

namespace sim2p::data {

namespace fs = std::filesystem;

inline constexpr std::string_view kVolumeTag = "SIM2PVOL";
inline constexpr std::uint8_t kVolumeVersion = 1;

inline std::vector<std::uint8_t> encode_volume(const Volume& v) {
    io::ByteWriter w;
    w.tag(kVolumeTag);
    w.u8(kVolumeVersion);
    w.u32(v.dims().nx);
    w.u32(v.dims().ny);
    w.u32(v.dims().nz);
    for (double x : v.values()) w.f32(float(x));
    return std::move(w.buffer());
}

inline Volume decode_volume(const std::vector<std::uint8_t>& buf, const std::string& what) {
    io::ByteReader r(buf, what);
    r.expect_tag(kVolumeTag);
    const auto ver = r.u8();
    if (ver != kVolumeVersion) throw FormatError(what + ": unsupported volume version " + std::to_string(ver));
    Dims d;
    d.nx = r.u32();
    d.ny = r.u32();
    d.nz = r.u32();
    if (r.remaining() != d.count() * 4)
        throw FormatError(what + ": payload of " + std::to_string(r.remaining()) + " bytes does not match dims " +
                          d.str());
    std::vector<double> data(d.count());
    for (auto& x : data) x = r.f32();
    return Volume(d, std::move(data));
}

inline void write_volume(const fs::path& p, const Volume& v) { io::write_file(p, encode_volume(v)); }
inline Volume read_volume(const fs::path& p) { return decode_volume(io::read_file(p), p.string()); }

struct ManifestEntry {
    std::string id;
    ClassLabel label = ClassLabel::CN;
    std::string structurePath;  // relative to the manifest directory
    std::string functionPath;
    AuxRaw aux{};
    Split split = Split::Train;
    std::uint64_t seed = 0;
};

inline nlohmann::ordered_json to_json(const ManifestEntry& e) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["class"] = to_string(e.label);
    j["structurePath"] = e.structurePath;
    j["functionPath"] = e.functionPath;
    nlohmann::ordered_json aux = nlohmann::ordered_json::object();
    for (std::size_t v = 0; v < kAuxVariables; ++v) {
        const std::string name(kAuxNames[v]);
        if (e.aux[v])
            aux[name] = *e.aux[v];
        else
            aux[name] = nullptr;
    }
    j["aux"] = aux;
    j["split"] = to_string(e.split);
    j["seed"] = e.seed;
    return j;
}

inline ManifestEntry entry_from_json(const nlohmann::json& j, const std::string& where) {
    try {
        ManifestEntry e;
        e.id = j.at("id").get<std::string>();
        e.label = class_from_string(j.at("class").get<std::string>());
        e.structurePath = j.at("structurePath").get<std::string>();
        e.functionPath = j.at("functionPath").get<std::string>();
        const auto& aux = j.at("aux");
        for (auto it = aux.begin(); it != aux.end(); ++it) {
            const auto v = aux_index(it.key());
            if (!it.value().is_null()) e.aux[v] = it.value().get<double>();
        }
        e.split = split_from_string(j.at("split").get<std::string>());
        e.seed = j.at("seed").get<std::uint64_t>();
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(where + ": " + ex.what());
    } catch (const ConfigError& ex) {
        throw FormatError(where + ": " + ex.what());
    }
}

/// Subjects with their split labels, in manifest order.
struct Cohort {
    std::vector<Subject> subjects;
    std::vector<Split> split;

    std::vector<const Subject*> of(Split s) const {
        std::vector<const Subject*> out;
        for (std::size_t i = 0; i < subjects.size(); ++i)
            if (split[i] == s) out.push_back(&subjects[i]);
        return out;
    }
    std::size_t count(Split s) const { return std::size_t(std::count(split.begin(), split.end(), s)); }
};

/// Writes volumes under dir/volumes and dir/manifest.jsonl. Returns the manifest path.
inline fs::path write_cohort(const fs::path& dir, const Cohort& c) {
    if (c.split.size() != c.subjects.size()) throw Error("write_cohort: split list does not match subjects");
    std::ostringstream out;
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
        const auto& s = c.subjects[i];
        ManifestEntry e{s.id, s.label, "volumes/" + s.id + "_structure.vol", "volumes/" + s.id + "_function.vol",
                        s.auxRaw, c.split[i], s.seed};
        write_volume(dir / e.structurePath, s.structure);
        write_volume(dir / e.functionPath, s.function);
        out << to_json(e).dump() << '\n';
    }
    const fs::path manifest = dir / "manifest.jsonl";
    io::write_text(manifest, out.str());
    return manifest;
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineNo);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& ex) {
            throw FormatError(where + ": " + ex.what());
        }
        out.push_back(entry_from_json(j, where));
    }
    return out;
}

inline Cohort load_cohort(const fs::path& manifest) {
    const auto entries = read_manifest(manifest);
    const fs::path dir = manifest.parent_path();
    Cohort c;
    for (const auto& e : entries) {
        Subject s;
        s.id = e.id;
        s.label = e.label;
        s.auxRaw = e.aux;
        s.seed = e.seed;
        s.structure = read_volume(dir / e.structurePath);
        s.function = read_volume(dir / e.functionPath);
        if (s.structure.dims() != s.function.dims())
            throw FormatError("manifest/volume mismatch for " + e.id + ": structure " + s.structure.dims().str() +
                              " vs function " + s.function.dims().str());
        c.subjects.push_back(std::move(s));
        c.split.push_back(e.split);
    }
    return c;
}

}  // namespace sim2p::data
