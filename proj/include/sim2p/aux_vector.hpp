#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sim2p/error.hpp"

namespace sim2p {

inline constexpr std::size_t kAuxVariables = 13;
inline constexpr std::size_t kAuxFeatures = 2 * kAuxVariables;

inline constexpr std::array<std::string_view, kAuxVariables> kAuxNames = {
    "age",        "gender",   "education", "mmse",     "adas13",      "apoe4",       "seg_csf",
    "seg_gm",     "seg_wm",   "seg_hippo_l", "seg_hippo_r", "seg_ent_l", "seg_ent_r"};

inline std::size_t aux_index(std::string_view name) {
    for (std::size_t i = 0; i < kAuxVariables; ++i)
        if (kAuxNames[i] == name) return i;
    throw ConfigError("unknown auxiliary variable '" + std::string(name) + "'");
}

/// Standardized values followed by presence flags. A missing variable has value 0 and flag 0.
struct AuxVector {
    std::array<double, kAuxVariables> values{};
    std::array<double, kAuxVariables> flags{};

    std::array<double, kAuxFeatures> features() const {
        std::array<double, kAuxFeatures> f{};
        for (std::size_t i = 0; i < kAuxVariables; ++i) {
            f[i] = values[i];
            f[kAuxVariables + i] = flags[i];
        }
        return f;
    }
    bool operator==(const AuxVector&) const = default;
};

}  // namespace sim2p
