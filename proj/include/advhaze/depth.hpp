#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "advhaze/error.hpp"
#include "advhaze/image.hpp"

namespace advhaze {

/// Deterministic depth fixtures used when no estimated depth map is available.
struct SyntheticDepth {
    enum class Kind { h_ramp, v_ramp, radial, constant };

    Kind kind = Kind::v_ramp;
    double value = 0.0;  // only for Kind::constant

    /// Accepts "h-ramp", "v-ramp", "radial" or "constant:<c>".
    static SyntheticDepth parse(const std::string& spec) {
        if (spec == "h-ramp") return {Kind::h_ramp};
        if (spec == "v-ramp") return {Kind::v_ramp};
        if (spec == "radial") return {Kind::radial};
        const std::string prefix = "constant:";
        if (spec.rfind(prefix, 0) == 0) {
            try {
                return {Kind::constant, std::stod(spec.substr(prefix.size()))};
            } catch (const std::exception&) {
            }
        }
        throw ConfigError("unknown synthetic depth kind: " + spec);
    }

    std::string name() const {
        switch (kind) {
            case Kind::h_ramp: return "h-ramp";
            case Kind::v_ramp: return "v-ramp";
            case Kind::radial: return "radial";
            case Kind::constant: break;
        }
        return "constant:" + std::to_string(value);
    }
};

/// h-ramp: col/(w-1); v-ramp: row/(h-1); radial: distance from the center
/// divided by the corner distance; constant: c. Degenerate 1-pixel axes give 0.
inline DepthMap synthetic_depth(const SyntheticDepth& spec, std::size_t h, std::size_t w) {
    if (spec.kind == SyntheticDepth::Kind::constant && !(spec.value >= 0.0 && spec.value <= 1.0)) {
        throw DomainError("synthetic_depth: constant must lie in [0,1]");
    }
    ScalarField d(h, w);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double max_dist = std::hypot(cy, cx);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double v = 0.0;
            switch (spec.kind) {
                case SyntheticDepth::Kind::h_ramp:
                    v = w > 1 ? static_cast<double>(c) / static_cast<double>(w - 1) : 0.0;
                    break;
                case SyntheticDepth::Kind::v_ramp:
                    v = h > 1 ? static_cast<double>(r) / static_cast<double>(h - 1) : 0.0;
                    break;
                case SyntheticDepth::Kind::radial:
                    v = max_dist > 0.0 ? std::hypot(static_cast<double>(r) - cy, static_cast<double>(c) - cx) / max_dist
                                       : 0.0;
                    break;
                case SyntheticDepth::Kind::constant:
                    v = spec.value;
                    break;
            }
            d(r, c) = std::clamp(v, 0.0, 1.0);
        }
    }
    return DepthMap(std::move(d));
}

}  // namespace advhaze
