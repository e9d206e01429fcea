#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "advhaze/cnn.hpp"
#include "advhaze/image.hpp"
#include "advhaze/resize.hpp"

namespace advhaze {

// Procedural outdoor scenes: a sky gradient above a textured ground plane,
// with one object standing on the ground. The object's silhouette is the
// class. Colors, placement, scale, horizon height and textures are random,
// so color carries no label information. Each scene comes with a consistent
// relative depth map: sky at 1, ground receding from 0 (bottom row) to 1
// (horizon), and the object at the depth of its ground contact point.

inline constexpr std::size_t scene_class_count = 10;

inline const std::array<const char*, scene_class_count>& scene_class_names() {
    static const std::array<const char*, scene_class_count> names = {
        "disk", "square", "triangle-up", "ring", "plus", "h-bar", "v-bar", "diamond", "x-cross", "triangle-down"};
    return names;
}

struct Scene {
    Image image;
    DepthMap depth;
    std::size_t label = 0;
};

namespace corpus_detail {

// (u, v) are object-centered coordinates scaled so the silhouette fits [-1,1]^2; v grows downward.
inline bool inside(std::size_t label, double u, double v) {
    const double au = std::abs(u), av = std::abs(v);
    switch (label) {
        case 0: return u * u + v * v <= 1.0;
        case 1: return std::max(au, av) <= 0.85;
        case 2: return v >= -0.9 && v <= 0.9 && au <= (v + 0.9) / 1.8;
        case 3: {
            const double r = std::sqrt(u * u + v * v);
            return r >= 0.55 && r <= 1.0;
        }
        case 4: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
        case 5: return au <= 1.0 && av <= 0.35;
        case 6: return av <= 1.0 && au <= 0.35;
        case 7: return au + av <= 1.0;
        case 8: return std::max(au, av) <= 1.0 && (std::abs(u - v) <= 0.42 || std::abs(u + v) <= 0.42);
        case 9: return v >= -0.9 && v <= 0.9 && au <= (0.9 - v) / 1.8;
        default: return false;
    }
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

inline double normal(std::mt19937_64& rng) {
    const double u1 = std::max(unit_uniform(rng), 1e-300);
    const double u2 = unit_uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

// Smooth value noise on a coarse lattice, bilinearly upsampled.
inline std::vector<double> value_noise(std::mt19937_64& rng, std::size_t size, std::size_t cells) {
    std::vector<double> lattice((cells + 1) * (cells + 1));
    for (double& v : lattice) v = uniform(rng, -1.0, 1.0);
    std::vector<double> out(size * size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double fy = static_cast<double>(y) / static_cast<double>(size) * static_cast<double>(cells);
            const double fx = static_cast<double>(x) / static_cast<double>(size) * static_cast<double>(cells);
            const auto iy = static_cast<std::size_t>(fy), ix = static_cast<std::size_t>(fx);
            const double ty = fy - static_cast<double>(iy), tx = fx - static_cast<double>(ix);
            auto at = [&](std::size_t r, std::size_t c) { return lattice[r * (cells + 1) + c]; };
            const double top = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
            const double bot = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
            out[y * size + x] = top * (1 - ty) + bot * ty;
        }
    }
    return out;
}

}  // namespace corpus_detail

struct SceneObject {
    std::size_t label = 0;
    double cx = 0, cy = 0, radius = 1;
    std::array<double, 3> color{};
    double depth = 0;
    double shade = 0;
};

/// Renders one scene of class `label` on a size x size canvas. Scenes are
/// meant to be rendered well above the classifier's input side (128 px is
/// the default native size) and downsampled for it. The image is
/// already quantized to 8-bit levels so that saving it as PNG is lossless.
inline Scene render_scene(std::size_t label, std::size_t size, std::mt19937_64& rng) {
    using namespace corpus_detail;
    if (label >= scene_class_count) throw DomainError("render_scene: unknown class");
    if (size < 8) throw ShapeError("render_scene: canvas too small");
    const double s = static_cast<double>(size);

    const double horizon = std::floor(s * uniform(rng, 0.28, 0.45));
    std::array<double, 3> sky_top{}, sky_low{}, ground{};
    const double sky_base = uniform(rng, 0.45, 0.85);
    for (std::size_t c = 0; c < 3; ++c) {
        sky_top[c] = std::clamp(sky_base + uniform(rng, -0.2, 0.2) + (c == 2 ? 0.12 : 0.0), 0.0, 1.0);
        sky_low[c] = std::clamp(sky_top[c] + uniform(rng, 0.05, 0.2), 0.0, 1.0);
        ground[c] = uniform(rng, 0.12, 0.6);
    }

    auto ground_depth = [&](double row) {
        const double span = s - 1.0 - horizon;
        return std::clamp((s - 1.0 - row) / span, 0.0, 1.0);
    };
    // Objects stand on the ground and shrink with distance.
    auto place = [&](std::size_t cls, double depth_lo, double depth_hi, double scale, double min_contrast) {
        SceneObject o;
        o.label = cls;
        const double contact_depth = uniform(rng, depth_lo, depth_hi);
        const double contact_row = std::round(s - 1.0 - contact_depth * (s - 1.0 - horizon));
        o.radius = scale * s * (0.3 - 0.15 * contact_depth);
        o.cx = s / 2.0 + s * uniform(rng, -0.3, 0.3) * (scale < 1.0 ? 1.0 : 0.5);
        o.cy = contact_row - 0.9 * o.radius;
        o.depth = ground_depth(contact_row);
        do {
            for (double& v : o.color) v = uniform(rng, 0.0, 1.0);
        } while (std::abs(luminance(o.color) - luminance(ground)) < min_contrast);
        o.shade = uniform(rng, 0.05, 0.2);
        return o;
    };

    // Far-to-near: up to two small distractors of arbitrary class, then the labeled object.
    std::vector<SceneObject> objects;
    const std::size_t distractors = static_cast<std::size_t>(unit_uniform(rng) * 3.0);
    for (std::size_t k = 0; k < distractors; ++k) {
        const auto cls = static_cast<std::size_t>(unit_uniform(rng) * scene_class_count);
        objects.push_back(place(cls, 0.8, 0.98, 0.45, 0.05));
    }
    objects.push_back(place(label, 0.35, 0.8, 1.0, 0.06));

    const auto tex = value_noise(rng, size, 6);
    const auto fine = value_noise(rng, size, 14);
    const double tex_amp = uniform(rng, 0.05, 0.14);

    Image img(size, size);
    ScalarField depth(size, size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double fy = static_cast<double>(y), fx = static_cast<double>(x);
            const std::size_t p = y * size + x;
            std::array<double, 3> px{};
            double d;
            if (fy < horizon) {
                const double w = horizon > 1 ? fy / (horizon - 1.0) : 1.0;
                for (std::size_t c = 0; c < 3; ++c) px[c] = sky_top[c] * (1 - w) + sky_low[c] * w + 0.03 * tex[p];
                d = 1.0;
            } else {
                for (std::size_t c = 0; c < 3; ++c) px[c] = ground[c] + tex_amp * (tex[p] + 0.6 * fine[p]);
                d = ground_depth(fy);
            }

            for (const auto& o : objects) {
                // 2x2 supersampled coverage for anti-aliased edges.
                double cover = 0.0;
                for (double oy : {0.25, 0.75})
                    for (double ox : {0.25, 0.75})
                        cover += inside(o.label, (fx + ox - 0.5 - o.cx) / o.radius, (fy + oy - 0.5 - o.cy) / o.radius) ? 0.25 : 0.0;
                if (cover == 0.0) continue;
                const double light = 1.0 + o.shade * ((o.cy - fy) / o.radius) * 0.5;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double v = o.color[c] * light + 0.7 * tex_amp * fine[p];
                    px[c] = px[c] * (1 - cover) + v * cover;
                }
                if (cover > 0.5) d = o.depth;
            }

            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(px[c] + 0.025 * normal(rng), 0.0, 1.0);
                img(y, x, c) = std::floor(v * 255.0 + 0.5) / 255.0;
            }
            depth(y, x) = d;
        }
    }
    return {std::move(img), DepthMap(std::move(depth)), label};
}

/// `count` scenes with labels cycling through the classes, fully determined by `seed`.
inline std::vector<Scene> generate_scenes(std::size_t count, std::size_t size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Scene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(render_scene(i % scene_class_count, size, rng));
    return out;
}

inline std::vector<LabeledExample> to_examples(const std::vector<Scene>& scenes, std::size_t side) {
    std::vector<LabeledExample> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back({resize_bilinear(s.image, side, side), s.label});
    return out;
}

/// Same scenes as generate_scenes(count, size, seed), resized to `side` one at
/// a time so full-resolution images are never held together.
inline std::vector<LabeledExample> generate_examples(std::size_t count, std::size_t size, std::size_t side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledExample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Scene s = render_scene(i % scene_class_count, size, rng);
        out.push_back({resize_bilinear(s.image, side, side), s.label});
    }
    return out;
}

}  // namespace advhaze
