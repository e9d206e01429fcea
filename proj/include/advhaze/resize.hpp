#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "advhaze/image.hpp"

namespace advhaze {

// Bilinear resampling with pixel-center alignment and clamp-to-edge. The map
// is linear in the image, so resize_bilinear_adjoint is its exact transpose;
// gradients at the classifier input flow back to the native resolution
// through it.

namespace detail {

struct LerpTap {
    std::size_t lo;
    std::size_t hi;
    double w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
    std::vector<LerpTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace detail

inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (img.height() == out_h && img.width() == out_w) return img;
    const auto ty = detail::lerp_taps(img.height(), out_h);
    const auto tx = detail::lerp_taps(img.width(), out_w);
    Image out(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto& a = ty[y];
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto& b = tx[x];
            for (std::size_t c = 0; c < Image::channels; ++c) {
                const double top = (1.0 - b.w_hi) * img(a.lo, b.lo, c) + b.w_hi * img(a.lo, b.hi, c);
                const double bot = (1.0 - b.w_hi) * img(a.hi, b.lo, c) + b.w_hi * img(a.hi, b.hi, c);
                out(y, x, c) = (1.0 - a.w_hi) * top + a.w_hi * bot;
            }
        }
    }
    return out;
}

/// Transpose of resize_bilinear from (in_h, in_w) to grad's dimensions.
inline Image resize_bilinear_adjoint(const Image& grad, std::size_t in_h, std::size_t in_w) {
    if (grad.height() == in_h && grad.width() == in_w) return grad;
    const auto ty = detail::lerp_taps(in_h, grad.height());
    const auto tx = detail::lerp_taps(in_w, grad.width());
    Image out(in_h, in_w, 0.0);
    for (std::size_t y = 0; y < grad.height(); ++y) {
        const auto& a = ty[y];
        for (std::size_t x = 0; x < grad.width(); ++x) {
            const auto& b = tx[x];
            for (std::size_t c = 0; c < Image::channels; ++c) {
                const double g = grad(y, x, c);
                const double top = (1.0 - a.w_hi) * g;
                const double bot = a.w_hi * g;
                out(a.lo, b.lo, c) += (1.0 - b.w_hi) * top;
                out(a.lo, b.hi, c) += b.w_hi * top;
                out(a.hi, b.lo, c) += (1.0 - b.w_hi) * bot;
                out(a.hi, b.hi, c) += b.w_hi * bot;
            }
        }
    }
    return out;
}

}  // namespace advhaze
