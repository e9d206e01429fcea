#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "advhaze/error.hpp"
#include "advhaze/image.hpp"

namespace advhaze {

/// Truncated, renormalized 2-D Gaussian stored in separable form: the 2-D
/// weight at offset (dy, dx) is taps[dy + radius] * taps[dx + radius].
class GaussianKernel {
public:
    GaussianKernel(double sigma, std::vector<double> taps)
        : sigma_(sigma), radius_(taps.size() / 2), taps_(std::move(taps)) {}

    double sigma() const noexcept { return sigma_; }
    std::size_t radius() const noexcept { return radius_; }
    std::size_t side() const noexcept { return 2 * radius_ + 1; }
    const std::vector<double>& taps() const noexcept { return taps_; }

    /// Offsets are in [-radius, radius].
    double weight(std::ptrdiff_t dy, std::ptrdiff_t dx) const {
        const auto r = static_cast<std::ptrdiff_t>(radius_);
        return taps_[static_cast<std::size_t>(dy + r)] * taps_[static_cast<std::size_t>(dx + r)];
    }

private:
    double sigma_;
    std::size_t radius_;
    std::vector<double> taps_;
};

/// Radius is ceil(3*sigma); taps are renormalized so the 2-D mass is 1.
inline GaussianKernel gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("gaussian_kernel: sigma must be > 0");
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        taps[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& t : taps) t /= sum;
    return GaussianKernel(sigma, std::move(taps));
}

namespace detail {

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
    if (i < 0) return 0;
    if (static_cast<std::size_t>(i) >= n) return n - 1;
    return static_cast<std::size_t>(i);
}

// 1-D passes along rows (horizontal) or columns (vertical) with clamp-to-edge.
inline ScalarField pass_forward(const ScalarField& in, const std::vector<double>& taps, bool horizontal) {
    const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
    const std::size_t h = in.height(), w = in.width();
    ScalarField out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t u = -r; u <= r; ++u) {
                const double k = taps[static_cast<std::size_t>(u + r)];
                if (horizontal) {
                    acc += k * in(y, clamp_index(static_cast<std::ptrdiff_t>(x) - u, w));
                } else {
                    acc += k * in(clamp_index(static_cast<std::ptrdiff_t>(y) - u, h), x);
                }
            }
            out(y, x) = acc;
        }
    }
    return out;
}

inline ScalarField pass_adjoint(const ScalarField& grad, const std::vector<double>& taps, bool horizontal) {
    const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
    const std::size_t h = grad.height(), w = grad.width();
    ScalarField out(h, w, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double g = grad(y, x);
            for (std::ptrdiff_t u = -r; u <= r; ++u) {
                const double k = taps[static_cast<std::size_t>(u + r)];
                if (horizontal) {
                    out(y, clamp_index(static_cast<std::ptrdiff_t>(x) - u, w)) += k * g;
                } else {
                    out(clamp_index(static_cast<std::ptrdiff_t>(y) - u, h), x) += k * g;
                }
            }
        }
    }
    return out;
}

}  // namespace detail

/// out(x) = sum_u k(u) * field(clamp(x - u)). Each output is a convex
/// combination of inputs, so constants are preserved and the range never grows.
inline ScalarField convolve_replicate(const ScalarField& field, const GaussianKernel& k) {
    ScalarField out = detail::pass_forward(detail::pass_forward(field, k.taps(), true), k.taps(), false);
    // Rounding can push a weighted sum one ulp past the inputs' range.
    const double lo = field.min(), hi = field.max();
    for (double& v : out.values()) v = std::clamp(v, lo, hi);
    return out;
}

/// Exact adjoint of convolve_replicate, including the clamped borders.
inline ScalarField convolve_adjoint_replicate(const ScalarField& grad, const GaussianKernel& k) {
    return detail::pass_adjoint(detail::pass_adjoint(grad, k.taps(), false), k.taps(), true);
}

}  // namespace advhaze
