#pragma once

#include <cmath>
#include <utility>

#include "advhaze/error.hpp"
#include "advhaze/filter.hpp"
#include "advhaze/image.hpp"

namespace advhaze {

/// Unsmoothed per-pixel haze parameters: atmospheric light A' in [0,1] and
/// scattering coefficient beta' >= 0 (per unit of normalized depth).
struct HazeFields {
    ScalarField a_raw;
    ScalarField beta_raw;

    static HazeFields constant(std::size_t h, std::size_t w, double a, double beta) {
        return {ScalarField(h, w, a), ScalarField(h, w, beta)};
    }

    void validate() const {
        require_same_shape(a_raw, beta_raw, "HazeFields");
        for (double v : a_raw.values())
            if (!(v >= 0.0 && v <= 1.0)) throw DomainError("HazeFields: atmospheric light outside [0,1]");
        for (double v : beta_raw.values())
            if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("HazeFields: negative scattering coefficient");
    }
};

/// Homogeneous atmosphere: one atmospheric light and one scattering coefficient.
struct HazeScalars {
    double a = 0.9;
    double beta = 0.1;
};

/// t(x) = exp(-beta(x) * d(x)).
inline ScalarField transmission(const DepthMap& d, const ScalarField& beta) {
    require_same_shape(d.field(), beta, "transmission");
    ScalarField t(beta.height(), beta.width());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(beta[i] >= 0.0)) throw DomainError("transmission: beta must be >= 0");
        t[i] = std::exp(-beta[i] * d[i]);
    }
    return t;
}

/// H(x,c) = I(x,c) t(x) + a(x) (1 - t(x)), with a shared by all channels.
/// Evaluated as I + (a - I)(1 - t), which returns I exactly where a == I or
/// t == 1. The result is a convex combination and is never clipped.
inline Image synthesize(const Image& img, const ScalarField& a, const ScalarField& t) {
    require_same_shape(img, a, "synthesize");
    require_same_shape(img, t, "synthesize");
    Image out(img.height(), img.width());
    for (std::size_t p = 0; p < img.pixels(); ++p) {
        const double tp = t[p];
        const double ap = a[p];
        if (!(ap >= 0.0 && ap <= 1.0)) throw DomainError("synthesize: atmospheric light outside [0,1]");
        if (!(tp >= 0.0 && tp <= 1.0)) throw DomainError("synthesize: transmission outside [0,1]");
        const double w = 1.0 - tp;
        for (std::size_t c = 0; c < Image::channels; ++c) {
            const std::size_t i = p * Image::channels + c;
            out[i] = img[i] + (ap - img[i]) * w;
        }
    }
    return out;
}

/// Every intermediate of one forward haze rendering, kept for the backward pass.
struct HazeRender {
    Image hazy;
    ScalarField a;     // smoothed atmospheric light
    ScalarField beta;  // smoothed scattering coefficient
    ScalarField t;     // transmission
};

inline HazeRender haze_forward(const Image& img, const DepthMap& d, const HazeFields& p,
                               const GaussianKernel& k_a, const GaussianKernel& k_beta) {
    require_same_shape(img, p.a_raw, "haze_forward");
    require_same_shape(img, p.beta_raw, "haze_forward");
    require_same_shape(img, d.field(), "haze_forward");
    HazeRender r;
    r.a = convolve_replicate(p.a_raw, k_a);
    r.beta = convolve_replicate(p.beta_raw, k_beta);
    r.t = transmission(d, r.beta);
    r.hazy = synthesize(img, r.a, r.t);
    return r;
}

inline Image haze_homogeneous(const Image& img, const DepthMap& d, const HazeScalars& s) {
    if (!(s.a >= 0.0 && s.a <= 1.0)) throw DomainError("haze_homogeneous: atmospheric light outside [0,1]");
    if (!(s.beta >= 0.0)) throw DomainError("haze_homogeneous: beta must be >= 0");
    require_same_shape(img, d.field(), "haze_homogeneous");
    const ScalarField a(img.height(), img.width(), s.a);
    const ScalarField beta(img.height(), img.width(), s.beta);
    return synthesize(img, a, transmission(d, beta));
}

/// Gradients with respect to the smoothed fields A and beta.
struct SmoothedHazeGradient {
    ScalarField d_a;
    ScalarField d_beta;
};

/// dJ/dA(x) = sum_c g(x,c) (1 - t(x));  dJ/dbeta(x) = sum_c g(x,c) (A(x) - I(x,c)) d(x) t(x).
inline SmoothedHazeGradient grad_haze_smoothed(const Image& upstream, const Image& img, const DepthMap& d,
                                               const ScalarField& a, const ScalarField& t) {
    require_same_shape(upstream, img, "grad_haze");
    require_same_shape(img, a, "grad_haze");
    require_same_shape(img, t, "grad_haze");
    require_same_shape(img, d.field(), "grad_haze");
    SmoothedHazeGradient g{ScalarField(img.height(), img.width()), ScalarField(img.height(), img.width())};
    for (std::size_t p = 0; p < img.pixels(); ++p) {
        double sum_up = 0.0;
        double sum_contrast = 0.0;
        for (std::size_t c = 0; c < Image::channels; ++c) {
            const std::size_t i = p * Image::channels + c;
            sum_up += upstream[i];
            sum_contrast += upstream[i] * (a[p] - img[i]);
        }
        g.d_a[p] = sum_up * (1.0 - t[p]);
        g.d_beta[p] = sum_contrast * d[p] * t[p];
    }
    return g;
}

/// Gradients with respect to the raw (pre-filter) fields A' and beta'.
struct HazeParamGradient {
    ScalarField d_a_raw;
    ScalarField d_beta_raw;
};

inline HazeParamGradient grad_haze_params(const Image& upstream, const Image& img, const DepthMap& d,
                                          const ScalarField& a, const ScalarField& t,
                                          const GaussianKernel& k_a, const GaussianKernel& k_beta) {
    auto g = grad_haze_smoothed(upstream, img, d, a, t);
    return {convolve_adjoint_replicate(g.d_a, k_a), convolve_adjoint_replicate(g.d_beta, k_beta)};
}

struct HazeScalarGradient {
    double d_a = 0.0;
    double d_beta = 0.0;
};

inline HazeScalarGradient grad_haze_scalars(const Image& upstream, const Image& img, const DepthMap& d,
                                            const HazeScalars& s) {
    const ScalarField a(img.height(), img.width(), s.a);
    const ScalarField t = transmission(d, ScalarField(img.height(), img.width(), s.beta));
    const auto g = grad_haze_smoothed(upstream, img, d, a, t);
    HazeScalarGradient out;
    for (double v : g.d_a.values()) out.d_a += v;
    for (double v : g.d_beta.values()) out.d_beta += v;
    return out;
}

}  // namespace advhaze
