#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "advhaze/classifier.hpp"
#include "advhaze/error.hpp"
#include "advhaze/filter.hpp"
#include "advhaze/haze.hpp"
#include "advhaze/image.hpp"

namespace advhaze {

/// Hyperparameters of the haze attacks. Defaults: MI-FGSM schedule with
/// n = 10, mu = 1, A0 = 0.9, beta0 = 0.1, step 0.01, and l-inf radius 0.1 on
/// both parameters, so A spans [0.8, 1.0] and beta spans [0, 0.2].
struct AttackConfig {
    double eps_a = 0.1;
    double eps_b = 0.1;
    double a0 = 0.9;
    double b0 = 0.1;
    double alpha_a = 0.01;
    double alpha_b = 0.01;
    std::size_t n = 10;
    double mu = 1.0;
    double sigma_a = 3.0;  // Gaussian width of the A' low-pass filter (px)
    double sigma_b = 3.0;  // Gaussian width of the beta' low-pass filter (px)
    bool early_stop = false;

    double a_lo() const { return std::max(a0 - eps_a, 0.0); }
    double a_hi() const { return std::min(a0 + eps_a, 1.0); }
    double b_lo() const { return std::max(b0 - eps_b, 0.0); }
    double b_hi() const { return b0 + eps_b; }

    void validate() const {
        if (!(eps_a > 0.0) || !(eps_b > 0.0)) throw ConfigError("AttackConfig: eps_a and eps_b must be > 0");
        if (!(alpha_a > 0.0) || !(alpha_b > 0.0)) throw ConfigError("AttackConfig: step sizes must be > 0");
        if (!(a0 >= 0.0 && a0 <= 1.0)) throw ConfigError("AttackConfig: a0 must lie in [0,1]");
        if (!(b0 >= 0.0) || !std::isfinite(b0)) throw ConfigError("AttackConfig: b0 must be >= 0");
        if (!(mu >= 0.0)) throw ConfigError("AttackConfig: momentum must be >= 0");
        if (!(sigma_a > 0.0) || !(sigma_b > 0.0)) throw ConfigError("AttackConfig: filter widths must be > 0");
        if (!(a_lo() <= a_hi())) throw ConfigError("AttackConfig: [a0-eps_a, a0+eps_a] does not meet [0,1]");
        if (!(b_lo() <= b_hi())) throw ConfigError("AttackConfig: [b0-eps_b, b0+eps_b] does not meet [0,inf)");
    }
};

/// Pixel-noise baselines: FGSM, I-FGSM and MI-FGSM.
struct NoiseConfig {
    double eps = 10.0 / 255.0;
    std::size_t n = 10;
    double mu = 1.0;
};

struct AttackResult {
    Image adversarial;
    std::variant<std::monostate, HazeFields, HazeScalars> params;
    std::size_t pred_clean = 0;
    std::size_t pred_adv = 0;
    std::size_t true_label = 0;
    bool success = false;             // pred_adv != true_label
    std::vector<double> loss_trace;   // loss of every rendered iterate, initial one first
    std::size_t iterations_run = 0;
};

/// What an observer sees of one iterate; pointers not relevant to the running
/// attack are null.
struct IterateView {
    std::size_t iteration = 0;
    const HazeFields* raw = nullptr;
    const HazeRender* render = nullptr;
    const HazeScalars* scalars = nullptr;
    const Image* image = nullptr;
};

using IterateObserver = std::function<void(const IterateView&)>;

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// g' = mu*g + grad/||grad||_1, or mu*g when the gradient vanishes.
inline void momentum_update(std::span<double> g, std::span<const double> grad, double mu) {
    if (g.size() != grad.size()) throw ShapeError("momentum_update: size mismatch");
    double l1 = 0.0;
    for (double v : grad) l1 += std::abs(v);
    if (!std::isfinite(l1)) throw DomainError("momentum_update: non-finite gradient");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = mu * g[i] + (l1 > 0.0 ? grad[i] / l1 : 0.0);
}

inline ScalarField momentum_update(const ScalarField& g, const ScalarField& grad, double mu) {
    ScalarField out = g;
    momentum_update(out.values(), grad.values(), mu);
    return out;
}

/// Scalar case: the 1-norm is |grad|, so the normalized gradient is its sign.
inline double momentum_update(double g, double grad, double mu) {
    double out = g;
    momentum_update(std::span<double>(&out, 1), std::span<const double>(&grad, 1), mu);
    return out;
}

/// Clamp to [max(center-eps, lo), min(center+eps, hi)].
inline double project_box(double v, double center, double eps, double lo, double hi) {
    const double a = std::max(center - eps, lo);
    const double b = std::min(center + eps, hi);
    if (!(a <= b)) throw DomainError("project_box: empty feasible interval");
    return std::clamp(v, a, b);
}

inline ScalarField project_box(const ScalarField& f, double center, double eps, double lo, double hi) {
    ScalarField out = f;
    for (double& v : out.values()) v = project_box(v, center, eps, lo, hi);
    return out;
}

namespace attack_detail {

template <class Clf>
std::size_t predict(const Clf& clf, const Image& img) {
    return clf.logits(img).argmax();
}

inline void finish(AttackResult& r) { r.success = r.pred_adv != r.true_label; }

}  // namespace attack_detail

/// Homogeneous haze attack: optimizes one (A, beta) pair with momentum sign
/// steps. Depth stays fixed for the whole run.
template <DifferentiableClassifier Clf>
AttackResult attack_hadvhaze(const Image& img, const DepthMap& d, const Clf& clf, std::size_t y,
                             const AttackConfig& cfg, const IterateObserver& observe = {}) {
    cfg.validate();
    require_same_shape(img, d.field(), "attack_hadvhaze");

    AttackResult res;
    res.true_label = y;
    res.pred_clean = attack_detail::predict(clf, img);

    HazeScalars s{cfg.a0, cfg.b0};
    double g_a = 0.0, g_b = 0.0;
    Image hazy = haze_homogeneous(img, d, s);
    for (std::size_t k = 0; k < cfg.n; ++k) {
        if (observe) observe({k, nullptr, nullptr, &s, &hazy});
        const LossGradient lg = clf.loss_gradient(hazy, y);
        res.loss_trace.push_back(lg.loss);
        if (cfg.early_stop && lg.logits.argmax() != y) break;

        const HazeScalarGradient sg = grad_haze_scalars(lg.grad, img, d, s);
        g_a = momentum_update(g_a, sg.d_a, cfg.mu);
        g_b = momentum_update(g_b, sg.d_beta, cfg.mu);
        s.a = project_box(s.a + cfg.alpha_a * sign(g_a), cfg.a0, cfg.eps_a, 0.0, 1.0);
        s.beta = project_box(s.beta + cfg.alpha_b * sign(g_b), cfg.b0, cfg.eps_b, 0.0, HUGE_VAL);
        hazy = haze_homogeneous(img, d, s);
        ++res.iterations_run;
    }
    if (observe) observe({res.iterations_run, nullptr, nullptr, &s, &hazy});

    const Logits final_logits = clf.logits(hazy);
    res.loss_trace.push_back(softmax_cross_entropy(final_logits, y).loss);
    res.pred_adv = final_logits.argmax();
    res.adversarial = std::move(hazy);
    res.params = s;
    attack_detail::finish(res);
    return res;
}

/// Inhomogeneous haze attack: optimizes per-pixel raw fields A' and beta',
/// rendered through Gaussian low-pass filters. Raw fields are projected onto
/// their boxes after every step; since the filters are convex combinations,
/// the smoothed fields then satisfy the same bounds.
template <DifferentiableClassifier Clf>
AttackResult attack_iadvhaze(const Image& img, const DepthMap& d, const Clf& clf, std::size_t y,
                             const AttackConfig& cfg, const IterateObserver& observe = {}) {
    cfg.validate();
    require_same_shape(img, d.field(), "attack_iadvhaze");
    const GaussianKernel k_a = gaussian_kernel(cfg.sigma_a);
    const GaussianKernel k_b = gaussian_kernel(cfg.sigma_b);

    AttackResult res;
    res.true_label = y;
    res.pred_clean = attack_detail::predict(clf, img);

    HazeFields p = HazeFields::constant(img.height(), img.width(), cfg.a0, cfg.b0);
    ScalarField g_a(img.height(), img.width(), 0.0);
    ScalarField g_b(img.height(), img.width(), 0.0);
    HazeRender r = haze_forward(img, d, p, k_a, k_b);
    for (std::size_t k = 0; k < cfg.n; ++k) {
        if (observe) observe({k, &p, &r, nullptr, &r.hazy});
        const LossGradient lg = clf.loss_gradient(r.hazy, y);
        res.loss_trace.push_back(lg.loss);
        if (cfg.early_stop && lg.logits.argmax() != y) break;

        const HazeParamGradient pg = grad_haze_params(lg.grad, img, d, r.a, r.t, k_a, k_b);
        momentum_update(g_a.values(), pg.d_a_raw.values(), cfg.mu);
        momentum_update(g_b.values(), pg.d_beta_raw.values(), cfg.mu);
        for (std::size_t i = 0; i < p.a_raw.size(); ++i) {
            p.a_raw[i] = project_box(p.a_raw[i] + cfg.alpha_a * sign(g_a[i]), cfg.a0, cfg.eps_a, 0.0, 1.0);
            p.beta_raw[i] = project_box(p.beta_raw[i] + cfg.alpha_b * sign(g_b[i]), cfg.b0, cfg.eps_b, 0.0, HUGE_VAL);
        }
        r = haze_forward(img, d, p, k_a, k_b);
        ++res.iterations_run;
    }
    if (observe) observe({res.iterations_run, &p, &r, nullptr, &r.hazy});

    const Logits final_logits = clf.logits(r.hazy);
    res.loss_trace.push_back(softmax_cross_entropy(final_logits, y).loss);
    res.pred_adv = final_logits.argmax();
    res.adversarial = std::move(r.hazy);
    res.params = std::move(p);
    attack_detail::finish(res);
    return res;
}

/// Single step i + eps*sign(grad), clipped to [0,1].
template <DifferentiableClassifier Clf>
AttackResult baseline_fgsm(const Image& img, const Clf& clf, std::size_t y, const NoiseConfig& cfg = {}) {
    if (!(cfg.eps >= 0.0)) throw ConfigError("baseline_fgsm: eps must be >= 0");
    AttackResult res;
    res.true_label = y;
    const LossGradient lg = clf.loss_gradient(img, y);
    res.pred_clean = lg.logits.argmax();
    res.loss_trace.push_back(lg.loss);
    Image adv = img;
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = std::clamp(img[i] + cfg.eps * sign(lg.grad[i]), 0.0, 1.0);
    const Logits fl = clf.logits(adv);
    res.loss_trace.push_back(softmax_cross_entropy(fl, y).loss);
    res.pred_adv = fl.argmax();
    res.iterations_run = 1;
    res.adversarial = std::move(adv);
    attack_detail::finish(res);
    return res;
}

namespace attack_detail {

// Shared loop of I-FGSM (no momentum) and MI-FGSM: n steps of eps/n, each
// followed by projection onto the eps-ball around the clean image and [0,1].
template <class Clf>
AttackResult iterative_noise(const Image& img, const Clf& clf, std::size_t y, const NoiseConfig& cfg, bool momentum) {
    if (!(cfg.eps >= 0.0)) throw ConfigError("noise attack: eps must be >= 0");
    if (cfg.n == 0) throw ConfigError("noise attack: n must be >= 1");
    if (!(cfg.mu >= 0.0)) throw ConfigError("noise attack: momentum must be >= 0");
    const double step = cfg.eps / static_cast<double>(cfg.n);

    AttackResult res;
    res.true_label = y;
    Image adv = img;
    std::vector<double> g(img.size(), 0.0);
    for (std::size_t k = 0; k < cfg.n; ++k) {
        const LossGradient lg = clf.loss_gradient(adv, y);
        if (k == 0) res.pred_clean = lg.logits.argmax();
        res.loss_trace.push_back(lg.loss);
        std::span<const double> dir = lg.grad.values();
        if (momentum) {
            momentum_update(g, lg.grad.values(), cfg.mu);
            dir = g;
        }
        for (std::size_t i = 0; i < adv.size(); ++i) {
            const double v = std::clamp(adv[i] + step * sign(dir[i]), img[i] - cfg.eps, img[i] + cfg.eps);
            adv[i] = std::clamp(v, 0.0, 1.0);
        }
        ++res.iterations_run;
    }
    const Logits fl = clf.logits(adv);
    res.loss_trace.push_back(softmax_cross_entropy(fl, y).loss);
    res.pred_adv = fl.argmax();
    res.adversarial = std::move(adv);
    finish(res);
    return res;
}

}  // namespace attack_detail

template <DifferentiableClassifier Clf>
AttackResult baseline_ifgsm(const Image& img, const Clf& clf, std::size_t y, const NoiseConfig& cfg = {}) {
    return attack_detail::iterative_noise(img, clf, y, cfg, false);
}

template <DifferentiableClassifier Clf>
AttackResult baseline_mifgsm(const Image& img, const Clf& clf, std::size_t y, const NoiseConfig& cfg = {}) {
    return attack_detail::iterative_noise(img, clf, y, cfg, true);
}

}  // namespace advhaze
