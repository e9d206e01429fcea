#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "advhaze/error.hpp"
#include "advhaze/image.hpp"

namespace advhaze {

/// Unnormalized class scores.
struct Logits {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }

    /// Index of the largest score; the first one wins ties.
    std::size_t argmax() const {
        return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
    }

    void validate() const {
        if (values.size() < 2) throw DomainError("Logits: need at least two classes");
        for (double v : values)
            if (!std::isfinite(v)) throw DomainError("Logits: non-finite score");
    }
};

struct LabeledExample {
    Image image;
    std::size_t label = 0;
};

struct CrossEntropy {
    double loss = 0.0;
    std::vector<double> grad;  // softmax(l) - onehot(y)
};

/// -log softmax(l)[y] and its gradient, stabilized by max subtraction.
inline CrossEntropy softmax_cross_entropy(const Logits& l, std::size_t y) {
    if (y >= l.size()) throw DomainError("softmax_cross_entropy: label out of range");
    const double m = *std::max_element(l.values.begin(), l.values.end());
    double z = 0.0;
    for (double v : l.values) z += std::exp(v - m);
    const double log_z = std::log(z);
    CrossEntropy ce;
    ce.loss = log_z - (l.values[y] - m);
    ce.grad.resize(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) ce.grad[i] = std::exp(l.values[i] - m - log_z);
    ce.grad[y] -= 1.0;
    return ce;
}

/// Two 3x3 conv blocks (16 and 32 channels, replicate padding, ReLU, 2x2
/// max-pool) followed by one affine layer. Conv weights are laid out
/// [out][in][ky][kx]; fc weights [class][feature] with features in
/// channel-major (c, y, x) order.
struct ReferenceCnnWeights {
    static constexpr std::size_t in_channels = 3;
    static constexpr std::size_t c1 = 16;
    static constexpr std::size_t c2 = 32;
    static constexpr std::size_t ksize = 3;

    std::size_t input_side = 32;
    std::size_t num_classes = 10;

    std::vector<double> conv1_w, conv1_b;
    std::vector<double> conv2_w, conv2_b;
    std::vector<double> fc_w, fc_b;

    std::size_t features() const { return c2 * (input_side / 4) * (input_side / 4); }

    static ReferenceCnnWeights zeros(std::size_t side, std::size_t classes) {
        if (side < 4 || side % 4 != 0) throw ShapeError("ReferenceCnnWeights: input side must be a positive multiple of 4");
        if (classes < 2) throw DomainError("ReferenceCnnWeights: need at least two classes");
        ReferenceCnnWeights w;
        w.input_side = side;
        w.num_classes = classes;
        w.conv1_w.assign(c1 * in_channels * ksize * ksize, 0.0);
        w.conv1_b.assign(c1, 0.0);
        w.conv2_w.assign(c2 * c1 * ksize * ksize, 0.0);
        w.conv2_b.assign(c2, 0.0);
        w.fc_w.assign(classes * w.features(), 0.0);
        w.fc_b.assign(classes, 0.0);
        return w;
    }

    void validate() const {
        const auto ref = zeros(input_side, num_classes);
        if (conv1_w.size() != ref.conv1_w.size() || conv1_b.size() != ref.conv1_b.size() ||
            conv2_w.size() != ref.conv2_w.size() || conv2_b.size() != ref.conv2_b.size() ||
            fc_w.size() != ref.fc_w.size() || fc_b.size() != ref.fc_b.size()) {
            throw ShapeError("ReferenceCnnWeights: tensor shapes inconsistent with input side / class count");
        }
        for (const auto* t : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc_w, &fc_b})
            for (double v : *t)
                if (!std::isfinite(v)) throw DomainError("ReferenceCnnWeights: non-finite weight");
    }

    friend bool operator==(const ReferenceCnnWeights&, const ReferenceCnnWeights&) = default;
};

namespace cnn_detail {

// Activation planes, channel-major.
struct Planes {
    std::size_t channels = 0, side = 0;
    std::vector<double> v;

    Planes() = default;
    Planes(std::size_t c, std::size_t s, double fill = 0.0) : channels(c), side(s), v(c * s * s, fill) {}
    double& at(std::size_t c, std::size_t y, std::size_t x) { return v[(c * side + y) * side + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return v[(c * side + y) * side + x]; }
};

inline std::size_t clampi(std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

// Replicate-pads by one pixel on every side.
inline Planes pad1(const Planes& in) {
    Planes p(in.channels, in.side + 2);
    for (std::size_t c = 0; c < in.channels; ++c)
        for (std::size_t y = 0; y < p.side; ++y)
            for (std::size_t x = 0; x < p.side; ++x)
                p.at(c, y, x) = in.at(c, clampi(static_cast<std::ptrdiff_t>(y) - 1, in.side),
                                      clampi(static_cast<std::ptrdiff_t>(x) - 1, in.side));
    return p;
}

// Adjoint of pad1: folds border gradients back onto the clamped pixels.
inline Planes unpad1(const Planes& g) {
    Planes out(g.channels, g.side - 2);
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t y = 0; y < g.side; ++y)
            for (std::size_t x = 0; x < g.side; ++x)
                out.at(c, clampi(static_cast<std::ptrdiff_t>(y) - 1, out.side),
                       clampi(static_cast<std::ptrdiff_t>(x) - 1, out.side)) += g.at(c, y, x);
    return out;
}

inline Planes conv3x3(const Planes& padded, const std::vector<double>& w, const std::vector<double>& b,
                      std::size_t out_channels) {
    const std::size_t side = padded.side - 2;
    const std::size_t in_channels = padded.channels;
    Planes out(out_channels, side);
    for (std::size_t o = 0; o < out_channels; ++o) {
        double* dst = &out.v[o * side * side];
        std::fill(dst, dst + side * side, b[o]);
        for (std::size_t i = 0; i < in_channels; ++i) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wk = w[((o * in_channels + i) * 3 + ky) * 3 + kx];
                    for (std::size_t y = 0; y < side; ++y) {
                        const double* src = &padded.v[(i * padded.side + y + ky) * padded.side + kx];
                        double* row = dst + y * side;
                        for (std::size_t x = 0; x < side; ++x) row[x] += wk * src[x];
                    }
                }
            }
        }
    }
    return out;
}

// Backward of conv3x3. Parameter gradients are accumulated when dw/db are
// non-null; the returned planes are the gradient w.r.t. the padded input.
inline Planes conv3x3_backward(const Planes& padded, const std::vector<double>& w, const Planes& dout,
                               std::vector<double>* dw, std::vector<double>* db, bool need_input_grad) {
    const std::size_t side = dout.side;
    const std::size_t in_channels = padded.channels;
    Planes dpad;
    if (need_input_grad) dpad = Planes(in_channels, padded.side);
    for (std::size_t o = 0; o < dout.channels; ++o) {
        const double* g = &dout.v[o * side * side];
        if (db) {
            double s = 0.0;
            for (std::size_t k = 0; k < side * side; ++k) s += g[k];
            (*db)[o] += s;
        }
        for (std::size_t i = 0; i < in_channels; ++i) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::size_t widx = ((o * in_channels + i) * 3 + ky) * 3 + kx;
                    const double wk = w[widx];
                    double acc = 0.0;
                    for (std::size_t y = 0; y < side; ++y) {
                        const std::size_t off = (i * padded.side + y + ky) * padded.side + kx;
                        const double* src = &padded.v[off];
                        const double* grow = g + y * side;
                        if (dw) {
                            for (std::size_t x = 0; x < side; ++x) acc += grow[x] * src[x];
                        }
                        if (need_input_grad) {
                            double* d = &dpad.v[off];
                            for (std::size_t x = 0; x < side; ++x) d[x] += wk * grow[x];
                        }
                    }
                    if (dw) (*dw)[widx] += acc;
                }
            }
        }
    }
    return dpad;
}

inline void relu_inplace(Planes& p) {
    for (double& v : p.v) v = v > 0.0 ? v : 0.0;
}

// 2x2 max-pool; records the flat source index of each winner. Scan order is
// (0,0), (0,1), (1,0), (1,1) and only a strictly larger value replaces the
// current winner, so ties go to the first element.
inline Planes maxpool2(const Planes& in, std::vector<std::size_t>& argmax) {
    const std::size_t side = in.side / 2;
    Planes out(in.channels, side);
    argmax.assign(out.v.size(), 0);
    for (std::size_t c = 0; c < in.channels; ++c) {
        for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
                std::size_t best = (c * in.side + 2 * y) * in.side + 2 * x;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (c * in.side + 2 * y + dy) * in.side + 2 * x + dx;
                        if (in.v[idx] > in.v[best]) best = idx;
                    }
                const std::size_t o = (c * side + y) * side + x;
                out.v[o] = in.v[best];
                argmax[o] = best;
            }
        }
    }
    return out;
}

inline Planes maxpool2_backward(const Planes& dout, const std::vector<std::size_t>& argmax, std::size_t in_side) {
    Planes din(dout.channels, in_side);
    for (std::size_t o = 0; o < dout.v.size(); ++o) din.v[argmax[o]] += dout.v[o];
    return din;
}

inline Planes to_planes(const Image& img) {
    if (img.height() != img.width()) throw ShapeError("reference CNN expects square inputs");
    Planes p(Image::channels, img.height());
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < Image::channels; ++c) p.at(c, y, x) = img(y, x, c);
    return p;
}

inline Image to_image(const Planes& p) {
    Image img(p.side, p.side);
    for (std::size_t y = 0; y < p.side; ++y)
        for (std::size_t x = 0; x < p.side; ++x)
            for (std::size_t c = 0; c < Image::channels; ++c) img(y, x, c) = p.at(c, y, x);
    return img;
}

}  // namespace cnn_detail

/// Activations of one forward pass, retained for backpropagation.
struct CnnTrace {
    cnn_detail::Planes in_padded;
    cnn_detail::Planes act1;  // post-ReLU conv1
    std::vector<std::size_t> pool1_arg;
    cnn_detail::Planes pool1_padded;
    cnn_detail::Planes act2;  // post-ReLU conv2
    std::vector<std::size_t> pool2_arg;
    std::vector<double> features;
    Logits logits;
};

inline CnnTrace forward_traced(const ReferenceCnnWeights& w, const Image& img) {
    using namespace cnn_detail;
    if (img.height() != w.input_side || img.width() != w.input_side) {
        throw ShapeError("forward: image is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         ", network expects " + std::to_string(w.input_side) + "x" + std::to_string(w.input_side));
    }
    CnnTrace tr;
    tr.in_padded = pad1(to_planes(img));
    tr.act1 = conv3x3(tr.in_padded, w.conv1_w, w.conv1_b, ReferenceCnnWeights::c1);
    relu_inplace(tr.act1);
    const Planes pool1 = maxpool2(tr.act1, tr.pool1_arg);
    tr.pool1_padded = pad1(pool1);
    tr.act2 = conv3x3(tr.pool1_padded, w.conv2_w, w.conv2_b, ReferenceCnnWeights::c2);
    relu_inplace(tr.act2);
    tr.features = maxpool2(tr.act2, tr.pool2_arg).v;

    const std::size_t f = tr.features.size();
    tr.logits.values.assign(w.num_classes, 0.0);
    for (std::size_t n = 0; n < w.num_classes; ++n) {
        const double* row = &w.fc_w[n * f];
        double acc = w.fc_b[n];
        for (std::size_t k = 0; k < f; ++k) acc += row[k] * tr.features[k];
        tr.logits.values[n] = acc;
    }
    return tr;
}

inline Logits forward(const ReferenceCnnWeights& w, const Image& img) { return forward_traced(w, img).logits; }

/// Backpropagates dJ/dlogits. Accumulates parameter gradients into `param_grad`
/// when given; returns dJ/dimage when `want_input` is set.
inline Image backward(const ReferenceCnnWeights& w, const CnnTrace& tr, const std::vector<double>& dlogits,
                      ReferenceCnnWeights* param_grad, bool want_input) {
    using namespace cnn_detail;
    const std::size_t f = tr.features.size();
    const std::size_t s1 = w.input_side, s2 = w.input_side / 2, s3 = w.input_side / 4;

    Planes dfeat(ReferenceCnnWeights::c2, s3);
    for (std::size_t n = 0; n < w.num_classes; ++n) {
        const double g = dlogits[n];
        if (g == 0.0) continue;
        const double* row = &w.fc_w[n * f];
        for (std::size_t k = 0; k < f; ++k) dfeat.v[k] += g * row[k];
        if (param_grad) {
            double* drow = &param_grad->fc_w[n * f];
            for (std::size_t k = 0; k < f; ++k) drow[k] += g * tr.features[k];
            param_grad->fc_b[n] += g;
        }
    }

    Planes dact2 = maxpool2_backward(dfeat, tr.pool2_arg, s2);
    for (std::size_t k = 0; k < dact2.v.size(); ++k)
        if (tr.act2.v[k] <= 0.0) dact2.v[k] = 0.0;
    const Planes dpool1 = unpad1(conv3x3_backward(tr.pool1_padded, w.conv2_w, dact2,
                                                  param_grad ? &param_grad->conv2_w : nullptr,
                                                  param_grad ? &param_grad->conv2_b : nullptr, true));

    Planes dact1 = maxpool2_backward(dpool1, tr.pool1_arg, s1);
    for (std::size_t k = 0; k < dact1.v.size(); ++k)
        if (tr.act1.v[k] <= 0.0) dact1.v[k] = 0.0;
    const Planes dpad = conv3x3_backward(tr.in_padded, w.conv1_w, dact1,
                                         param_grad ? &param_grad->conv1_w : nullptr,
                                         param_grad ? &param_grad->conv1_b : nullptr, want_input);
    if (!want_input) return {};
    return to_image(unpad1(dpad));
}

struct LossGradient {
    double loss = 0.0;
    Logits logits;
    Image grad;  // dJ/dimage
};

/// Exact dJ/dimage of softmax cross-entropy through the network.
inline LossGradient loss_and_input_gradient(const ReferenceCnnWeights& w, const Image& img, std::size_t y) {
    const CnnTrace tr = forward_traced(w, img);
    const CrossEntropy ce = softmax_cross_entropy(tr.logits, y);
    return {ce.loss, tr.logits, backward(w, tr, ce.grad, nullptr, true)};
}

inline Image input_gradient(const ReferenceCnnWeights& w, const Image& img, std::size_t y) {
    return loss_and_input_gradient(w, img, y).grad;
}

/// Central-difference estimate of dJ/dimage for any forward-only classifier
/// `f: const Image& -> Logits`. Costs two forward calls per component.
template <class Forward>
Image numeric_input_gradient(Forward&& f, const Image& img, std::size_t y, double h) {
    if (!(h > 0.0)) throw DomainError("numeric_input_gradient: step must be > 0");
    Image grad(img.height(), img.width());
    Image probe = img;
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = softmax_cross_entropy(f(probe), y).loss;
        probe[i] = orig - h;
        const double down = softmax_cross_entropy(f(probe), y).loss;
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// Uniform double in [0,1) from the top 53 bits; independent of the standard
/// library's distribution implementations.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
inline ReferenceCnnWeights init_reference(std::size_t side, std::size_t classes, std::uint64_t seed) {
    auto w = ReferenceCnnWeights::zeros(side, classes);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](std::vector<double>& t, double fan_in, double fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& v : t) v = (2.0 * unit_uniform(rng) - 1.0) * bound;
    };
    fill(w.conv1_w, 3.0 * 9, 16.0 * 9);
    fill(w.conv2_w, 16.0 * 9, 32.0 * 9);
    fill(w.fc_w, static_cast<double>(w.features()), static_cast<double>(classes));
    return w;
}

/// Fisher-Yates with our own index draw, reproducible across standard libraries.
inline void seeded_shuffle(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

struct TrainOptions {
    std::uint64_t seed = 1;
    std::size_t epochs = 10;
    double lr = 0.01;
    std::size_t num_classes = 10;
};

struct TrainResult {
    ReferenceCnnWeights weights;
    double train_accuracy = 0.0;  // measured after the final epoch
};

inline double accuracy(const ReferenceCnnWeights& w, const std::vector<LabeledExample>& data) {
    if (data.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& ex : data) correct += forward(w, ex.image).argmax() == ex.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Per-example SGD on softmax cross-entropy. Initialization and visiting
/// order both derive from `seed`; single-threaded, so results are bitwise
/// reproducible on a given build.
inline TrainResult train_reference(const std::vector<LabeledExample>& data, const TrainOptions& opt) {
    if (data.empty()) throw DomainError("train_reference: empty dataset");
    const std::size_t side = data.front().image.height();
    for (const auto& ex : data) {
        if (ex.image.height() != side || ex.image.width() != side) throw ShapeError("train_reference: inconsistent image sizes");
        if (ex.label >= opt.num_classes) throw DomainError("train_reference: label out of range");
    }

    TrainResult res;
    res.weights = init_reference(side, opt.num_classes, opt.seed);
    auto& w = res.weights;
    std::mt19937_64 order_rng(opt.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto grad = ReferenceCnnWeights::zeros(side, opt.num_classes);
    auto step = [&](std::vector<double>& p, std::vector<double>& g) {
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] -= opt.lr * g[k];
            g[k] = 0.0;
        }
    };

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        seeded_shuffle(order, order_rng);
        for (std::size_t idx : order) {
            const CnnTrace tr = forward_traced(w, data[idx].image);
            const CrossEntropy ce = softmax_cross_entropy(tr.logits, data[idx].label);
            backward(w, tr, ce.grad, &grad, false);
            step(w.conv1_w, grad.conv1_w);
            step(w.conv1_b, grad.conv1_b);
            step(w.conv2_w, grad.conv2_w);
            step(w.conv2_b, grad.conv2_b);
            step(w.fc_w, grad.fc_w);
            step(w.fc_b, grad.fc_b);
        }
    }
    res.train_accuracy = accuracy(w, data);
    return res;
}

// Weight file layout (all integers u32 little-endian, values f32 little-endian):
//   "AHZW" | version=1 | input_side | num_classes | tensor_count=6
//   per tensor: name_len | name bytes | rank | dims[rank] | prod(dims) floats
// Tensors in order: conv1.weight [16,3,3,3], conv1.bias [16], conv2.weight
// [32,16,3,3], conv2.bias [32], fc.weight [N, 32*(S/4)^2], fc.bias [N].

namespace cnn_detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("weight file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

struct TensorSpec {
    const char* name;
    std::vector<std::uint32_t> dims;
};

inline std::vector<TensorSpec> tensor_layout(std::size_t classes, std::size_t features) {
    const auto n = static_cast<std::uint32_t>(classes);
    const auto f = static_cast<std::uint32_t>(features);
    return {{"conv1.weight", {16, 3, 3, 3}}, {"conv1.bias", {16}},  {"conv2.weight", {32, 16, 3, 3}},
            {"conv2.bias", {32}},            {"fc.weight", {n, f}}, {"fc.bias", {n}}};
}

}  // namespace cnn_detail

/// Values are stored as 32-bit floats.
inline void save_weights(const ReferenceCnnWeights& w, const std::filesystem::path& path) {
    using namespace cnn_detail;
    w.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_weights: cannot write " + path.string());
    out.write("AHZW", 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(w.input_side));
    put_u32(out, static_cast<std::uint32_t>(w.num_classes));
    const auto layout = tensor_layout(w.num_classes, w.features());
    put_u32(out, static_cast<std::uint32_t>(layout.size()));
    const std::vector<const std::vector<double>*> tensors = {&w.conv1_w, &w.conv1_b, &w.conv2_w,
                                                             &w.conv2_b, &w.fc_w,    &w.fc_b};
    for (std::size_t t = 0; t < layout.size(); ++t) {
        const std::string name = layout[t].name;
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(layout[t].dims.size()));
        for (auto d : layout[t].dims) put_u32(out, d);
        for (double v : *tensors[t]) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!out) throw IoError("save_weights: write failed for " + path.string());
}

inline ReferenceCnnWeights load_weights(const std::filesystem::path& path) {
    using namespace cnn_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_weights: cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "AHZW") throw FormatError("load_weights: bad magic in " + path.string());
    if (get_u32(in) != 1) throw FormatError("load_weights: unsupported version");
    const std::size_t side = get_u32(in);
    const std::size_t classes = get_u32(in);
    auto w = ReferenceCnnWeights::zeros(side, classes);
    const auto layout = tensor_layout(classes, w.features());
    if (get_u32(in) != layout.size()) throw FormatError("load_weights: unexpected tensor count");
    const std::vector<std::vector<double>*> tensors = {&w.conv1_w, &w.conv1_b, &w.conv2_w,
                                                       &w.conv2_b, &w.fc_w,    &w.fc_b};
    for (std::size_t t = 0; t < layout.size(); ++t) {
        const std::uint32_t name_len = get_u32(in);
        if (name_len > 256) throw FormatError("load_weights: corrupt tensor name");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw FormatError("weight file truncated");
        if (name != layout[t].name) throw FormatError("load_weights: expected tensor " + std::string(layout[t].name) + ", got " + name);
        const std::uint32_t rank = get_u32(in);
        std::vector<std::uint32_t> dims(rank);
        for (auto& d : dims) d = get_u32(in);
        if (dims != layout[t].dims) throw FormatError("load_weights: shape mismatch for " + name);
        for (double& v : *tensors[t]) v = std::bit_cast<float>(get_u32(in));
    }
    if (in.peek() != EOF) throw FormatError("load_weights: trailing bytes");
    w.validate();
    return w;
}

/// Rounds every weight through 32-bit float, i.e. what a save/load cycle yields.
inline ReferenceCnnWeights quantize_to_f32(ReferenceCnnWeights w) {
    for (auto* t : {&w.conv1_w, &w.conv1_b, &w.conv2_w, &w.conv2_b, &w.fc_w, &w.fc_b})
        for (double& v : *t) v = static_cast<float>(v);
    return w;
}

}  // namespace advhaze
