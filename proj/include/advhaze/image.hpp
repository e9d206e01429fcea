#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advhaze/error.hpp"

namespace advhaze {

/// Single-channel real-valued field, row-major. Houses atmospheric light,
/// scattering coefficients, transmission maps and depth.
class ScalarField {
public:
    ScalarField() = default;

    ScalarField(std::size_t height, std::size_t width, double fill = 0.0)
        : height_(height), width_(width), data_(height * width, fill) {
        if (height == 0 || width == 0) throw ShapeError("ScalarField: dimensions must be >= 1");
    }

    ScalarField(std::size_t height, std::size_t width, std::vector<double> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (height == 0 || width == 0) throw ShapeError("ScalarField: dimensions must be >= 1");
        if (data_.size() != height * width) throw ShapeError("ScalarField: data size mismatch");
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
    double operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double min() const { return *std::min_element(data_.begin(), data_.end()); }
    double max() const { return *std::max_element(data_.begin(), data_.end()); }

    bool same_shape(const ScalarField& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_;
    }

    friend bool operator==(const ScalarField&, const ScalarField&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// RGB image with channels interleaved (row-major, then channel). Scene
/// radiance and hazy outputs both live in [0,1]; gradients with respect to an
/// image reuse this type without the range restriction.
class Image {
public:
    static constexpr std::size_t channels = 3;

    Image() = default;

    Image(std::size_t height, std::size_t width, double fill = 0.0)
        : height_(height), width_(width), data_(height * width * channels, fill) {
        if (height == 0 || width == 0) throw ShapeError("Image: dimensions must be >= 1");
    }

    Image(std::size_t height, std::size_t width, std::vector<double> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (height == 0 || width == 0) throw ShapeError("Image: dimensions must be >= 1");
        if (data_.size() != height * width * channels) throw ShapeError("Image: data size mismatch");
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t pixels() const noexcept { return height_ * width_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t row, std::size_t col, std::size_t c) {
        return data_[(row * width_ + col) * channels + c];
    }
    double operator()(std::size_t row, std::size_t col, std::size_t c) const {
        return data_[(row * width_ + col) * channels + c];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool same_shape(const Image& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_;
    }
    bool same_shape(const ScalarField& f) const noexcept {
        return height_ == f.height() && width_ == f.width();
    }

    /// True when every component lies in [0,1].
    bool in_unit_range() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// Normalized relative scene depth, every value in [0,1]. Larger is farther.
class DepthMap {
public:
    DepthMap() = default;

    explicit DepthMap(ScalarField field) : field_(std::move(field)) {
        for (double v : field_.values()) {
            if (!(v >= 0.0 && v <= 1.0)) throw DomainError("DepthMap: values must lie in [0,1]");
        }
    }

    std::size_t height() const noexcept { return field_.height(); }
    std::size_t width() const noexcept { return field_.width(); }
    double operator()(std::size_t row, std::size_t col) const { return field_(row, col); }
    double operator[](std::size_t i) const { return field_[i]; }
    const ScalarField& field() const noexcept { return field_; }

private:
    ScalarField field_;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": image dimensions differ");
}

inline void require_same_shape(const Image& a, const ScalarField& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": field does not match image dimensions");
}

inline void require_same_shape(const ScalarField& a, const ScalarField& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": field dimensions differ");
}

}  // namespace advhaze
