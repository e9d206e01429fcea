#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "advhaze/error.hpp"
#include "advhaze/image.hpp"

namespace advhaze {

/// Reads an 8-bit RGB PNG and maps each code value v to v/255.
inline Image load_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("load_image: no such file: " + path.string());

    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw FormatError("load_image: not a readable PNG: " + path.string() + " (" + png.message + ")");
    }
    const auto native = png.format;
    if ((native & PNG_FORMAT_FLAG_COLORMAP) || (native & PNG_FORMAT_FLAG_LINEAR)) {
        png_image_free(&png);
        throw FormatError("load_image: only 8-bit truecolor PNG is supported: " + path.string());
    }
    if (!(native & PNG_FORMAT_FLAG_COLOR) || (native & PNG_FORMAT_FLAG_ALPHA)) {
        png_image_free(&png);
        throw FormatError("load_image: expected 3 channels (RGB): " + path.string());
    }

    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
        throw FormatError("load_image: decode failed: " + path.string() + " (" + png.message + ")");
    }

    Image img(png.height, png.width);
    for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i] / 255.0;
    return img;
}

/// Quantizes v to round(v*255) with halves rounded up, clamped to [0,255].
inline std::uint8_t quantize_component(double v) {
    const double q = std::floor(v * 255.0 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

inline void save_rgb8(const std::vector<std::uint8_t>& rgb, std::size_t height, std::size_t width,
                      const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(width);
    png.height = static_cast<png_uint_32>(height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, rgb.data(), 0, nullptr)) {
        throw IoError("save_image: cannot write " + path.string() + " (" + png.message + ")");
    }
}

inline void save_image(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(img.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_component(img[i]);
    save_rgb8(bytes, img.height(), img.width(), path);
}

// PFM, grayscale variant only: "Pf\n<width> <height>\n<scale>\n" followed by
// width*height 32-bit floats, bottom scanline first. Negative scale means
// little-endian; we always write -1.0.

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

inline std::string read_pfm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF && std::isspace(ch)) {}
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(static_cast<char>(ch));
        ch = in.get();
    }
    // The single whitespace byte after the scale token has been consumed here,
    // which is what the format requires before the raster.
    return tok;
}

}  // namespace detail

inline ScalarField load_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_pfm: cannot open " + path.string());

    const std::string magic = detail::read_pfm_token(in);
    if (magic != "Pf") throw FormatError("load_pfm: expected grayscale 'Pf' header in " + path.string());

    std::size_t width = 0, height = 0;
    double scale = 0.0;
    try {
        width = std::stoul(detail::read_pfm_token(in));
        height = std::stoul(detail::read_pfm_token(in));
        scale = std::stod(detail::read_pfm_token(in));
    } catch (const std::exception&) {
        throw FormatError("load_pfm: malformed header in " + path.string());
    }
    if (width == 0 || height == 0 || scale == 0.0 || !std::isfinite(scale)) {
        throw FormatError("load_pfm: malformed header in " + path.string());
    }
    const bool swap = (scale < 0.0) != (std::endian::native == std::endian::little);

    std::vector<std::uint32_t> raw(width * height);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (static_cast<std::size_t>(in.gcount()) != raw.size() * 4) {
        throw FormatError("load_pfm: truncated raster in " + path.string());
    }
    if (in.peek() != EOF) throw FormatError("load_pfm: trailing bytes after raster in " + path.string());

    ScalarField field(height, width);
    for (std::size_t r = 0; r < height; ++r) {
        const std::size_t src_row = height - 1 - r;
        for (std::size_t c = 0; c < width; ++c) {
            std::uint32_t bits = raw[src_row * width + c];
            if (swap) bits = detail::byteswap32(bits);
            const float v = std::bit_cast<float>(bits);
            if (!std::isfinite(v)) throw FormatError("load_pfm: non-finite value in " + path.string());
            field(r, c) = v;
        }
    }
    return field;
}

/// Values are narrowed to 32-bit float; fields that originate from a PFM
/// therefore round-trip bit-exactly.
inline void save_pfm(const ScalarField& field, const std::filesystem::path& path) {
    std::ostringstream header;
    header << "Pf\n" << field.width() << ' ' << field.height() << "\n-1.0\n";

    std::vector<std::uint32_t> raw(field.size());
    for (std::size_t r = 0; r < field.height(); ++r) {
        const std::size_t dst_row = field.height() - 1 - r;
        for (std::size_t c = 0; c < field.width(); ++c) {
            const float v = static_cast<float>(field(r, c));
            if (!std::isfinite(v)) throw DomainError("save_pfm: non-finite value");
            std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
            if constexpr (std::endian::native == std::endian::big) bits = detail::byteswap32(bits);
            raw[dst_row * field.width() + c] = bits;
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_pfm: cannot write " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (!out) throw IoError("save_pfm: write failed for " + path.string());
}

inline ScalarField load_depth(const std::filesystem::path& path) { return load_pfm(path); }
inline void save_depth(const ScalarField& field, const std::filesystem::path& path) { save_pfm(field, path); }

/// Min-max normalization to [0,1]. With `invert`, returns 1 - normalized, for
/// estimators that emit inverse depth or disparity.
inline DepthMap normalize_depth(const ScalarField& raw, bool invert) {
    for (double v : raw.values()) {
        if (!std::isfinite(v)) throw DomainError("normalize_depth: non-finite value");
    }
    const double lo = raw.min();
    const double hi = raw.max();
    if (!(hi > lo)) throw DomainError("normalize_depth: constant field has no defined normalization");

    ScalarField out(raw.height(), raw.width());
    const double span = hi - lo;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        double v = (raw[i] - lo) / span;
        if (raw[i] == hi) v = 1.0;
        out[i] = invert ? 1.0 - v : v;
    }
    return DepthMap(std::move(out));
}

}  // namespace advhaze
