#pragma once

// Heatmap overlays: activation map in a blue-to-red colormap blended over a grayscale
// base image, ground-truth boxes outlined in white, written as 8-bit RGB PNG.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "attnground/activation_map.hpp"
#include "attnground/attnstore.hpp"
#include "attnground/errors.hpp"

namespace attnground {

struct Rgb {
    uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

struct RgbImage {
    int width = 0, height = 0;
    std::vector<Rgb> pixels;  // row-major

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(size_t(w) * h) {}
    Rgb& at(int x, int y) { return pixels[size_t(y) * width + x]; }
    const Rgb& at(int x, int y) const { return pixels[size_t(y) * width + x]; }
};

// Piecewise-linear jet: 0 blue, 0.25 cyan, 0.5 green, 0.75 yellow, 1 red.
inline Rgb colormap(double v) {
    v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    auto ch = [&](double center) { return std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0); };
    auto q = [](double x) { return uint8_t(std::lround(x * 255.0)); };
    return {q(ch(3.0)), q(ch(2.0)), q(ch(1.0))};
}

struct OverlayOptions {
    int scale = 4;        // output pixels per map cell
    double alpha = 0.55;  // heatmap weight over the base image
    bool draw_boxes = true;
};

// base: grayscale intensities in [0, 1] on a square grid of any side (resampled by nearest
// neighbour to the map grid); may be empty for a heatmap-only image.
inline RgbImage render_overlay(const ActivationMap& map, const std::vector<float>& base, int base_side,
                               const GroundTruthRegion* gt, const OverlayOptions& opt = {}) {
    if (map.size() == 0) throw ArgumentError("overlay: empty map");
    if (opt.scale < 1) throw ArgumentError("overlay: scale must be >= 1");
    if (!base.empty() && base.size() != size_t(base_side) * base_side)
        throw ArgumentError("overlay: base image is not base_side x base_side");
    if (gt && (gt->grid != map.rows || gt->grid != map.cols))
        throw ArgumentError("overlay: ground-truth grid " + std::to_string(gt->grid) + " does not match map " +
                            std::to_string(map.rows) + "x" + std::to_string(map.cols));
    const double lo = map.min(), hi = map.max();
    const double span = hi > lo ? hi - lo : 1.0;
    RgbImage img(map.cols * opt.scale, map.rows * opt.scale);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const int r = y / opt.scale, c = x / opt.scale;
            const Rgb heat = colormap((map(r, c) - lo) / span);
            double g = 0.0;
            if (!base.empty()) {
                const int br = int(int64_t(y) * base_side / img.height), bc = int(int64_t(x) * base_side / img.width);
                g = std::clamp(double(base[size_t(br) * base_side + bc]), 0.0, 1.0) * 255.0;
            }
            const double a = base.empty() ? 1.0 : opt.alpha;
            auto mix = [&](uint8_t h) { return uint8_t(std::lround(a * h + (1.0 - a) * g)); };
            img.at(x, y) = {mix(heat.r), mix(heat.g), mix(heat.b)};
        }
    if (gt && opt.draw_boxes) {
        const Rgb white{255, 255, 255};
        for (const auto& b : gt->boxes) {
            const int x0 = std::clamp(b.x * opt.scale, 0, img.width - 1);
            const int y0 = std::clamp(b.y * opt.scale, 0, img.height - 1);
            const int x1 = std::clamp((b.x + b.w) * opt.scale - 1, 0, img.width - 1);
            const int y1 = std::clamp((b.y + b.h) * opt.scale - 1, 0, img.height - 1);
            for (int x = x0; x <= x1; ++x) img.at(x, y0) = img.at(x, y1) = white;
            for (int y = y0; y <= y1; ++y) img.at(x0, y) = img.at(x1, y) = white;
        }
    }
    return img;
}

inline std::string encode_png(const RgbImage& img) {
    if (img.width < 1 || img.height < 1) throw ArgumentError("png: empty image");
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = png_uint_32(img.width);
    pi.height = png_uint_32(img.height);
    pi.format = PNG_FORMAT_RGB;
    static_assert(sizeof(Rgb) == 3);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("libpng: ") + pi.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("libpng: ") + pi.message);
    out.resize(size);
    return out;
}

// Any PNG, converted to 8-bit RGB.
inline RgbImage decode_png(const std::string& bytes) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
        throw FormatError(std::string("not a readable PNG: ") + pi.message);
    pi.format = PNG_FORMAT_RGB;
    RgbImage img(int(pi.width), int(pi.height));
    if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
        png_image_free(&pi);
        throw FormatError(std::string("PNG decode failed: ") + pi.message);
    }
    return img;
}

// Luma in [0, 1], row-major.
inline std::vector<float> to_gray(const RgbImage& img) {
    std::vector<float> g(img.pixels.size());
    for (size_t i = 0; i < g.size(); ++i) {
        const auto& p = img.pixels[i];
        g[i] = float((0.299 * p.r + 0.587 * p.g + 0.114 * p.b) / 255.0);
    }
    return g;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
    detail::write_atomically(path, encode_png(img));
}

}  // namespace attnground
