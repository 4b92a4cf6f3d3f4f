#pragma once

#include <vector>

#include "attnground/synthoracle.hpp"

namespace attnground::toydiff {

inline constexpr int kImageSide = 16;

struct Image {
    int side = kImageSide;
    std::vector<float> pixels;  // row-major, intensities in [0, 1]

    float operator()(int r, int c) const { return pixels[size_t(r) * side + c]; }
    bool operator==(const Image&) const = default;
};

// Coverage-based anti-aliasing: each output pixel averages a supersample x supersample grid
// of point samples on the scene canvas.
inline Image render(const SceneSpec& scene, int side = kImageSide, int supersample = 4) {
    Image img;
    img.side = side;
    img.pixels.assign(size_t(side) * side, 0.0f);
    const double cell = double(scene.canvas) / side;
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            int hits = 0;
            for (int sy = 0; sy < supersample; ++sy)
                for (int sx = 0; sx < supersample; ++sx) {
                    const double x = (c + (sx + 0.5) / supersample) * cell;
                    const double y = (r + (sy + 0.5) / supersample) * cell;
                    for (const auto& o : scene.objects)
                        if (o.covers(x, y)) {
                            ++hits;
                            break;
                        }
                }
            img.pixels[size_t(r) * side + c] = float(hits) / float(supersample * supersample);
        }
    return img;
}

}  // namespace attnground::toydiff
