#include "entity_refine/viz.hpp"

#include "entity_refine/error.hpp"

#include <cmath>
#include <vector>

namespace entity_refine {

namespace {

constexpr double kGoldenConjugate = 0.618033988749894848;

void blend(Image& out, int r, int c, const std::array<float, 3>& color, float alpha) {
    for (int ch = 0; ch < 3; ++ch) {
        float& v = out.at(r, c, ch);
        v = (1.0f - alpha) * v + alpha * color[static_cast<std::size_t>(ch)];
    }
}

// Paints a label raster (-1 = nothing) over `base`.
Image paint(const Image& base, const std::vector<std::int64_t>& labels) {
    Image out = base;
    const int h = base.height;
    const int w = base.width;
    auto label = [&](int r, int c) { return labels[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + c]; };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const auto l = label(r, c);
            if (l < 0) {
                continue;
            }
            const bool edge = (r > 0 && label(r - 1, c) != l) || (r + 1 < h && label(r + 1, c) != l) ||
                              (c > 0 && label(r, c - 1) != l) || (c + 1 < w && label(r, c + 1) != l);
            blend(out, r, c, palette_color(static_cast<std::size_t>(l)), edge ? 1.0f : 0.5f);
        }
    }
    return out;
}

} // namespace

std::array<float, 3> palette_color(std::size_t index) {
    const double hue = std::fmod(static_cast<double>(index) * kGoldenConjugate, 1.0);
    return hsv_to_rgb(hue, 0.75, 0.95);
}

Image render_overlay(const Image& image, const EntityMap& map) {
    if (map.height != image.height || map.width != image.width) {
        throw DimensionError("entity map and image sizes differ");
    }
    // Masks are blended one after another so overlapping baselines stay visible.
    Image out = image;
    const int w = image.width;
    for (std::size_t i = 0; i < map.masks.size(); ++i) {
        const Bitmap bits = decode(map.masks[i].mask);
        const auto color = palette_color(i);
        for (int r = 0; r < image.height; ++r) {
            for (int c = 0; c < w; ++c) {
                if (!bits.at(r, c)) {
                    continue;
                }
                const bool edge = (r > 0 && !bits.at(r - 1, c)) || (r + 1 < image.height && !bits.at(r + 1, c)) ||
                                  (c > 0 && !bits.at(r, c - 1)) || (c + 1 < w && !bits.at(r, c + 1));
                blend(out, r, c, color, edge ? 1.0f : 0.5f);
            }
        }
    }
    return out;
}

Image render_labels(const EntityMap& map) {
    Image out(map.height, map.width);
    for (std::size_t i = 0; i < map.masks.size(); ++i) {
        const std::uint32_t value = static_cast<std::uint32_t>(i + 1);
        if (value > 0xFFFFFFu) {
            throw ValidationError("too many masks for a 24-bit label image");
        }
        const Bitmap bits = decode(map.masks[i].mask);
        for (int r = 0; r < map.height; ++r) {
            for (int c = 0; c < map.width; ++c) {
                if (bits.at(r, c)) {
                    out.at(r, c, 0) = static_cast<float>((value >> 16) & 0xFFu) / 255.0f;
                    out.at(r, c, 1) = static_cast<float>((value >> 8) & 0xFFu) / 255.0f;
                    out.at(r, c, 2) = static_cast<float>(value & 0xFFu) / 255.0f;
                }
            }
        }
    }
    return out;
}

Image render_superpixels(const Image& image, const SuperpixelMap& superpixels) {
    if (superpixels.height() != image.height || superpixels.width() != image.width) {
        throw DimensionError("superpixel map and image sizes differ");
    }
    return paint(image, std::vector<std::int64_t>(superpixels.labels().begin(), superpixels.labels().end()));
}

} // namespace entity_refine
