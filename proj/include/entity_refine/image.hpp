#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace entity_refine {

/// Interleaved RGB raster with channel values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w);

    float at(int row, int col, int channel) const { return data[offset(row, col) + static_cast<std::size_t>(channel)]; }
    float& at(int row, int col, int channel) { return data[offset(row, col) + static_cast<std::size_t>(channel)]; }
    std::size_t offset(int row, int col) const {
        return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)) * 3;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

struct Rgb8 {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Rgb8&, const Rgb8&) = default;
};

inline std::array<float, 3> to_unit(Rgb8 c) {
    return {static_cast<float>(c.r) / 255.0f, static_cast<float>(c.g) / 255.0f, static_cast<float>(c.b) / 255.0f};
}

std::uint8_t to_byte(float value);

/// 8-bit RGB PNG I/O. Alpha is dropped and grayscale expanded on read. Throws IoError.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& image);

/// CIE L*a*b* (D65) of an sRGB color in [0,1].
std::array<double, 3> srgb_to_lab(const std::array<double, 3>& rgb);

/// HSV (all in [0,1]) to RGB in [0,1].
std::array<float, 3> hsv_to_rgb(double hue, double saturation, double value);

} // namespace entity_refine
