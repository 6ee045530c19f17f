#include "entity_refine/image.hpp"

#include "entity_refine/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace entity_refine {

Image::Image(int h, int w)
    : height(h), width(w), data(static_cast<std::size_t>(std::max(h, 0)) * static_cast<std::size_t>(std::max(w, 0)) * 3,
                                0.0f) {}

std::uint8_t to_byte(float value) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0f, 1.0f) * 255.0f));
}

Image read_png(const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&png, path.c_str()) == 0) {
        throw IoError("cannot read PNG '" + path + "': " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr) == 0) {
        const std::string message = png.message;
        png_image_free(&png);
        throw IoError("cannot decode PNG '" + path + "': " + message);
    }
    Image image(static_cast<int>(png.height), static_cast<int>(png.width));
    std::transform(buffer.begin(), buffer.end(), image.data.begin(),
                   [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
    return image;
}

void write_png(const std::string& path, const Image& image) {
    std::vector<std::uint8_t> buffer(image.data.size());
    std::transform(image.data.begin(), image.data.end(), buffer.begin(), to_byte);
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr) == 0) {
        throw IoError("cannot write PNG '" + path + "': " + png.message);
    }
}

std::array<double, 3> srgb_to_lab(const std::array<double, 3>& rgb) {
    auto linear = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
    const double r = linear(rgb[0]);
    const double g = linear(rgb[1]);
    const double b = linear(rgb[2]);
    const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.00000;
    const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    auto f = [](double t) {
        constexpr double eps = 216.0 / 24389.0;
        constexpr double kappa = 24389.0 / 27.0;
        return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
    };
    const double fx = f(x);
    const double fy = f(y);
    const double fz = f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<float, 3> hsv_to_rgb(double hue, double saturation, double value) {
    const double h = (hue - std::floor(hue)) * 6.0;
    const int sector = static_cast<int>(std::floor(h)) % 6;
    const double f = h - std::floor(h);
    const double p = value * (1.0 - saturation);
    const double q = value * (1.0 - saturation * f);
    const double t = value * (1.0 - saturation * (1.0 - f));
    double r = value;
    double g = t;
    double b = p;
    switch (sector) {
    case 1: r = q; g = value; b = p; break;
    case 2: r = p; g = value; b = t; break;
    case 3: r = p; g = q; b = value; break;
    case 4: r = t; g = p; b = value; break;
    case 5: r = value; g = p; b = q; break;
    default: break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

} // namespace entity_refine
