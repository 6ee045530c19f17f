#include "entity_refine/superpixel.hpp"

#include "entity_refine/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace entity_refine {

namespace {

struct Edge {
    std::uint32_t a;
    std::uint32_t b;
    float weight;
};

class DisjointSet {
  public:
    explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1), internal_(n, 0.0f) {
        std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
    }

    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    // Returns the surviving root.
    std::uint32_t join(std::uint32_t a, std::uint32_t b, float weight) {
        if (size_[a] < size_[b]) {
            std::swap(a, b);
        }
        parent_[b] = a;
        size_[a] += size_[b];
        internal_[a] = std::max({internal_[a], internal_[b], weight});
        return a;
    }

    std::uint32_t size(std::uint32_t root) const { return size_[root]; }
    float internal(std::uint32_t root) const { return internal_[root]; }

  private:
    std::vector<std::uint32_t> parent_;
    std::vector<std::uint32_t> size_;
    std::vector<float> internal_;
};

std::vector<float> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(sigma * 4.0));
    std::vector<float> kernel(static_cast<std::size_t>(radius) + 1);
    double sum = 0.0;
    for (int i = 0; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
        kernel[static_cast<std::size_t>(i)] = static_cast<float>(v);
        sum += i == 0 ? v : 2.0 * v;
    }
    for (auto& v : kernel) {
        v = static_cast<float>(v / sum);
    }
    return kernel;
}

// Separable blur with edge replication.
Image smooth(const Image& image, double sigma) {
    if (sigma <= 0.0) {
        return image;
    }
    const auto kernel = gaussian_kernel(sigma);
    const int radius = static_cast<int>(kernel.size()) - 1;
    const int h = image.height;
    const int w = image.width;
    Image tmp(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                float acc = kernel[0] * image.at(r, c, ch);
                for (int i = 1; i <= radius; ++i) {
                    acc += kernel[static_cast<std::size_t>(i)] *
                           (image.at(r, std::max(c - i, 0), ch) + image.at(r, std::min(c + i, w - 1), ch));
                }
                tmp.at(r, c, ch) = acc;
            }
        }
    }
    Image out(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                float acc = kernel[0] * tmp.at(r, c, ch);
                for (int i = 1; i <= radius; ++i) {
                    acc += kernel[static_cast<std::size_t>(i)] *
                           (tmp.at(std::max(r - i, 0), c, ch) + tmp.at(std::min(r + i, h - 1), c, ch));
                }
                out.at(r, c, ch) = acc;
            }
        }
    }
    return out;
}

float color_distance(const Image& image, int r0, int c0, int r1, int c1) {
    float sum = 0.0f;
    for (int ch = 0; ch < 3; ++ch) {
        const float d = image.at(r0, c0, ch) - image.at(r1, c1, ch);
        sum += d * d;
    }
    return std::sqrt(sum);
}

} // namespace

int default_min_size(int height, int width) {
    const double short_side = std::min(height, width);
    if (short_side >= 512.0) {
        return 100;
    }
    const double ratio = short_side / 512.0;
    return std::max(1, static_cast<int>(std::lround(100.0 * ratio * ratio)));
}

SuperpixelMap::SuperpixelMap(int height, int width, std::vector<std::int32_t> labels, const Image* image)
    : height_(height), width_(width), labels_(std::move(labels)) {
    if (height <= 0 || width <= 0 || labels_.size() != static_cast<std::size_t>(height) * width) {
        throw DimensionError("label raster does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    if (image != nullptr && (image->height != height || image->width != width)) {
        throw DimensionError("image size does not match the label raster");
    }
    const std::int32_t max_label = *std::max_element(labels_.begin(), labels_.end());
    if (*std::min_element(labels_.begin(), labels_.end()) < 0) {
        throw ValidationError("negative superpixel label");
    }
    std::vector<SuperpixelRegion> regions(static_cast<std::size_t>(max_label) + 1);
    std::vector<std::array<double, 2>> sums(regions.size(), {0.0, 0.0});
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * width + c;
            auto& region = regions[static_cast<std::size_t>(labels_[i])];
            auto& sum = sums[static_cast<std::size_t>(labels_[i])];
            ++region.area;
            sum[0] += r;
            sum[1] += c;
            if (image != nullptr) {
                for (int ch = 0; ch < 3; ++ch) {
                    region.mean_color[static_cast<std::size_t>(ch)] += image->at(r, c, ch);
                }
            }
        }
    }
    for (std::size_t k = 0; k < regions.size(); ++k) {
        auto& region = regions[k];
        if (region.area == 0) {
            throw ValidationError("superpixel label " + std::to_string(k) + " is unused");
        }
        const auto n = static_cast<double>(region.area);
        region.centroid = {sums[k][0] / n, sums[k][1] / n};
        for (auto& v : region.mean_color) {
            v /= n;
        }
    }
    regions_ = std::move(regions);
}

BinaryMask SuperpixelMap::region_mask(int label) const {
    std::vector<std::uint64_t> indices;
    indices.reserve(regions_.at(static_cast<std::size_t>(label)).area);
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == label) {
            indices.push_back(i);
        }
    }
    return BinaryMask::from_sorted_indices(height_, width_, indices);
}

SuperpixelMap felzenszwalb(const Image& image, const SuperpixelParams& params) {
    const int h = image.height;
    const int w = image.width;
    if (h < 2 || w < 2) {
        throw DimensionError("superpixel segmentation needs at least 2x2 pixels");
    }
    if (!(params.scale > 0.0) || !(params.sigma >= 0.0) || params.min_size < 0) {
        throw ValidationError("invalid superpixel parameters");
    }
    const Image smoothed = smooth(image, params.sigma);
    const float k = static_cast<float>(params.scale / 255.0);
    const auto n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    const int requested_min = params.min_size == 0 ? default_min_size(h, w) : params.min_size;
    const auto min_size = static_cast<std::uint32_t>(std::min<std::uint64_t>(static_cast<std::uint64_t>(requested_min), n));

    std::vector<Edge> edges;
    edges.reserve(n * 4);
    auto id = [w](int r, int c) { return static_cast<std::uint32_t>(r * w + c); };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (c + 1 < w) {
                edges.push_back({id(r, c), id(r, c + 1), color_distance(smoothed, r, c, r, c + 1)});
            }
            if (r + 1 < h) {
                edges.push_back({id(r, c), id(r + 1, c), color_distance(smoothed, r, c, r + 1, c)});
            }
            if (r + 1 < h && c + 1 < w) {
                edges.push_back({id(r, c), id(r + 1, c + 1), color_distance(smoothed, r, c, r + 1, c + 1)});
            }
            if (r > 0 && c + 1 < w) {
                edges.push_back({id(r, c), id(r - 1, c + 1), color_distance(smoothed, r, c, r - 1, c + 1)});
            }
        }
    }
    // Stable: equal weights keep construction order.
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.weight < y.weight; });

    DisjointSet sets(n);
    for (const Edge& e : edges) {
        const std::uint32_t a = sets.find(e.a);
        const std::uint32_t b = sets.find(e.b);
        if (a == b) {
            continue;
        }
        const float threshold_a = sets.internal(a) + k / static_cast<float>(sets.size(a));
        const float threshold_b = sets.internal(b) + k / static_cast<float>(sets.size(b));
        if (e.weight <= std::min(threshold_a, threshold_b)) {
            sets.join(a, b, e.weight);
        }
    }
    // Absorb small components through their cheapest boundary edge.
    for (const Edge& e : edges) {
        const std::uint32_t a = sets.find(e.a);
        const std::uint32_t b = sets.find(e.b);
        if (a != b && (sets.size(a) < min_size || sets.size(b) < min_size)) {
            sets.join(a, b, e.weight);
        }
    }

    std::vector<std::int32_t> labels(n);
    std::vector<std::int32_t> remap(n, -1);
    std::int32_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t root = sets.find(static_cast<std::uint32_t>(i));
        if (remap[root] < 0) {
            remap[root] = next++;
        }
        labels[i] = remap[root];
    }
    return SuperpixelMap(h, w, std::move(labels), &image);
}

DensityMap::DensityMap(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (height <= 0 || width <= 0 || values_.size() != static_cast<std::size_t>(height) * width) {
        throw DimensionError("density raster does not match its dimensions");
    }
}

DensityMap density_map(const SuperpixelMap& superpixels) {
    const auto& regions = superpixels.regions();
    const double mean_area =
        static_cast<double>(static_cast<std::uint64_t>(superpixels.height()) * superpixels.width()) /
        static_cast<double>(regions.size());
    std::vector<double> weights(regions.size());
    for (std::size_t k = 0; k < regions.size(); ++k) {
        weights[k] = 1.0 / (1.0 + static_cast<double>(regions[k].area) / mean_area);
    }
    std::vector<double> values(superpixels.labels().size());
    std::transform(superpixels.labels().begin(), superpixels.labels().end(), values.begin(),
                   [&](std::int32_t label) { return weights[static_cast<std::size_t>(label)]; });
    return DensityMap(superpixels.height(), superpixels.width(), std::move(values));
}

double mask_density(const DensityMap& density, const BinaryMask& mask) {
    if (density.height() != mask.height() || density.width() != mask.width()) {
        throw DimensionError("density map and mask sizes differ");
    }
    if (mask.is_empty()) {
        throw EmptyMaskError("density of an empty mask");
    }
    double sum = 0.0;
    std::size_t position = 0;
    bool value = false;
    const auto& values = density.values();
    for (const auto run : mask.runs()) {
        if (value) {
            for (std::size_t i = position; i < position + run; ++i) {
                sum += values[i];
            }
        }
        position += run;
        value = !value;
    }
    return sum / static_cast<double>(mask.area());
}

} // namespace entity_refine
