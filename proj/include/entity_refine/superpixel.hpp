#pragma once

#include "entity_refine/image.hpp"
#include "entity_refine/mask.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace entity_refine {

struct SuperpixelParams {
    // `scale` is expressed in 8-bit color units, as in the reference graph-based
    // method; it is divided by 255 internally because images are in [0,1].
    double scale = 200.0;
    double sigma = 0.8;
    // 0 selects default_min_size() for the image.
    int min_size = 0;
};

/// 100 px for images whose short side is at least 512, shrunk with the image area below that.
int default_min_size(int height, int width);

struct SuperpixelRegion {
    std::uint64_t area = 0;
    Point2 centroid;
    std::array<double, 3> mean_color{};
};

/// Label raster partitioning the image into K nonempty regions labelled 0..K-1.
class SuperpixelMap {
  public:
    SuperpixelMap() = default;
    /// Validates that labels are dense (0..K-1, all used) and computes region stats.
    /// Mean colors are zero when no image is given.
    SuperpixelMap(int height, int width, std::vector<std::int32_t> labels, const Image* image = nullptr);

    int height() const { return height_; }
    int width() const { return width_; }
    int count() const { return static_cast<int>(regions_.size()); }
    std::int32_t label_at(int row, int col) const {
        return labels_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)];
    }
    const std::vector<std::int32_t>& labels() const { return labels_; }
    const std::vector<SuperpixelRegion>& regions() const { return regions_; }
    BinaryMask region_mask(int label) const;

  private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::int32_t> labels_;
    std::vector<SuperpixelRegion> regions_;
};

/// Graph-based segmentation on an 8-connected pixel grid (Felzenszwalb-Huttenlocher).
/// Throws DimensionError when either side is below 2 and ValidationError on bad params.
SuperpixelMap felzenszwalb(const Image& image, const SuperpixelParams& params);

/// Piecewise-constant entity-density raster: each superpixel carries
/// 1 / (1 + area / mean_area), so small superpixels read as dense regions.
class DensityMap {
  public:
    DensityMap() = default;
    DensityMap(int height, int width, std::vector<double> values);

    int height() const { return height_; }
    int width() const { return width_; }
    double at(int row, int col) const {
        return values_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)];
    }
    const std::vector<double>& values() const { return values_; }

  private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

DensityMap density_map(const SuperpixelMap& superpixels);

/// Mean density over the mask's foreground. Throws EmptyMaskError / DimensionError.
double mask_density(const DensityMap& density, const BinaryMask& mask);

} // namespace entity_refine
