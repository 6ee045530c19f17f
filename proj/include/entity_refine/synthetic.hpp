#pragma once

#include "entity_refine/backend.hpp"
#include "entity_refine/entity_map.hpp"
#include "entity_refine/image.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace entity_refine {

enum class ShapeKind { rectangle, ellipse, l_polyomino };

const char* shape_name(ShapeKind shape);
ShapeKind parse_shape(const std::string& name);

// An entity occupies its shape inside the placement box; `parts` equal strips
// along the longer box side partition it.
struct EntitySpec {
    ShapeKind shape = ShapeKind::rectangle;
    int row = 0;
    int col = 0;
    int height = 1;
    int width = 1;
    Rgb8 color;
    int parts = 1;
};

struct NoiseProfile {
    int boundary_jitter_px = 0;
    double score_noise_std = 0.0;
    double dropout_prob = 0.0;
    std::uint64_t seed = 0;
};

struct SceneSpec {
    int height = 0;
    int width = 0;
    Rgb8 background{40, 40, 40};
    std::vector<EntitySpec> entities;
    NoiseProfile noise;
};

/// Throws ValidationError on bad geometry, empty parts, overlapping entities or noise out of range.
void validate(const SceneSpec& scene);

struct SceneTruth {
    std::vector<BinaryMask> entities;
    std::vector<std::vector<BinaryMask>> parts;
};

/// Validates and rasterises the scene.
SceneTruth rasterize(const SceneSpec& scene);

/// Each part painted with a brightness-shifted variant of its entity color.
Image render(const SceneSpec& scene);

/// Noiseless entity masks, one per entity, score 1.
EntityMap ground_truth(const SceneSpec& scene);

struct SceneOptions {
    int height = 128;
    int width = 128;
    int min_entities = 3;
    int max_entities = 6;
    int min_side = 16;
    int max_side = 44;
    // Minimum background gap between entity boxes.
    int gap = 4;
    NoiseProfile noise;
};

/// Seeded random scene of disjoint entities. The noise seed is taken from `options.noise`.
SceneSpec random_scene(std::uint64_t seed, const SceneOptions& options);

/// True when every entity contains the pixel of at least one grid prompt.
bool entities_hit_grid(const SceneSpec& scene, int points_per_side);

/// Exact-or-perturbed segmenter over a synthetic scene.
///
/// A prompt inside entity E returns E, the part of E under the point, and the
/// quadrant of that part (split at the part centroid) under the point. With
/// jitter each level is independently dilated or eroded by up to
/// boundary_jitter_px; dropout replaces the object level by the part level.
/// Scores are the IoU of each emitted mask with its noiseless level plus
/// Gaussian noise, clamped to [0,1]. All randomness is keyed on (seed, pixel),
/// so answers do not depend on call order or thread count.
class OracleProvider : public SegmenterProvider {
  public:
    explicit OracleProvider(SceneSpec scene);

    int height() const override { return scene_.height; }
    int width() const override { return scene_.width; }
    std::vector<std::optional<MaskTriple>> segment(std::span<const PointPrompt> prompts) override;
    /// Mean color of 8x8 patches shifted by -0.5 per channel, C = 3. Without the
    /// shift every pair of dark-ish colors has cosine near 1.
    std::optional<FeatureGrid> embed() override;
    bool single_flight() const override { return false; }

    const Image& image() const { return image_; }
    const SceneSpec& scene() const { return scene_; }

  private:
    struct Variants {
        BinaryMask truth;
        // [radius][0 = dilate, 1 = erode]
        std::vector<std::array<BinaryMask, 2>> perturbed;
        std::vector<std::array<double, 2>> truth_iou;
    };

    MaskTriple answer(const PointPrompt& prompt) const;
    std::size_t add_variants(BinaryMask truth);

    SceneSpec scene_;
    Image image_;
    std::vector<Variants> variants_;
    std::vector<std::size_t> entity_variant_;
    std::vector<std::vector<std::size_t>> part_variant_;
    std::vector<std::vector<std::array<std::size_t, 4>>> subpart_variant_;
    std::vector<std::vector<Point2>> part_centroid_;
    std::vector<std::int32_t> entity_at_;
    std::vector<std::int32_t> part_at_;
};

} // namespace entity_refine
