#pragma once

#include "entity_refine/mask.hpp"

#include <optional>
#include <span>
#include <vector>

namespace entity_refine {

/// Prompt location in continuous pixel coordinates: pixel (r, c) spans [r, r+1) x [c, c+1).
struct PointPrompt {
    double row = 0.0;
    double col = 0.0;
    int id = 0;

    int pixel_row() const;
    int pixel_col() const;
};

/// Three area-ordered masks answering one point prompt.
struct MaskTriple {
    int prompt_id = 0;
    ScoredMask object;
    ScoredMask part;
    ScoredMask subpart;
};

/// Channel-major C x h x w feature grid over the image.
struct FeatureGrid {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    float at(int channel, int row, int col) const {
        return data[(static_cast<std::size_t>(channel) * static_cast<std::size_t>(height) + static_cast<std::size_t>(row)) *
                        static_cast<std::size_t>(width) +
                    static_cast<std::size_t>(col)];
    }
    /// Throws ValidationError on inconsistent sizes or non-finite values.
    void validate() const;
};

/// A promptable segmenter bound to one image.
class SegmenterProvider {
  public:
    virtual ~SegmenterProvider() = default;

    virtual int height() const = 0;
    virtual int width() const = 0;

    /// One entry per prompt, aligned by position. An empty optional means the
    /// provider has no answer for that location (replay misses).
    virtual std::vector<std::optional<MaskTriple>> segment(std::span<const PointPrompt> prompts) = 0;

    /// Image features, or nullopt when the provider cannot supply them.
    virtual std::optional<FeatureGrid> embed() = 0;

    /// Single-flight providers must not receive concurrent calls.
    virtual bool single_flight() const { return true; }
};

/// n x n grid at ((i + 0.5) H / n, (j + 0.5) W / n), ids in row-major order.
std::vector<PointPrompt> grid_prompts(int height, int width, int points_per_side);

/// Sorts the three masks by area (descending, stable) and relabels them object/part/subpart.
MaskTriple order_levels(MaskTriple triple);

/// Validates prompt bounds, queries the provider and normalises every triple:
/// ids realigned to the prompts, levels re-ordered by area, scores checked.
/// Throws BackendError on out-of-bounds prompts, provider errors and misses.
std::vector<MaskTriple> segment(SegmenterProvider& provider, std::span<const PointPrompt> prompts);

/// As segment(), but misses come back as empty optionals.
std::vector<std::optional<MaskTriple>> segment_allow_missing(SegmenterProvider& provider,
                                                             std::span<const PointPrompt> prompts);

} // namespace entity_refine
