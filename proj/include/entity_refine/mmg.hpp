#pragma once

#include "entity_refine/backend.hpp"
#include "entity_refine/image.hpp"
#include "entity_refine/mask.hpp"
#include "entity_refine/superpixel.hpp"

#include <span>
#include <vector>

namespace entity_refine {

/// Per-prompt level lists for one prompt grid, indexed by prompt position.
struct LevelMaps {
    int grid_n = 0;
    std::vector<ScoredMask> object;
    std::vector<ScoredMask> part;
    std::vector<ScoredMask> subpart;
    // The highest-scoring of the three; ties prefer the coarser level.
    std::vector<ScoredMask> best;
};

struct MmgParams {
    // Masks scoring below this are discarded right after segmentation, as the
    // automatic mask generator does with its predicted-IoU filter.
    double min_confidence = 0.88;
    double theta_o = 0.8;
    double gamma_o = 0.6;
    double n_t = 0.5;
    int grid_coarse = 32;
    int grid_fine = 64;
    SuperpixelParams superpixels;
};

struct MmgOutput {
    std::vector<ScoredMask> object_refined;
    std::vector<ScoredMask> part_thinned;
    std::vector<ScoredMask> subpart_thinned;
    LevelMaps coarse;
    LevelMaps fine;
    std::vector<PointPrompt> prompts_fine;
    SuperpixelMap superpixels;
    DensityMap density;
};

/// Throws ValidationError when triples are empty or violate the area ordering.
LevelMaps stratify(std::span<const MaskTriple> triples, int grid_n);

/// Replaces every mask scoring below `min_confidence` by an empty mask of score 0,
/// keeping list positions (and so prompt alignment) intact.
LevelMaps drop_low_confidence(LevelMaps levels, double min_confidence);

/// Object-level filtering: NMS at theta_o over the nonempty object masks, then
/// keep survivors whose best IoU against any best-level mask reaches gamma_o.
std::vector<ScoredMask> filter_object_level(std::span<const ScoredMask> object, std::span<const ScoredMask> best,
                                            double theta_o, double gamma_o);

/// Greedy NMS whose threshold grows with local entity density: a candidate is
/// suppressed by a kept mask k iff IoU > max(n_t, mask_density(density, k)).
/// Empty masks are dropped.
std::vector<ScoredMask> adaptive_nms(std::span<const ScoredMask> masks, const DensityMap& density, double n_t);

/// Nonempty masks of all three levels pooled and thinned by plain NMS at
/// theta_o: the automatic-mask-generation stand-in used when MMG is disabled.
std::vector<ScoredMask> pooled_level_nms(const LevelMaps& levels, double theta_o);

std::vector<ScoredMask> nonempty(std::span<const ScoredMask> masks);

/// Coarse grid -> stratify -> object filtering; superpixels -> density ->
/// adaptive NMS on part and subpart levels; fine grid -> stratify.
MmgOutput run_mmg(SegmenterProvider& provider, const Image& image, const MmgParams& params);

} // namespace entity_refine
