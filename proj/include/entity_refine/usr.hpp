#pragma once

#include "entity_refine/backend.hpp"
#include "entity_refine/entity_map.hpp"
#include "entity_refine/mmg.hpp"
#include "entity_refine/superpixel.hpp"

#include <span>
#include <vector>

namespace entity_refine {

/// A 4-connected group of superpixels that the entity map leaves (mostly) uncovered.
struct UncoveredRegion {
    BinaryMask mask;
    std::vector<int> source_superpixels;
};

/// A superpixel is uncovered when less than `coverage_fraction` of its pixels
/// lie in the map's union. Adjacent uncovered superpixels form one region;
/// regions below `min_region_px` are dropped. Regions come in first-pixel order.
std::vector<UncoveredRegion> uncovered_regions(const EntityMap& map, const SuperpixelMap& superpixels,
                                               double coverage_fraction, int min_region_px);

/// One prompt per region: the centroid of the part/subpart mask holding at least
/// `containment_frac` of the region (highest containment, then score, then
/// smaller area), else the region centroid. A centroid whose pixel falls outside
/// its mask is moved to the nearest pixel of the mask. Prompts within 1 px of an earlier one
/// are dropped; ids count up from `first_id`.
std::vector<PointPrompt> additional_prompts(std::span<const UncoveredRegion> regions, std::span<const ScoredMask> part,
                                            std::span<const ScoredMask> subpart, double containment_frac,
                                            int first_id);

/// Inserts each additional mask in turn. The mask is clipped to the space the map
/// does not cover yet; if its unclipped IoU with some entity exceeds rho, the
/// clipped pixels join the best-matching entity, otherwise they form a new entity.
EntityMap fuse(const EntityMap& map, std::span<const ScoredMask> additional, double rho);

/// Greedy cover: repeatedly fuse the candidate adding the most uncovered pixels
/// (ties: higher score, lower prompt id, earlier candidate) until the best gain
/// drops below `min_gain_px`. Each candidate is used at most once.
EntityMap greedy_fill(const EntityMap& map, std::span<const ScoredMask> candidates, int min_gain_px, double rho,
                      std::size_t* accepted = nullptr);

struct UsrParams {
    double rho = 0.1;
    double coverage_fraction = 0.5;
    double containment_frac = 0.9;
    int min_region_px = 64;
    int min_gain_px = 64;
    // Levels of an answer scoring below this are ignored when picking its candidate.
    double min_confidence = 0.0;
};

struct UsrReport {
    std::size_t regions = 0;
    std::size_t prompts = 0;
    std::size_t misses = 0;
    std::size_t accepted = 0;
};

/// Uncovered regions -> additional prompts -> segment -> greedy fill, once.
/// Candidates are the object level of each answer (best level when that is empty),
/// after levels below params.min_confidence are discarded. Provider misses are skipped.
EntityMap run_usr(SegmenterProvider& provider, const SuperpixelMap& superpixels, std::span<const ScoredMask> part,
                  std::span<const ScoredMask> subpart, const EntityMap& map, const UsrParams& params,
                  UsrReport* report = nullptr);

} // namespace entity_refine
