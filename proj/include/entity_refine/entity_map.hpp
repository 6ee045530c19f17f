#pragma once

#include "entity_refine/mask.hpp"

#include <vector>

namespace entity_refine {

/// Ordered set of scored masks over one image. The refinement pipeline keeps
/// them pairwise disjoint and nonempty; ablation baselines and evaluator inputs
/// may not, so the container itself does not enforce it.
struct EntityMap {
    int height = 0;
    int width = 0;
    std::vector<ScoredMask> masks;

    /// Union of all masks (empty mask when there are none).
    BinaryMask coverage() const;
    std::uint64_t covered_pixels() const { return coverage().area(); }
    bool pairwise_disjoint() const;
    /// Sum of pixels shared by more than one mask.
    std::uint64_t overlapping_pixels() const;
};

} // namespace entity_refine
