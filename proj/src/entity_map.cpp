#include "entity_refine/entity_map.hpp"

#include "entity_refine/error.hpp"

namespace entity_refine {

BinaryMask EntityMap::coverage() const {
    BinaryMask covered = BinaryMask::empty(height, width);
    for (const auto& m : masks) {
        covered = unite(covered, m.mask);
    }
    return covered;
}

bool EntityMap::pairwise_disjoint() const {
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (std::size_t j = i + 1; j < masks.size(); ++j) {
            if (intersection_area(masks[i].mask, masks[j].mask) != 0) {
                return false;
            }
        }
    }
    return true;
}

std::uint64_t EntityMap::overlapping_pixels() const {
    std::uint64_t total = 0;
    for (const auto& m : masks) {
        total += m.mask.area();
    }
    return total - coverage().area();
}

} // namespace entity_refine
