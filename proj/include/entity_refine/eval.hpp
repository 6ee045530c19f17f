#pragma once

#include "entity_refine/entity_map.hpp"

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace entity_refine {

struct MatchPair {
    std::size_t pred = 0;
    std::optional<std::size_t> gt;
    double iou = 0.0;
};

/// Greedy matching in score order: each prediction takes the unmatched ground
/// truth with the highest IoU >= threshold (ties: lower gt index). One entry per
/// prediction, in the order visited. Throws DimensionError on a size mismatch.
std::vector<MatchPair> match(const EntityMap& preds, const EntityMap& gts, double iou_threshold);

struct EvalResult {
    double ap = 0.0;
    double ap50 = 0.0;
    double ap75 = 0.0;
    std::vector<std::pair<double, double>> per_threshold;
};

/// 0.50, 0.55, ..., 0.95.
std::vector<double> default_thresholds();

/// Class-agnostic mask AP with predictions pooled across images (ties in score:
/// lower image index first), 101-point interpolated precision. `ap` is the mean
/// over `thresholds`; ap50 / ap75 are always evaluated at 0.5 / 0.75.
/// Throws ValidationError when the lists are misaligned or there is no ground truth.
EvalResult average_precision(std::span<const EntityMap> preds, std::span<const EntityMap> gts,
                             std::span<const double> thresholds);
EvalResult average_precision(std::span<const EntityMap> preds, std::span<const EntityMap> gts);

} // namespace entity_refine
