#include "entity_refine/eval.hpp"

#include "entity_refine/error.hpp"
#include "entity_refine/parallel.hpp"

#include <algorithm>
#include <numeric>

namespace entity_refine {

namespace {

using IouTable = std::vector<std::vector<double>>;

IouTable iou_table(const EntityMap& preds, const EntityMap& gts) {
    if (preds.height != gts.height || preds.width != gts.width) {
        throw DimensionError("prediction and ground-truth maps differ in size");
    }
    IouTable table(preds.masks.size(), std::vector<double>(gts.masks.size(), 0.0));
    for (std::size_t p = 0; p < preds.masks.size(); ++p) {
        for (std::size_t g = 0; g < gts.masks.size(); ++g) {
            table[p][g] = iou(preds.masks[p].mask, gts.masks[g].mask);
        }
    }
    return table;
}

std::vector<MatchPair> match_with(const EntityMap& preds, const IouTable& table, std::size_t n_gt, double threshold) {
    std::vector<bool> taken(n_gt, false);
    std::vector<MatchPair> out;
    for (const std::size_t p : score_order(preds.masks)) {
        MatchPair m{p, std::nullopt, 0.0};
        for (std::size_t g = 0; g < n_gt; ++g) {
            const double v = table[p][g];
            if (!taken[g] && v >= threshold && (!m.gt || v > m.iou)) {
                m.gt = g;
                m.iou = v;
            }
        }
        if (m.gt) {
            taken[*m.gt] = true;
        }
        out.push_back(m);
    }
    return out;
}

// 101-point interpolated AP over a ranked list of hit flags.
double interpolated_ap(const std::vector<bool>& hits, std::size_t n_gt) {
    std::vector<double> recall(hits.size());
    std::vector<double> precision(hits.size());
    std::size_t tp = 0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        tp += hits[i] ? 1 : 0;
        recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    for (std::size_t i = precision.size(); i-- > 1;) {
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double sum = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) {
            sum += precision[static_cast<std::size_t>(it - recall.begin())];
        }
    }
    return sum / 101.0;
}

} // namespace

std::vector<MatchPair> match(const EntityMap& preds, const EntityMap& gts, double iou_threshold) {
    return match_with(preds, iou_table(preds, gts), gts.masks.size(), iou_threshold);
}

std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) {
        t.push_back((50 + 5 * i) / 100.0);
    }
    return t;
}

EvalResult average_precision(std::span<const EntityMap> preds, std::span<const EntityMap> gts,
                             std::span<const double> thresholds) {
    if (preds.size() != gts.size()) {
        throw ValidationError("prediction and ground-truth collections differ in image count");
    }
    if (thresholds.empty()) {
        throw ValidationError("no IoU thresholds given");
    }
    std::size_t n_gt = 0;
    for (const auto& g : gts) {
        n_gt += g.masks.size();
    }
    if (n_gt == 0) {
        throw ValidationError("AP is undefined without ground-truth masks");
    }
    std::vector<IouTable> tables(preds.size());
    parallel_for(preds.size(), [&](std::size_t i) { tables[i] = iou_table(preds[i], gts[i]); });

    // Global rank: score descending, then image, then rank within the image.
    struct Ranked {
        double score;
        std::size_t image;
        std::size_t rank;
        std::size_t pred;
    };
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto order = score_order(preds[i].masks);
        for (std::size_t r = 0; r < order.size(); ++r) {
            ranked.push_back({preds[i].masks[order[r]].score, i, r, order[r]});
        }
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.image != b.image ? a.image < b.image : a.rank < b.rank;
    });

    auto ap_at = [&](double threshold) {
        std::vector<std::vector<bool>> hit(preds.size());
        for (std::size_t i = 0; i < preds.size(); ++i) {
            hit[i].assign(preds[i].masks.size(), false);
            for (const auto& m : match_with(preds[i], tables[i], gts[i].masks.size(), threshold)) {
                hit[i][m.pred] = m.gt.has_value();
            }
        }
        std::vector<bool> flags;
        flags.reserve(ranked.size());
        for (const auto& r : ranked) {
            flags.push_back(hit[r.image][r.pred]);
        }
        return interpolated_ap(flags, n_gt);
    };

    EvalResult result;
    double sum = 0.0;
    for (const double t : thresholds) {
        const double ap = ap_at(t);
        result.per_threshold.emplace_back(t, ap);
        sum += ap;
    }
    result.ap = sum / static_cast<double>(thresholds.size());
    result.ap50 = ap_at(0.5);
    result.ap75 = ap_at(0.75);
    return result;
}

EvalResult average_precision(std::span<const EntityMap> preds, std::span<const EntityMap> gts) {
    const auto t = default_thresholds();
    return average_precision(preds, gts, t);
}

} // namespace entity_refine
