#include "entity_refine/mmg.hpp"

#include "entity_refine/error.hpp"
#include "entity_refine/parallel.hpp"

#include <algorithm>

namespace entity_refine {

LevelMaps stratify(std::span<const MaskTriple> triples, int grid_n) {
    if (triples.empty()) {
        throw ValidationError("stratify needs at least one triple");
    }
    LevelMaps maps;
    maps.grid_n = grid_n;
    for (const MaskTriple& t : triples) {
        if (t.object.mask.area() < t.part.mask.area() || t.part.mask.area() < t.subpart.mask.area()) {
            throw ValidationError("triple for prompt " + std::to_string(t.prompt_id) +
                                  " violates object >= part >= subpart area ordering");
        }
        maps.object.push_back(t.object);
        maps.part.push_back(t.part);
        maps.subpart.push_back(t.subpart);
        const ScoredMask* best = &t.object;
        if (t.part.score > best->score) {
            best = &t.part;
        }
        if (t.subpart.score > best->score) {
            best = &t.subpart;
        }
        maps.best.push_back(*best);
    }
    return maps;
}

LevelMaps drop_low_confidence(LevelMaps levels, double min_confidence) {
    for (auto* list : {&levels.object, &levels.part, &levels.subpart, &levels.best}) {
        for (auto& m : *list) {
            if (m.score < min_confidence && !m.mask.is_empty()) {
                m.mask = BinaryMask::empty(m.mask.height(), m.mask.width());
                m.score = 0.0;
            }
        }
    }
    return levels;
}

std::vector<ScoredMask> nonempty(std::span<const ScoredMask> masks) {
    std::vector<ScoredMask> out;
    std::copy_if(masks.begin(), masks.end(), std::back_inserter(out),
                 [](const ScoredMask& m) { return !m.mask.is_empty(); });
    return out;
}

std::vector<ScoredMask> filter_object_level(std::span<const ScoredMask> object, std::span<const ScoredMask> best,
                                            double theta_o, double gamma_o) {
    const auto survivors = nms(nonempty(object), theta_o);
    std::vector<std::uint8_t> keep(survivors.size(), 0);
    parallel_for(survivors.size(), [&](std::size_t i) {
        double max_iou = 0.0;
        for (const auto& b : best) {
            max_iou = std::max(max_iou, iou(survivors[i].mask, b.mask));
            if (max_iou >= gamma_o) {
                break;
            }
        }
        keep[i] = max_iou >= gamma_o ? 1 : 0;
    });
    std::vector<ScoredMask> out;
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        if (keep[i]) {
            out.push_back(survivors[i]);
        }
    }
    return out;
}

std::vector<ScoredMask> adaptive_nms(std::span<const ScoredMask> masks, const DensityMap& density, double n_t) {
    const auto candidates = nonempty(masks);
    std::vector<std::size_t> kept;
    std::vector<double> kept_threshold;
    for (const std::size_t c : score_order(candidates)) {
        bool suppressed = false;
        for (std::size_t i = 0; i < kept.size() && !suppressed; ++i) {
            suppressed = iou(candidates[c].mask, candidates[kept[i]].mask) > kept_threshold[i];
        }
        if (!suppressed) {
            kept.push_back(c);
            kept_threshold.push_back(std::max(n_t, mask_density(density, candidates[c].mask)));
        }
    }
    std::vector<ScoredMask> out;
    out.reserve(kept.size());
    for (const std::size_t k : kept) {
        out.push_back(candidates[k]);
    }
    return out;
}

std::vector<ScoredMask> pooled_level_nms(const LevelMaps& levels, double theta_o) {
    std::vector<ScoredMask> pooled;
    for (const auto* list : {&levels.object, &levels.part, &levels.subpart}) {
        for (const auto& m : *list) {
            if (!m.mask.is_empty()) {
                pooled.push_back(m);
            }
        }
    }
    return nms(pooled, theta_o);
}

MmgOutput run_mmg(SegmenterProvider& provider, const Image& image, const MmgParams& params) {
    if (image.height != provider.height() || image.width != provider.width()) {
        throw DimensionError("image and provider sizes differ");
    }
    MmgOutput out;
    const auto coarse_prompts = grid_prompts(image.height, image.width, params.grid_coarse);
    out.coarse = drop_low_confidence(stratify(segment(provider, coarse_prompts), params.grid_coarse),
                                     params.min_confidence);
    out.object_refined = filter_object_level(out.coarse.object, out.coarse.best, params.theta_o, params.gamma_o);

    out.superpixels = felzenszwalb(image, params.superpixels);
    out.density = density_map(out.superpixels);
    out.part_thinned = adaptive_nms(out.coarse.part, out.density, params.n_t);
    out.subpart_thinned = adaptive_nms(out.coarse.subpart, out.density, params.n_t);

    out.prompts_fine = grid_prompts(image.height, image.width, params.grid_fine);
    out.fine = drop_low_confidence(stratify(segment(provider, out.prompts_fine), params.grid_fine),
                                   params.min_confidence);
    return out;
}

} // namespace entity_refine
