#include "entity_refine/backend.hpp"

#include "entity_refine/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace entity_refine {

int PointPrompt::pixel_row() const { return static_cast<int>(std::floor(row)); }
int PointPrompt::pixel_col() const { return static_cast<int>(std::floor(col)); }

void FeatureGrid::validate() const {
    if (channels < 1 || height < 1 || width < 1) {
        throw ValidationError("feature grid dimensions must be positive");
    }
    if (data.size() != static_cast<std::size_t>(channels) * height * width) {
        throw ValidationError("feature grid payload has " + std::to_string(data.size()) + " values, expected " +
                              std::to_string(static_cast<std::size_t>(channels) * height * width));
    }
    if (!std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); })) {
        throw ValidationError("feature grid contains non-finite values");
    }
}

std::vector<PointPrompt> grid_prompts(int height, int width, int points_per_side) {
    if (points_per_side < 1) {
        throw ValidationError("points_per_side must be >= 1");
    }
    std::vector<PointPrompt> prompts;
    prompts.reserve(static_cast<std::size_t>(points_per_side) * points_per_side);
    const double n = points_per_side;
    for (int i = 0; i < points_per_side; ++i) {
        for (int j = 0; j < points_per_side; ++j) {
            prompts.push_back({(i + 0.5) * height / n, (j + 0.5) * width / n, i * points_per_side + j});
        }
    }
    return prompts;
}

MaskTriple order_levels(MaskTriple triple) {
    std::array<ScoredMask, 3> masks{std::move(triple.object), std::move(triple.part), std::move(triple.subpart)};
    std::stable_sort(masks.begin(), masks.end(),
                     [](const ScoredMask& a, const ScoredMask& b) { return a.mask.area() > b.mask.area(); });
    constexpr std::array<Level, 3> levels{Level::object, Level::part, Level::subpart};
    for (std::size_t i = 0; i < 3; ++i) {
        masks[i].level = levels[i];
        masks[i].prompt_id = triple.prompt_id;
    }
    triple.object = std::move(masks[0]);
    triple.part = std::move(masks[1]);
    triple.subpart = std::move(masks[2]);
    return triple;
}

std::vector<std::optional<MaskTriple>> segment_allow_missing(SegmenterProvider& provider,
                                                             std::span<const PointPrompt> prompts) {
    const int h = provider.height();
    const int w = provider.width();
    for (const auto& p : prompts) {
        if (!(p.row >= 0.0 && p.row < h && p.col >= 0.0 && p.col < w)) {
            throw BackendError("prompt (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                                   ") outside the image",
                               p.id);
        }
    }
    auto results = provider.segment(prompts);
    if (results.size() != prompts.size()) {
        throw BackendError("provider returned " + std::to_string(results.size()) + " results for " +
                           std::to_string(prompts.size()) + " prompts");
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!results[i]) {
            continue;
        }
        MaskTriple& triple = *results[i];
        triple.prompt_id = prompts[i].id;
        for (const ScoredMask* m : {&triple.object, &triple.part, &triple.subpart}) {
            if (m->mask.height() != h || m->mask.width() != w) {
                throw BackendError("provider mask size does not match the image", prompts[i].id);
            }
            try {
                validate(*m);
            } catch (const ValidationError& e) {
                throw BackendError(e.what(), prompts[i].id);
            }
        }
        triple = order_levels(std::move(triple));
    }
    return results;
}

std::vector<MaskTriple> segment(SegmenterProvider& provider, std::span<const PointPrompt> prompts) {
    auto results = segment_allow_missing(provider, prompts);
    std::vector<MaskTriple> triples;
    triples.reserve(results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!results[i]) {
            throw BackendError("provider has no masks for this prompt", prompts[i].id);
        }
        triples.push_back(std::move(*results[i]));
    }
    return triples;
}

} // namespace entity_refine
