#include "entity_refine/usr.hpp"

#include "entity_refine/error.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <tuple>

namespace entity_refine {

namespace {

int find_root(std::vector<int>& parent, int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
        parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        x = parent[static_cast<std::size_t>(x)];
    }
    return x;
}

PointPrompt prompt_at(const Point2& c, int id) {
    // Pixel (r, c) spans [r, r+1); its centre is r + 0.5.
    return PointPrompt{c.row + 0.5, c.col + 0.5, id};
}

// Centroid of the mask, or its pixel nearest to the centroid (first in row-major
// order on ties) when the centroid pixel itself lies outside, e.g. for a ring of
// background around several entities.
Point2 anchor(const BinaryMask& mask) {
    const Point2 c = centroid(mask);
    const int row = static_cast<int>(std::floor(c.row + 0.5));
    const int col = static_cast<int>(std::floor(c.col + 0.5));
    if (mask.contains(row, col)) {
        return c;
    }
    const Bitmap bits = decode(mask);
    Point2 best = c;
    double best_d = std::numeric_limits<double>::infinity();
    for (int r = 0; r < bits.height; ++r) {
        for (int q = 0; q < bits.width; ++q) {
            if (!bits.at(r, q)) {
                continue;
            }
            const double d = (r - c.row) * (r - c.row) + (q - c.col) * (q - c.col);
            if (d < best_d) {
                best_d = d;
                best = Point2{static_cast<double>(r), static_cast<double>(q)};
            }
        }
    }
    return best;
}

ScoredMask candidate_from(MaskTriple triple, double min_confidence) {
    for (ScoredMask* m : {&triple.object, &triple.part, &triple.subpart}) {
        if (m->score < min_confidence) {
            m->mask = BinaryMask::empty(m->mask.height(), m->mask.width());
        }
    }
    if (!triple.object.mask.is_empty()) {
        return triple.object;
    }
    const ScoredMask* best = &triple.object;
    for (const ScoredMask* m : {&triple.part, &triple.subpart}) {
        if (m->score > best->score) {
            best = m;
        }
    }
    return *best;
}

} // namespace

std::vector<UncoveredRegion> uncovered_regions(const EntityMap& map, const SuperpixelMap& superpixels,
                                               double coverage_fraction, int min_region_px) {
    const int h = superpixels.height();
    const int w = superpixels.width();
    if (map.height != h || map.width != w) {
        throw DimensionError("entity map and superpixel map sizes differ");
    }
    const Bitmap covered = decode(map.coverage());
    const auto k = static_cast<std::size_t>(superpixels.count());
    std::vector<std::uint64_t> hit(k, 0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (covered.at(r, c)) {
                ++hit[static_cast<std::size_t>(superpixels.label_at(r, c))];
            }
        }
    }
    std::vector<bool> open(k, false);
    for (std::size_t i = 0; i < k; ++i) {
        const double frac = static_cast<double>(hit[i]) / static_cast<double>(superpixels.regions()[i].area);
        open[i] = frac < coverage_fraction;
    }
    std::vector<int> parent(k);
    std::iota(parent.begin(), parent.end(), 0);
    auto join = [&](std::int32_t a, std::int32_t b) {
        if (a == b || !open[static_cast<std::size_t>(a)] || !open[static_cast<std::size_t>(b)]) {
            return;
        }
        const int ra = find_root(parent, a);
        const int rb = find_root(parent, b);
        if (ra != rb) {
            parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
        }
    };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const auto l = superpixels.label_at(r, c);
            if (c + 1 < w) {
                join(l, superpixels.label_at(r, c + 1));
            }
            if (r + 1 < h) {
                join(l, superpixels.label_at(r + 1, c));
            }
        }
    }
    // Group pixels by region root, numbering regions in first-pixel order.
    std::vector<int> slot(k, -1);
    std::vector<std::vector<std::uint64_t>> pixels;
    std::vector<std::vector<int>> sources;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const auto l = superpixels.label_at(r, c);
            if (!open[static_cast<std::size_t>(l)]) {
                continue;
            }
            const auto root = static_cast<std::size_t>(find_root(parent, l));
            if (slot[root] < 0) {
                slot[root] = static_cast<int>(pixels.size());
                pixels.emplace_back();
                sources.emplace_back();
            }
            auto& src = sources[static_cast<std::size_t>(slot[root])];
            if (std::find(src.begin(), src.end(), l) == src.end()) {
                src.push_back(l);
            }
            pixels[static_cast<std::size_t>(slot[root])].push_back(static_cast<std::uint64_t>(r) *
                                                                       static_cast<std::uint64_t>(w) +
                                                                   static_cast<std::uint64_t>(c));
        }
    }
    std::vector<UncoveredRegion> out;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        if (pixels[i].size() < static_cast<std::size_t>(std::max(min_region_px, 0))) {
            continue;
        }
        std::sort(sources[i].begin(), sources[i].end());
        out.push_back({BinaryMask::from_sorted_indices(h, w, pixels[i]), std::move(sources[i])});
    }
    return out;
}

std::vector<PointPrompt> additional_prompts(std::span<const UncoveredRegion> regions, std::span<const ScoredMask> part,
                                            std::span<const ScoredMask> subpart, double containment_frac,
                                            int first_id) {
    std::vector<PointPrompt> out;
    for (const auto& region : regions) {
        if (region.mask.is_empty()) {
            std::clog << "warning: skipping an empty uncovered region\n";
            continue;
        }
        const auto area = static_cast<double>(region.mask.area());
        const ScoredMask* holder = nullptr;
        double holder_frac = 0.0;
        for (const auto list : {part, subpart}) {
            for (const auto& m : list) {
                if (m.mask.is_empty()) {
                    continue;
                }
                const double frac = static_cast<double>(intersection_area(region.mask, m.mask)) / area;
                if (frac < containment_frac) {
                    continue;
                }
                const bool better =
                    holder == nullptr ||
                    std::make_tuple(frac, m.score, -static_cast<double>(m.mask.area())) >
                        std::make_tuple(holder_frac, holder->score, -static_cast<double>(holder->mask.area()));
                if (better) {
                    holder = &m;
                    holder_frac = frac;
                }
            }
        }
        const PointPrompt p =
            prompt_at(anchor(holder != nullptr ? holder->mask : region.mask), first_id + static_cast<int>(out.size()));
        const bool duplicate = std::any_of(out.begin(), out.end(), [&](const PointPrompt& q) {
            return std::hypot(q.row - p.row, q.col - p.col) <= 1.0;
        });
        if (!duplicate) {
            out.push_back(p);
        }
    }
    return out;
}

EntityMap fuse(const EntityMap& map, std::span<const ScoredMask> additional, double rho) {
    if (rho < 0.0 || rho > 1.0) {
        throw ValidationError("rho must lie in [0,1]");
    }
    EntityMap out = map;
    BinaryMask covered = map.coverage();
    for (const auto& add : additional) {
        if (add.mask.height() != map.height || add.mask.width() != map.width) {
            throw DimensionError("additional mask does not match the entity map");
        }
        if (add.mask.is_empty()) {
            continue;
        }
        std::size_t best = out.masks.size();
        double best_iou = 0.0;
        for (std::size_t i = 0; i < out.masks.size(); ++i) {
            const double v = iou(out.masks[i].mask, add.mask);
            if (v > best_iou) {
                best_iou = v;
                best = i;
            }
        }
        const BinaryMask fresh = subtract(add.mask, covered);
        if (fresh.is_empty()) {
            continue;
        }
        if (best < out.masks.size() && best_iou > rho) {
            out.masks[best].mask = unite(out.masks[best].mask, fresh);
        } else {
            out.masks.push_back({fresh, add.score, add.level, add.prompt_id});
        }
        covered = unite(covered, fresh);
    }
    return out;
}

EntityMap greedy_fill(const EntityMap& map, std::span<const ScoredMask> candidates, int min_gain_px, double rho,
                      std::size_t* accepted) {
    EntityMap out = map;
    std::size_t taken = 0;
    BinaryMask covered = map.coverage();
    std::vector<bool> used(candidates.size(), false);
    for (;;) {
        std::size_t pick = candidates.size();
        std::uint64_t pick_gain = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (used[i]) {
                continue;
            }
            const std::uint64_t gain = candidates[i].mask.area() - intersection_area(candidates[i].mask, covered);
            if (pick == candidates.size()) {
                pick = i;
                pick_gain = gain;
                continue;
            }
            const auto& a = candidates[i];
            const auto& b = candidates[pick];
            const int ida = a.prompt_id.value_or(std::numeric_limits<int>::max());
            const int idb = b.prompt_id.value_or(std::numeric_limits<int>::max());
            if (std::make_tuple(gain, a.score, -static_cast<long long>(ida)) >
                std::make_tuple(pick_gain, b.score, -static_cast<long long>(idb))) {
                pick = i;
                pick_gain = gain;
            }
        }
        if (pick == candidates.size() || min_gain_px < 0 || pick_gain < static_cast<std::uint64_t>(min_gain_px) ||
            pick_gain == 0) {
            break;
        }
        used[pick] = true;
        ++taken;
        out = fuse(out, candidates.subspan(pick, 1), rho);
        covered = out.coverage();
    }
    if (accepted != nullptr) {
        *accepted = taken;
    }
    return out;
}

EntityMap run_usr(SegmenterProvider& provider, const SuperpixelMap& superpixels, std::span<const ScoredMask> part,
                  std::span<const ScoredMask> subpart, const EntityMap& map, const UsrParams& params,
                  UsrReport* report) {
    UsrReport local;
    UsrReport& r = report != nullptr ? *report : local;
    const auto regions = uncovered_regions(map, superpixels, params.coverage_fraction, params.min_region_px);
    r.regions = regions.size();
    const auto prompts = additional_prompts(regions, part, subpart, params.containment_frac, 0);
    r.prompts = prompts.size();
    if (prompts.empty()) {
        return map;
    }
    std::vector<ScoredMask> candidates;
    const auto answers = segment_allow_missing(provider, prompts);
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (!answers[i]) {
            ++r.misses;
            std::clog << "warning: provider has no answer near additional prompt (" << prompts[i].row << ", "
                      << prompts[i].col << "), skipped\n";
            continue;
        }
        auto candidate = candidate_from(*answers[i], params.min_confidence);
        if (!candidate.mask.is_empty()) {
            candidates.push_back(std::move(candidate));
        }
    }
    return greedy_fill(map, candidates, params.min_gain_px, params.rho, &r.accepted);
}

} // namespace entity_refine
