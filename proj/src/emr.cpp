#include "entity_refine/emr.hpp"

#include "entity_refine/error.hpp"
#include "entity_refine/image.hpp"
#include "entity_refine/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace entity_refine {

MaskGallery build_gallery(std::span<const ScoredMask> object, std::span<const ScoredMask> best) {
    if (object.size() != best.size()) {
        throw ValidationError("gallery lists differ in length: " + std::to_string(object.size()) + " vs " +
                              std::to_string(best.size()));
    }
    MaskGallery gallery;
    for (std::size_t i = 0; i < object.size(); ++i) {
        if (object[i].mask.is_empty() || best[i].mask.is_empty()) {
            continue;
        }
        const int id = object[i].prompt_id.value_or(static_cast<int>(i));
        gallery.by_prompt.emplace(id, GalleryEntry{object[i], best[i]});
        gallery.all_masks.push_back(object[i]);
        if (!(best[i].mask == object[i].mask)) {
            gallery.all_masks.push_back(best[i]);
        }
    }
    return gallery;
}

const ScoredMask& guidance_for(const GalleryEntry& entry, double tau) {
    return entry.best.score - entry.object.score < tau ? entry.object : entry.best;
}

std::optional<ScoredMask> modal_guidance(const BinaryMask& region, const MaskGallery& gallery,
                                         std::span<const PointPrompt> prompts, double tau) {
    if (region.is_empty() || gallery.empty()) {
        return std::nullopt;
    }
    const Box box = *region.bbox();
    struct Vote {
        const ScoredMask* mask;
        int count;
        int first_id;
    };
    std::vector<Vote> votes;
    std::optional<Bitmap> bits;
    for (const auto& p : prompts) {
        const int r = p.pixel_row();
        const int c = p.pixel_col();
        if (r < box.row_min || r > box.row_max || c < box.col_min || c > box.col_max) {
            continue;
        }
        if (!bits) {
            bits = decode(region);
        }
        if (!bits->at(r, c)) {
            continue;
        }
        const auto it = gallery.by_prompt.find(p.id);
        if (it == gallery.by_prompt.end()) {
            continue;
        }
        const ScoredMask& g = guidance_for(it->second, tau);
        auto same = std::find_if(votes.begin(), votes.end(), [&](const Vote& v) { return v.mask->mask == g.mask; });
        if (same == votes.end()) {
            votes.push_back({&g, 1, p.id});
        } else {
            ++same->count;
            same->mask = g.score > same->mask->score ? &g : same->mask;
        }
    }
    if (votes.empty()) {
        return std::nullopt;
    }
    const auto top = std::min_element(votes.begin(), votes.end(), [](const Vote& a, const Vote& b) {
        return std::make_tuple(-a.count, -a.mask->score, a.first_id) <
               std::make_tuple(-b.count, -b.mask->score, b.first_id);
    });
    return *top->mask;
}

std::vector<ScoredMask> split_overlaps(std::span<const ScoredMask> masks, const MaskGallery& gallery,
                                       std::span<const PointPrompt> prompts, double delta, double tau) {
    if (delta < 0.0 || delta > 1.0 || tau < 0.0 || tau > 1.0) {
        throw ValidationError("delta and tau must lie in [0,1]");
    }
    std::vector<ScoredMask> current;
    for (const std::size_t i : score_order(masks)) {
        if (!masks[i].mask.is_empty()) {
            current.push_back(masks[i]);
        }
    }
    // One sweep already leaves every pair disjoint (cuts only shrink masks), but
    // repeat until a sweep changes nothing so the postcondition is checked, not assumed.
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t p = 0; p < current.size(); ++p) {
            for (std::size_t q = p + 1; q < current.size(); ++q) {
                BinaryMask& mp = current[p].mask;
                BinaryMask& mq = current[q].mask;
                if (mp.is_empty() || mq.is_empty()) {
                    continue;
                }
                const BinaryMask overlap = intersect(mp, mq);
                if (overlap.is_empty()) {
                    continue;
                }
                changed = true;
                const auto larger_area = std::max(mp.area(), mq.area());
                // Equal areas: the lower-scored mask counts as the larger one.
                BinaryMask& larger = mp.area() > mq.area() ? mp : mq;
                const double ratio = static_cast<double>(overlap.area()) / static_cast<double>(larger_area);
                std::optional<ScoredMask> guide;
                if (ratio >= delta) {
                    guide = modal_guidance(overlap, gallery, prompts, tau);
                }
                if (!guide) {
                    larger = subtract(larger, overlap);
                    continue;
                }
                // Ties go to the higher-scored mask p.
                if (iou(mp, guide->mask) >= iou(mq, guide->mask)) {
                    mq = subtract(mq, overlap);
                } else {
                    mp = subtract(mp, overlap);
                }
            }
        }
    }
    std::vector<ScoredMask> out;
    for (auto& m : current) {
        if (!m.mask.is_empty()) {
            out.push_back(std::move(m));
        }
    }
    return out;
}

Eigen::MatrixXd cosine_similarity(const Eigen::MatrixXd& vectors) {
    const Eigen::Index n = vectors.rows();
    Eigen::MatrixXd unit = vectors;
    std::vector<bool> zero(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = unit.row(i).norm();
        if (norm == 0.0) {
            zero[static_cast<std::size_t>(i)] = true;
        } else {
            unit.row(i) /= norm;
        }
    }
    Eigen::MatrixXd sim = unit * unit.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (zero[static_cast<std::size_t>(i)] || zero[static_cast<std::size_t>(j)]) {
                sim(i, j) = 0.0;
            } else {
                sim(i, j) = std::clamp(sim(i, j), -1.0, 1.0);
            }
        }
        sim(i, i) = 1.0;
    }
    // Symmetrise exactly; the product can differ in the last ulp.
    return (sim + sim.transpose()) / 2.0;
}

Eigen::MatrixXd centroid_similarity(const FeatureGrid& features, const SuperpixelMap& superpixels) {
    features.validate();
    const int k = superpixels.count();
    Eigen::MatrixXd vectors(k, features.channels);
    const double gh = features.height;
    const double gw = features.width;
    parallel_for(static_cast<std::size_t>(k), [&](std::size_t i) {
        const Point2 c = superpixels.regions()[i].centroid;
        // Pixel centres map onto feature-cell centres.
        const double y = std::clamp((c.row + 0.5) * gh / superpixels.height() - 0.5, 0.0, gh - 1.0);
        const double x = std::clamp((c.col + 0.5) * gw / superpixels.width() - 0.5, 0.0, gw - 1.0);
        const int y0 = static_cast<int>(std::floor(y));
        const int x0 = static_cast<int>(std::floor(x));
        const int y1 = std::min(y0 + 1, features.height - 1);
        const int x1 = std::min(x0 + 1, features.width - 1);
        const double fy = y - y0;
        const double fx = x - x0;
        for (int ch = 0; ch < features.channels; ++ch) {
            const double top = (1.0 - fx) * features.at(ch, y0, x0) + fx * features.at(ch, y0, x1);
            const double bottom = (1.0 - fx) * features.at(ch, y1, x0) + fx * features.at(ch, y1, x1);
            vectors(static_cast<Eigen::Index>(i), ch) = (1.0 - fy) * top + fy * bottom;
        }
    });
    return cosine_similarity(vectors);
}

Eigen::MatrixXd centroid_similarity_fallback(const SuperpixelMap& superpixels) {
    const int k = superpixels.count();
    Eigen::MatrixXd vectors(k, 5);
    for (int i = 0; i < k; ++i) {
        const auto& region = superpixels.regions()[static_cast<std::size_t>(i)];
        const auto lab = srgb_to_lab(region.mean_color);
        vectors(i, 0) = lab[0] / 100.0;
        vectors(i, 1) = lab[1] / 128.0;
        vectors(i, 2) = lab[2] / 128.0;
        vectors(i, 3) = region.centroid.row / superpixels.height();
        vectors(i, 4) = region.centroid.col / superpixels.width();
    }
    return cosine_similarity(vectors);
}

MaskAffinity::MaskAffinity(Eigen::MatrixXd counts, std::vector<int> centroids, int k, int height, int width)
    : counts_(std::move(counts)), centroids_(std::move(centroids)), k_(k), height_(height), width_(width) {
    const auto n = static_cast<Eigen::Index>(centroids_.size());
    if (counts_.rows() != n || counts_.cols() != n) {
        throw ValidationError("affinity count matrix does not match the mask count");
    }
    if (k_ < 1) {
        throw ValidationError("top_k must be at least 1");
    }
}

Eigen::MatrixXd MaskAffinity::similarity() const {
    Eigen::MatrixXd s = counts_;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const int n = centroids_[static_cast<std::size_t>(i)];
        if (n == 0) {
            s.row(i).setZero();
        } else {
            s.row(i) /= static_cast<double>(n) * k_;
        }
    }
    return s;
}

void MaskAffinity::merge(std::size_t a, std::size_t b) {
    const auto n = static_cast<Eigen::Index>(centroids_.size());
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    if (a == b || ia >= n || ib >= n) {
        throw ValidationError("invalid affinity merge");
    }
    counts_.row(ia) += counts_.row(ib);
    counts_.col(ia) += counts_.col(ib);
    centroids_[a] += centroids_[b];
    Eigen::MatrixXd reduced(n - 1, n - 1);
    for (Eigen::Index i = 0, ri = 0; i < n; ++i) {
        if (i == ib) {
            continue;
        }
        for (Eigen::Index j = 0, rj = 0; j < n; ++j) {
            if (j == ib) {
                continue;
            }
            reduced(ri, rj++) = counts_(i, j);
        }
        ++ri;
    }
    counts_ = std::move(reduced);
    centroids_.erase(centroids_.begin() + static_cast<std::ptrdiff_t>(b));
}

MaskAffinity mask_affinity(std::span<const ScoredMask> masks, const SuperpixelMap& superpixels,
                           const Eigen::MatrixXd& centroid_sim, int k) {
    const int h = superpixels.height();
    const int w = superpixels.width();
    const int count = superpixels.count();
    if (centroid_sim.rows() != count || centroid_sim.cols() != count) {
        throw DimensionError("centroid similarity does not match the superpixel count");
    }
    std::vector<std::int32_t> owner_at(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), -1);
    for (std::size_t m = masks.size(); m-- > 0;) {
        const BinaryMask& mask = masks[m].mask;
        if (mask.height() != h || mask.width() != w) {
            throw DimensionError("mask and superpixel map sizes differ");
        }
        // Walking backwards lets the earliest mask win a shared pixel.
        std::uint64_t pos = 0;
        bool fg = false;
        for (const auto run : mask.runs()) {
            if (fg) {
                std::fill_n(owner_at.begin() + static_cast<std::ptrdiff_t>(pos), run, static_cast<std::int32_t>(m));
            }
            pos += run;
            fg = !fg;
        }
    }
    std::vector<std::int32_t> owner(static_cast<std::size_t>(count), -1);
    for (int c = 0; c < count; ++c) {
        const Point2 p = superpixels.regions()[static_cast<std::size_t>(c)].centroid;
        const int r = std::clamp(static_cast<int>(std::lround(p.row)), 0, h - 1);
        const int col = std::clamp(static_cast<int>(std::lround(p.col)), 0, w - 1);
        owner[static_cast<std::size_t>(c)] = owner_at[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) +
                                                      static_cast<std::size_t>(col)];
    }
    const auto n = static_cast<Eigen::Index>(masks.size());
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);
    std::vector<int> centroids(masks.size(), 0);
    std::vector<int> order;
    for (int c = 0; c < count; ++c) {
        const std::int32_t i = owner[static_cast<std::size_t>(c)];
        if (i < 0) {
            continue;
        }
        ++centroids[static_cast<std::size_t>(i)];
        order.resize(static_cast<std::size_t>(count));
        std::iota(order.begin(), order.end(), 0);
        order.erase(order.begin() + c);
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                          [&](int a, int b) {
                              const double sa = centroid_sim(c, a);
                              const double sb = centroid_sim(c, b);
                              return sa != sb ? sa > sb : a < b;
                          });
        for (std::size_t t = 0; t < take; ++t) {
            const std::int32_t j = owner[static_cast<std::size_t>(order[t])];
            if (j >= 0) {
                counts(i, j) += 1.0;
            }
        }
    }
    return MaskAffinity(std::move(counts), std::move(centroids), k, h, w);
}

Eigen::MatrixXd adjacency_similarity(std::span<const ScoredMask> masks, const SuperpixelMap& superpixels,
                                     const Eigen::MatrixXd& centroid_sim, int k) {
    return mask_affinity(masks, superpixels, centroid_sim, k).similarity();
}

std::size_t gallery_votes(const MaskGallery& gallery, const BinaryMask& m, double gamma) {
    return static_cast<std::size_t>(std::count_if(gallery.all_masks.begin(), gallery.all_masks.end(),
                                                  [&](const ScoredMask& g) { return iou(g.mask, m) >= gamma; }));
}

bool gallery_supports(const MaskGallery& gallery, const BinaryMask& a, const BinaryMask& b, double gamma) {
    const double need_a = gamma * static_cast<double>(a.area());
    const double need_b = gamma * static_cast<double>(b.area());
    const auto both = static_cast<std::size_t>(
        std::count_if(gallery.all_masks.begin(), gallery.all_masks.end(), [&](const ScoredMask& g) {
            return static_cast<double>(intersection_area(g.mask, a)) >= need_a &&
                   static_cast<double>(intersection_area(g.mask, b)) >= need_b;
        }));
    return both > 0 && both >= gallery_votes(gallery, a, gamma) && both >= gallery_votes(gallery, b, gamma);
}

EntityMap merge_similar(std::vector<ScoredMask> masks, MaskAffinity affinity, const MaskGallery& gallery,
                        double merge_threshold, double containment_gamma) {
    if (merge_threshold < 0.0 || merge_threshold > 1.0 || containment_gamma < 0.0 || containment_gamma > 1.0) {
        throw ValidationError("merge_threshold and containment_gamma must lie in [0,1]");
    }
    if (affinity.size() != masks.size()) {
        throw ValidationError("affinity does not match the mask list");
    }
    for (;;) {
        const Eigen::MatrixXd s = affinity.similarity();
        struct Pair {
            double value;
            std::size_t a;
            std::size_t b;
        };
        std::vector<Pair> pairs;
        for (std::size_t a = 0; a < masks.size(); ++a) {
            for (std::size_t b = a + 1; b < masks.size(); ++b) {
                const auto ia = static_cast<Eigen::Index>(a);
                const auto ib = static_cast<Eigen::Index>(b);
                const double v = std::max(s(ia, ib), s(ib, ia));
                if (v >= merge_threshold && v > 0.0) {
                    pairs.push_back({v, a, b});
                }
            }
        }
        std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.value > y.value; });
        bool merged = false;
        for (const Pair& pair : pairs) {
            if (!gallery_supports(gallery, masks[pair.a].mask, masks[pair.b].mask, containment_gamma)) {
                continue;
            }
            ScoredMask& a = masks[pair.a];
            const ScoredMask& b = masks[pair.b];
            a.mask = unite(a.mask, b.mask);
            if (b.score > a.score) {
                a.score = b.score;
                a.level = b.level;
                a.prompt_id = b.prompt_id;
            }
            masks.erase(masks.begin() + static_cast<std::ptrdiff_t>(pair.b));
            affinity.merge(pair.a, pair.b);
            merged = true;
            break;
        }
        if (!merged) {
            break;
        }
    }
    return EntityMap{affinity.height(), affinity.width(), std::move(masks)};
}

EntityMap run_emr(std::span<const ScoredMask> masks, const MmgOutput& mmg, const std::optional<FeatureGrid>& features,
                  const EmrParams& params) {
    const MaskGallery gallery = build_gallery(mmg.fine.object, mmg.fine.best);
    auto split = split_overlaps(masks, gallery, mmg.prompts_fine, params.delta, params.tau);
    const Eigen::MatrixXd sc = features ? centroid_similarity(*features, mmg.superpixels)
                                        : centroid_similarity_fallback(mmg.superpixels);
    MaskAffinity affinity = mask_affinity(split, mmg.superpixels, sc, params.top_k);
    return merge_similar(std::move(split), std::move(affinity), gallery, params.merge_threshold,
                         params.containment_gamma);
}

} // namespace entity_refine
