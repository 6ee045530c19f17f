#include "entity_refine/emr.hpp"
#include "entity_refine/error.hpp"
#include "entity_refine/mmg.hpp"
#include "entity_refine/pipeline.hpp"
#include "entity_refine/synthetic.hpp"
#include "entity_refine/usr.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace entity_refine;
using namespace test_support;

namespace {

ScoredMask scored(BinaryMask m, double score, std::optional<int> id = std::nullopt, Level level = Level::object) {
    return ScoredMask{std::move(m), score, level, id};
}

std::vector<ScoredMask> random_masks(std::mt19937_64& rng, int h, int w, int n) {
    std::vector<ScoredMask> out;
    for (int i = 0; i < n; ++i) {
        // Coarse score grid so that ties actually happen.
        out.push_back(scored(encode(random_bitmap(rng, h, w)), uniform_int(rng, 0, 10) / 10.0,
                             uniform_int(rng, 0, 3) == 0 ? std::nullopt : std::optional<int>(uniform_int(rng, 0, 20))));
    }
    return out;
}

bool same_masks(std::span<const ScoredMask> a, std::span<const ScoredMask> b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].mask != b[i].mask || a[i].score != b[i].score || a[i].prompt_id != b[i].prompt_id) {
            return false;
        }
    }
    return true;
}

bool contains_mask(std::span<const ScoredMask> list, const ScoredMask& m) {
    return std::any_of(list.begin(), list.end(),
                       [&](const ScoredMask& x) { return x.mask == m.mask && x.score == m.score; });
}

// Same masks and scores, in any order.
bool same_mask_set(std::span<const ScoredMask> a, std::span<const ScoredMask> b) {
    return a.size() == b.size() &&
           std::all_of(a.begin(), a.end(), [&](const ScoredMask& m) { return contains_mask(b, m); });
}

bool pairwise_disjoint(std::span<const ScoredMask> masks) {
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (std::size_t j = i + 1; j < masks.size(); ++j) {
            if (intersection_area(masks[i].mask, masks[j].mask) != 0) {
                return false;
            }
        }
    }
    return true;
}

DensityMap uniform_density(int h, int w, double v) {
    return DensityMap(h, w, std::vector<double>(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), v));
}

// Row band [c0, c1) of a 1 x w strip, repeated on two rows.
BinaryMask band(int w, int c0, int c1) { return box_mask(2, w, 0, c0, 1, c1 - 1); }

MaskTriple triple_with(double o, double p, double s) {
    MaskTriple t;
    t.object = scored(box_mask(8, 8, 0, 0, 3, 3), o, 0, Level::object);
    t.part = scored(box_mask(8, 8, 0, 0, 1, 3), p, 0, Level::part);
    t.subpart = scored(box_mask(8, 8, 0, 0, 1, 1), s, 0, Level::subpart);
    return t;
}

// Labels by column band: [0, 4) -> 0, [4, 8) -> 1, [8, 12) -> 2 on a 4 x 12 raster.
SuperpixelMap three_bands() {
    std::vector<std::int32_t> labels(48);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 12; ++c) {
            labels[static_cast<std::size_t>(r * 12 + c)] = c / 4;
        }
    }
    return SuperpixelMap(4, 12, labels);
}

} // namespace

TEST_CASE("stratify picks the best level with coarse ties") {
    const MaskTriple triples[] = {triple_with(0.9, 0.5, 0.4), triple_with(0.5, 0.9, 0.4), triple_with(0.7, 0.7, 0.7),
                                  triple_with(0.2, 0.3, 0.9)};
    const LevelMaps maps = stratify(triples, 2);
    CHECK(maps.grid_n == 2);
    REQUIRE(maps.best.size() == 4);
    CHECK(maps.best[0].level == Level::object);
    CHECK(maps.best[1].level == Level::part);
    CHECK(maps.best[2].level == Level::object);
    CHECK(maps.best[3].level == Level::subpart);
    CHECK(maps.part[1].score == 0.9);

    MaskTriple broken = triple_with(0.5, 0.5, 0.5);
    std::swap(broken.object.mask, broken.subpart.mask);
    CHECK_THROWS_AS(stratify(std::span<const MaskTriple>(&broken, 1), 1), ValidationError);
    CHECK_THROWS_AS(stratify({}, 1), ValidationError);
}

TEST_CASE("low-confidence masks are blanked in place") {
    const MaskTriple triples[] = {triple_with(0.9, 0.5, 0.95), triple_with(0.3, 0.2, 0.1)};
    const LevelMaps kept = drop_low_confidence(stratify(triples, 1), 0.88);
    REQUIRE(kept.object.size() == 2);
    CHECK(kept.object[0].mask.area() == 16);
    CHECK(kept.part[0].mask.is_empty());
    CHECK(kept.part[0].score == 0.0);
    CHECK(kept.subpart[0].mask.area() == 4);
    CHECK(kept.best[0].level == Level::subpart);
    for (const auto* list : {&kept.object, &kept.part, &kept.subpart, &kept.best}) {
        CHECK((*list)[1].mask.is_empty());
    }
    const LevelMaps all = drop_low_confidence(stratify(triples, 1), 0.0);
    CHECK(all.subpart[1].mask.area() == 4);
}

TEST_CASE("object-level filtering examples") {
    const BinaryMask a = box_mask(16, 16, 0, 0, 5, 5);
    const BinaryMask b = box_mask(16, 16, 8, 8, 15, 15);
    const std::vector<ScoredMask> object{scored(a, 0.9, 0), scored(b, 0.8, 1)};
    const std::vector<ScoredMask> best{scored(a, 0.95, 0), scored(box_mask(16, 16, 0, 8, 3, 15), 0.9, 1)};
    const auto kept = filter_object_level(object, best, 0.8, 0.6);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].mask == a);
}

TEST_CASE("object-level filtering invariants") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = uniform_int(rng, 1, 20);
        const int w = uniform_int(rng, 1, 20);
        const auto object = random_masks(rng, h, w, uniform_int(rng, 0, 8));
        const auto best = random_masks(rng, h, w, uniform_int(rng, 0, 8));
        const double theta = uniform_real(rng, 0.0, 1.0);
        const double gamma = uniform_real(rng, 0.0, 1.0);
        const auto filtered = filter_object_level(object, best, theta, gamma);
        const auto thinned = nms(nonempty(object), theta);
        for (const auto& m : filtered) {
            CHECK(contains_mask(thinned, m));
            CHECK(contains_mask(object, m));
            double max_iou = 0.0;
            for (const auto& b : best) {
                max_iou = std::max(max_iou, dense_iou(decode(m.mask), decode(b.mask)));
            }
            CHECK(max_iou >= gamma);
        }
        for (const auto& m : thinned) {
            bool witnessed = false;
            for (const auto& b : best) {
                witnessed = witnessed || iou(m.mask, b.mask) >= gamma;
            }
            CHECK(witnessed == contains_mask(filtered, m));
        }
    }
}

TEST_CASE("adaptive NMS examples") {
    // IoU 12 / 20 = 0.6.
    const std::vector<ScoredMask> pair{scored(band(10, 0, 8), 0.9), scored(band(10, 2, 10), 0.8)};
    REQUIRE(iou(pair[0].mask, pair[1].mask) == doctest::Approx(0.6));
    CHECK(adaptive_nms(pair, uniform_density(2, 10, 0.7), 0.5).size() == 2);
    const auto thinned = adaptive_nms(pair, uniform_density(2, 10, 0.3), 0.5);
    REQUIRE(thinned.size() == 1);
    CHECK(thinned[0].score == 0.9);

    // Density is read on the kept mask, not on the candidate. Cols 2-7 carry 0.6,
    // cols 8-9 carry 1: density([0,8)) = 0.45, density([2,10)) = 0.7.
    std::vector<double> values(20, 0.0);
    for (int c = 2; c < 10; ++c) {
        values[static_cast<std::size_t>(c)] = values[static_cast<std::size_t>(10 + c)] = c < 8 ? 0.6 : 1.0;
    }
    const DensityMap skewed(2, 10, values);
    REQUIRE(mask_density(skewed, pair[0].mask) == doctest::Approx(0.45));
    REQUIRE(mask_density(skewed, pair[1].mask) == doctest::Approx(0.7));
    CHECK(adaptive_nms(pair, skewed, 0.5).size() == 1);
    const std::vector<ScoredMask> flipped{scored(band(10, 0, 8), 0.8), scored(band(10, 2, 10), 0.9)};
    CHECK(adaptive_nms(flipped, skewed, 0.5).size() == 2);
}

TEST_CASE("adaptive NMS with zero density is plain NMS") {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = uniform_int(rng, 1, 24);
        const int w = uniform_int(rng, 1, 24);
        const auto masks = random_masks(rng, h, w, uniform_int(rng, 0, 12));
        const double n_t = uniform_real(rng, 0.0, 1.0);
        const auto a = adaptive_nms(masks, uniform_density(h, w, 0.0), n_t);
        const auto b = nms(nonempty(masks), n_t);
        CHECK(same_masks(a, b));
    }
}

TEST_CASE("adaptive NMS suppresses only with a witness above the base threshold") {
    // A raised threshold is not monotone in the kept set: keeping B can cost C.
    // A = [0,20), B = [5,25), C = [8,28): IoU(A,B) = 0.6, IoU(B,C) = 17/23, IoU(A,C) = 12/28.
    const std::vector<ScoredMask> chain{scored(band(40, 0, 20), 0.9), scored(band(40, 5, 25), 0.8),
                                        scored(band(40, 8, 28), 0.7)};
    const auto plain = nms(chain, 0.5);
    const auto adaptive = adaptive_nms(chain, uniform_density(2, 40, 0.7), 0.5);
    REQUIRE(plain.size() == 2);
    REQUIRE(adaptive.size() == 2);
    CHECK(plain[1].score == 0.7);
    CHECK(adaptive[1].score == 0.8);

    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = uniform_int(rng, 2, 16);
        const int w = uniform_int(rng, 2, 16);
        auto masks = nonempty(random_masks(rng, h, w, uniform_int(rng, 1, 10)));
        // Distinct scores so kept masks can be told apart.
        for (std::size_t i = 0; i < masks.size(); ++i) {
            masks[i].score = static_cast<double>(i + 1) / static_cast<double>(masks.size() + 1);
        }
        std::shuffle(masks.begin(), masks.end(), rng);
        std::vector<double> values(static_cast<std::size_t>(h * w));
        for (auto& v : values) {
            v = uniform_real(rng, 0.0, 1.0);
        }
        const DensityMap density(h, w, values);
        const double n_t = uniform_real(rng, 0.2, 0.9);
        const auto kept = adaptive_nms(masks, density, n_t);
        // Every kept pair is below the pair's threshold, every dropped mask has a
        // higher-ranked kept witness above it.
        const auto order = score_order(masks);
        std::vector<bool> is_kept(masks.size(), false);
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            is_kept[rank] = contains_mask(kept, masks[order[rank]]);
        }
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            const ScoredMask& m = masks[order[rank]];
            bool witness = false;
            for (std::size_t prev = 0; prev < rank; ++prev) {
                if (!is_kept[prev]) {
                    continue;
                }
                const ScoredMask& k = masks[order[prev]];
                const double threshold = std::max(n_t, mask_density(density, k.mask));
                witness = witness || iou(m.mask, k.mask) > threshold;
            }
            CHECK(witness != is_kept[rank]);
            if (witness) {
                CHECK(std::any_of(kept.begin(), kept.end(), [&](const ScoredMask& k) { return iou(m.mask, k.mask) > n_t; }));
            }
        }
    }
}

TEST_CASE("run_mmg on noiseless and empty scenes") {
    SceneSpec scene;
    scene.height = 96;
    scene.width = 96;
    scene.entities.push_back({ShapeKind::rectangle, 4, 4, 30, 24, {220, 40, 40}, 2});
    scene.entities.push_back({ShapeKind::ellipse, 50, 10, 36, 30, {40, 200, 40}, 1});
    scene.entities.push_back({ShapeKind::l_polyomino, 20, 50, 40, 40, {40, 40, 220}, 3});
    OracleProvider oracle(scene);
    MmgParams params;
    params.grid_coarse = 16;
    params.grid_fine = 32;
    const MmgOutput out = run_mmg(oracle, oracle.image(), params);
    const EntityMap gt = ground_truth(scene);
    for (const auto& e : gt.masks) {
        CHECK(std::any_of(out.object_refined.begin(), out.object_refined.end(),
                          [&](const ScoredMask& m) { return iou(m.mask, e.mask) == 1.0; }));
    }
    CHECK(out.fine.object.size() == 32u * 32u);
    CHECK(out.prompts_fine.size() == 32u * 32u);
    CHECK(out.superpixels.count() >= 4);

    SceneSpec empty;
    empty.height = 64;
    empty.width = 48;
    OracleProvider blank(empty);
    const MmgOutput none = run_mmg(blank, blank.image(), params);
    CHECK(none.object_refined.empty());
    CHECK(none.part_thinned.empty());
    CHECK(none.subpart_thinned.empty());
    CHECK(nonempty(none.fine.object).empty());
    CHECK(none.superpixels.count() == 1);
    CHECK(none.density.at(0, 0) == 0.5);

    // Deterministic given the provider seed.
    SceneSpec noisy = random_scene(4, {});
    noisy.noise = {2, 0.05, 0.3, 4};
    OracleProvider p1(noisy);
    OracleProvider p2(noisy);
    const MmgOutput a = run_mmg(p1, p1.image(), {});
    const MmgOutput b = run_mmg(p2, p2.image(), {});
    CHECK(same_masks(a.object_refined, b.object_refined));
    CHECK(same_masks(a.part_thinned, b.part_thinned));
    CHECK(same_masks(a.fine.best, b.fine.best));
}

TEST_CASE("gallery construction and guidance") {
    CHECK(build_gallery({}, {}).empty());
    const std::vector<ScoredMask> one{scored(box_mask(8, 8, 0, 0, 3, 3), 0.9, 5)};
    CHECK_THROWS_AS(build_gallery(one, {}), ValidationError);

    const BinaryMask whole = box_mask(8, 8, 0, 0, 3, 3);
    const BinaryMask half = box_mask(8, 8, 0, 0, 1, 3);
    const std::vector<ScoredMask> object{scored(whole, 0.90, 5), scored(BinaryMask::empty(8, 8), 0.0, 6),
                                         scored(whole, 0.90, 7)};
    const std::vector<ScoredMask> best{scored(half, 0.95, 5, Level::part), scored(half, 0.9, 6, Level::part),
                                       scored(whole, 0.90, 7)};
    const MaskGallery g = build_gallery(object, best);
    CHECK(g.by_prompt.size() == 2);
    CHECK(g.by_prompt.count(6) == 0);
    // One entry with distinct object and best, one where they coincide.
    CHECK(g.all_masks.size() == 3);
    // Score gap 0.05 < tau 0.1 keeps the object; a wider gap picks the best level.
    CHECK(guidance_for(g.by_prompt.at(5), 0.1).mask == whole);
    CHECK(guidance_for(g.by_prompt.at(5), 0.04).mask == half);

    const std::vector<PointPrompt> prompts{{0.5, 0.5, 5}, {2.5, 2.5, 7}, {6.5, 6.5, 9}};
    const auto mode = modal_guidance(box_mask(8, 8, 0, 0, 3, 3), g, prompts, 0.1);
    REQUIRE(mode.has_value());
    CHECK(mode->mask == whole);
    CHECK_FALSE(modal_guidance(box_mask(8, 8, 6, 6, 7, 7), g, prompts, 0.1).has_value());
}

TEST_CASE("split examples") {
    const BinaryMask a = box_mask(20, 20, 0, 0, 4, 4);
    const BinaryMask b = box_mask(20, 20, 10, 10, 14, 14);
    const std::vector<ScoredMask> disjoint{scored(a, 0.9), scored(b, 0.8)};
    CHECK(same_masks(split_overlaps(disjoint, {}, {}, 0.05, 0.1), disjoint));

    // Areas 100 and 80 sharing 3 px: 3 / 100 < 0.05, so the larger loses them.
    const BinaryMask big = box_mask(20, 20, 0, 0, 9, 9);
    const BinaryMask small = box_mask(20, 20, 9, 7, 16, 16);
    REQUIRE(big.area() == 100);
    REQUIRE(small.area() == 80);
    REQUIRE(intersection_area(big, small) == 3);
    const std::vector<ScoredMask> overlapping{scored(small, 0.8), scored(big, 0.9)};
    const auto split = split_overlaps(overlapping, {}, {}, 0.05, 0.1);
    REQUIRE(split.size() == 2);
    CHECK(split[0].score == 0.9);
    CHECK(split[0].mask == subtract(big, small));
    CHECK(split[1].mask == small);
}

TEST_CASE("large overlaps follow the modal guidance mask") {
    // p = rows 0-9, q = rows 5-14 (cols 0-9): 50 px shared out of 100.
    const BinaryMask p = box_mask(16, 10, 0, 0, 9, 9);
    const BinaryMask q = box_mask(16, 10, 5, 0, 14, 9);
    const BinaryMask overlap = intersect(p, q);
    const std::vector<ScoredMask> masks{scored(p, 0.9), scored(q, 0.8)};
    const std::vector<PointPrompt> prompts{{6.5, 2.5, 0}, {7.5, 7.5, 1}, {1.5, 1.5, 2}};
    for (const bool favour_q : {false, true}) {
        const BinaryMask guide = favour_q ? box_mask(16, 10, 4, 0, 15, 9) : box_mask(16, 10, 0, 0, 8, 9);
        const std::vector<ScoredMask> object{scored(guide, 0.9, 0), scored(guide, 0.9, 1), scored(p, 0.9, 2)};
        const MaskGallery g = build_gallery(object, object);
        const auto split = split_overlaps(masks, g, prompts, 0.05, 0.1);
        REQUIRE(split.size() == 2);
        CHECK(split[0].mask == (favour_q ? subtract(p, overlap) : p));
        CHECK(split[1].mask == (favour_q ? q : subtract(q, overlap)));
    }
    // No fine prompt inside the overlap: falls back to cutting the larger mask (ties: lower score).
    const auto fallback = split_overlaps(masks, {}, {}, 0.05, 0.1);
    CHECK(fallback[0].mask == p);
    CHECK(fallback[1].mask == subtract(q, overlap));
    CHECK_THROWS_AS(split_overlaps(masks, {}, {}, 1.5, 0.1), ValidationError);
}

TEST_CASE("split output is disjoint and within the input union") {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 150; ++trial) {
        const int h = uniform_int(rng, 2, 24);
        const int w = uniform_int(rng, 2, 24);
        const auto masks = random_masks(rng, h, w, uniform_int(rng, 0, 8));
        auto gallery_masks = random_masks(rng, h, w, uniform_int(rng, 0, 10));
        for (std::size_t i = 0; i < gallery_masks.size(); ++i) {
            gallery_masks[i].prompt_id = static_cast<int>(i);
        }
        const auto prompts = grid_prompts(h, w, 4);
        const MaskGallery g = build_gallery(gallery_masks, gallery_masks);
        const double delta = uniform_real(rng, 0.0, 0.3);
        const auto out = split_overlaps(masks, g, prompts, delta, 0.1);
        CHECK(pairwise_disjoint(out));
        CHECK(out.size() <= masks.size());
        BinaryMask in_union = BinaryMask::empty(h, w);
        for (const auto& m : masks) {
            in_union = unite(in_union, m.mask);
        }
        for (const auto& m : out) {
            CHECK_FALSE(m.mask.is_empty());
            CHECK(subtract(m.mask, in_union).is_empty());
        }
        for (std::size_t i = 1; i < out.size(); ++i) {
            CHECK(out[i - 1].score >= out[i].score);
        }
    }
}

TEST_CASE("cosine and centroid similarity examples") {
    Eigen::MatrixXd v(5, 3);
    v << 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0;
    const Eigen::MatrixXd s = cosine_similarity(v);
    CHECK(s(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(s(0, 2) == doctest::Approx(0.0));
    CHECK(s(0, 4) == doctest::Approx(1.0));
    CHECK(s(3, 3) == 1.0);
    CHECK(s(3, 0) == 0.0);
    CHECK(s(0, 3) == 0.0);

    // Constant features: every pair of centroids is fully similar.
    FeatureGrid f;
    f.channels = 2;
    f.height = 1;
    f.width = 2;
    f.data = {0.3f, 0.3f, -1.0f, -1.0f};
    const Eigen::MatrixXd c = centroid_similarity(f, three_bands());
    REQUIRE(c.rows() == 3);
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) {
            CHECK(c(i, j) == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("adjacency similarity examples") {
    const SuperpixelMap sp = three_bands();
    Eigen::MatrixXd sim(3, 3);
    sim << 1.0, 0.9, 0.1, 0.9, 1.0, 0.5, 0.1, 0.5, 1.0;
    const std::vector<ScoredMask> masks{scored(box_mask(4, 12, 0, 0, 3, 3), 0.9),
                                        scored(box_mask(4, 12, 0, 4, 3, 11), 0.8)};
    const Eigen::MatrixXd s = adjacency_similarity(masks, sp, sim, 1);
    // Mask 0's only centroid has its top-1 neighbour in mask 1.
    CHECK(s(0, 1) == 1.0);
    CHECK(s(0, 0) == 0.0);
    // Mask 1: centroid 1 points to mask 0, centroid 2 points to centroid 1 (itself).
    CHECK(s(1, 0) == 0.5);
    CHECK(s(1, 1) == 0.5);

    // All neighbours inside the mask itself: zero off-diagonal row.
    const std::vector<ScoredMask> whole{scored(BinaryMask::full(4, 12), 0.9),
                                        scored(BinaryMask::empty(4, 12), 0.1)};
    const Eigen::MatrixXd t = adjacency_similarity(whole, sp, sim, 2);
    CHECK(t(0, 0) == 1.0);
    CHECK(t(0, 1) == 0.0);
    CHECK(t(1, 0) == 0.0);
}

TEST_CASE("affinity merge folding equals recomputation") {
    std::mt19937_64 rng(25);
    for (int trial = 0; trial < 60; ++trial) {
        const int h = uniform_int(rng, 6, 20);
        const int w = uniform_int(rng, 6, 20);
        Image img(h, w);
        for (auto& v : img.data) {
            v = static_cast<float>(uniform_real(rng, 0.0, 1.0));
        }
        const SuperpixelMap sp = felzenszwalb(img, {100.0, 0.0, 3});
        const auto k = static_cast<Eigen::Index>(sp.count());
        Eigen::MatrixXd sim = Eigen::MatrixXd::Random(k, k);
        // Disjoint masks: random owner per superpixel (or none).
        const int n = uniform_int(rng, 2, 5);
        std::vector<std::vector<std::uint64_t>> pixels(static_cast<std::size_t>(n));
        std::vector<int> owner(static_cast<std::size_t>(sp.count()));
        for (auto& o : owner) {
            o = uniform_int(rng, -1, n - 1);
        }
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const int o = owner[static_cast<std::size_t>(sp.label_at(r, c))];
                if (o >= 0) {
                    pixels[static_cast<std::size_t>(o)].push_back(static_cast<std::uint64_t>(r * w + c));
                }
            }
        }
        std::vector<ScoredMask> masks;
        for (const auto& p : pixels) {
            masks.push_back(scored(BinaryMask::from_sorted_indices(h, w, p), 0.5));
        }
        const int top_k = uniform_int(rng, 1, 4);
        MaskAffinity folded = mask_affinity(masks, sp, sim, top_k);
        const auto a = static_cast<std::size_t>(uniform_int(rng, 0, n - 2));
        const auto b = static_cast<std::size_t>(uniform_int(rng, static_cast<int>(a) + 1, n - 1));
        folded.merge(a, b);
        std::vector<ScoredMask> merged = masks;
        merged[a].mask = unite(masks[a].mask, masks[b].mask);
        merged.erase(merged.begin() + static_cast<std::ptrdiff_t>(b));
        const MaskAffinity fresh = mask_affinity(merged, sp, sim, top_k);
        CHECK(folded.centroid_counts() == fresh.centroid_counts());
        CHECK(folded.similarity().isApprox(fresh.similarity()));
        CHECK((folded.similarity() - fresh.similarity()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("merge requires similarity and gallery votes") {
    const SuperpixelMap sp = three_bands();
    Eigen::MatrixXd sim(3, 3);
    sim << 1.0, 0.9, 0.1, 0.9, 1.0, 0.5, 0.1, 0.5, 1.0;
    const BinaryMask left = box_mask(4, 12, 0, 0, 3, 3);
    const BinaryMask right = box_mask(4, 12, 0, 4, 3, 11);
    const BinaryMask whole = BinaryMask::full(4, 12);
    const std::vector<ScoredMask> masks{scored(left, 0.9, 1), scored(right, 0.95, 2)};
    const MaskAffinity affinity = mask_affinity(masks, sp, sim, 1);

    // Gallery holds the full entity: IoU(g, a ∪ b) = 1.
    const std::vector<ScoredMask> g1{scored(whole, 0.9, 0)};
    const EntityMap merged = merge_similar(masks, affinity, build_gallery(g1, g1), 0.5, 0.7);
    REQUIRE(merged.masks.size() == 1);
    CHECK(merged.masks[0].mask == whole);
    CHECK(merged.masks[0].score == 0.95);
    CHECK(merged.masks[0].prompt_id == 2);

    // No covering gallery mask.
    const EntityMap apart = merge_similar(masks, affinity, {}, 0.5, 0.7);
    CHECK(same_masks(apart.masks, masks));
    // With k = 3 the affinities drop to 2/3 and 1/3, below a 0.7 threshold.
    const MaskAffinity weak = mask_affinity(masks, sp, sim, 3);
    CHECK(weak.similarity()(0, 1) == doctest::Approx(2.0 / 3.0));
    CHECK(weak.similarity()(1, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(same_masks(merge_similar(masks, weak, build_gallery(g1, g1), 0.7, 0.7).masks, masks));
    CHECK(merge_similar(masks, weak, build_gallery(g1, g1), 0.6, 0.7).masks.size() == 1);

    // Prompts that saw the right piece on its own outvote a single covering mask.
    const std::vector<ScoredMask> g2{scored(whole, 0.9, 0), scored(right, 0.9, 1), scored(right, 0.9, 2)};
    const MaskGallery votes = build_gallery(g2, g2);
    CHECK(gallery_votes(votes, right, 0.7) == 2);
    CHECK(gallery_votes(votes, left, 0.7) == 0);
    CHECK_FALSE(gallery_supports(votes, left, right, 0.7));
    CHECK(merge_similar(masks, affinity, votes, 0.5, 0.7).masks.size() == 2);
    const std::vector<ScoredMask> g3{scored(whole, 0.9, 0), scored(whole, 0.9, 1), scored(right, 0.9, 2)};
    CHECK(gallery_supports(build_gallery(g3, g3), left, right, 0.7));
}

TEST_CASE("entity refinement on oracle scenes") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        SceneSpec scene = random_scene(seed, {});
        scene.noise = {2, 0.05, 0.3, seed};
        OracleProvider oracle(scene);
        const MmgOutput mmg = run_mmg(oracle, oracle.image(), {});
        std::vector<ScoredMask> input = mmg.object_refined;
        input.insert(input.end(), mmg.part_thinned.begin(), mmg.part_thinned.end());
        const EmrParams params;
        const EntityMap once = run_emr(input, mmg, oracle.embed(), params);
        CHECK(once.pairwise_disjoint());
        CHECK(once.masks.size() <= input.size());
        const EntityMap twice = run_emr(once.masks, mmg, oracle.embed(), params);
        CHECK(same_mask_set(twice.masks, once.masks));
        // Feature-free fallback keeps the same guarantees.
        const EntityMap plain = run_emr(input, mmg, std::nullopt, params);
        CHECK(plain.pairwise_disjoint());
        CHECK(same_mask_set(run_emr(plain.masks, mmg, std::nullopt, params).masks, plain.masks));
    }
}

TEST_CASE("split halves of one entity merge back") {
    SceneSpec scene;
    scene.height = 64;
    scene.width = 64;
    scene.entities.push_back({ShapeKind::rectangle, 8, 8, 24, 40, {200, 60, 60}, 1});
    OracleProvider oracle(scene);
    const BinaryMask truth = ground_truth(scene).masks[0].mask;
    MmgParams params;
    params.grid_coarse = 8;
    params.grid_fine = 16;
    const MmgOutput mmg = run_mmg(oracle, oracle.image(), params);
    // Left and right halves, as a split answer would leave them; the fine grid
    // saw the whole entity.
    const BinaryMask left = intersect(truth, box_mask(64, 64, 0, 0, 63, 27));
    const std::vector<ScoredMask> halves{scored(left, 0.95, 100, Level::part),
                                         scored(subtract(truth, left), 0.94, 101, Level::part)};
    const EntityMap out = run_emr(halves, mmg, oracle.embed(), {});
    REQUIRE(out.masks.size() == 1);
    CHECK(out.masks[0].mask == truth);
    CHECK(out.masks[0].score == 0.95);
    const EntityMap fallback = run_emr(halves, mmg, std::nullopt, {});
    CHECK(fallback.masks.size() == 1);
}

TEST_CASE("uncovered region examples") {
    const SuperpixelMap sp = three_bands();
    const EntityMap full{4, 12, {scored(BinaryMask::full(4, 12), 1.0)}};
    CHECK(uncovered_regions(full, sp, 0.5, 0).empty());

    // Bands 0 and 2 are not adjacent: two regions, each one superpixel.
    const EntityMap middle{4, 12, {scored(box_mask(4, 12, 0, 4, 3, 7), 1.0)}};
    const auto two = uncovered_regions(middle, sp, 0.5, 0);
    REQUIRE(two.size() == 2);
    CHECK(two[0].mask == box_mask(4, 12, 0, 0, 3, 3));
    CHECK(two[0].source_superpixels == std::vector<int>{0});
    CHECK(two[1].source_superpixels == std::vector<int>{2});
    CHECK(uncovered_regions(middle, sp, 0.5, 17).empty());

    const EntityMap none{4, 12, {}};
    const auto all = uncovered_regions(none, sp, 0.5, 0);
    REQUIRE(all.size() == 1);
    CHECK(all[0].mask == BinaryMask::full(4, 12));
    CHECK(all[0].source_superpixels == std::vector<int>{0, 1, 2});

    // Band 1 at 62.5% coverage counts as covered.
    const EntityMap partial{4, 12, {scored(box_mask(4, 12, 0, 4, 3, 8), 1.0)}};
    REQUIRE(intersection_area(partial.masks[0].mask, sp.region_mask(1)) == 16);
    const EntityMap sixty{4, 12, {scored(box_mask(4, 12, 0, 4, 2, 6), 1.0)}};
    REQUIRE(intersection_area(sixty.masks[0].mask, sp.region_mask(1)) == 9);
    CHECK(uncovered_regions(partial, sp, 0.5, 0).size() == 2);
    // 9 / 16 = 0.5625 covered at 0.5, uncovered at 0.6.
    CHECK(uncovered_regions(sixty, sp, 0.5, 0).size() == 2);
    CHECK(uncovered_regions(sixty, sp, 0.6, 0).size() == 1);
}

TEST_CASE("empty map regions partition the superpixels") {
    std::mt19937_64 rng(26);
    for (int trial = 0; trial < 40; ++trial) {
        const int h = uniform_int(rng, 4, 24);
        const int w = uniform_int(rng, 4, 24);
        Image img(h, w);
        for (auto& v : img.data) {
            v = static_cast<float>(uniform_real(rng, 0.0, 1.0));
        }
        const SuperpixelMap sp = felzenszwalb(img, {150.0, 0.5, 2});
        std::vector<ScoredMask> some;
        if (uniform_int(rng, 0, 1) == 1) {
            some.push_back(scored(encode(random_bitmap(rng, h, w)), 1.0));
        }
        const EntityMap map{h, w, some};
        const auto regions = uncovered_regions(map, sp, 0.5, 0);
        std::vector<int> seen;
        for (const auto& r : regions) {
            for (const int l : r.source_superpixels) {
                seen.push_back(l);
            }
        }
        std::sort(seen.begin(), seen.end());
        CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
        for (int l = 0; l < sp.count(); ++l) {
            const auto covered = some.empty() ? 0 : intersection_area(sp.region_mask(l), some[0].mask);
            const bool open = static_cast<double>(covered) < 0.5 * static_cast<double>(sp.regions()[static_cast<std::size_t>(l)].area);
            CHECK(std::binary_search(seen.begin(), seen.end(), l) == open);
        }
        if (some.empty()) {
            BinaryMask all = BinaryMask::empty(h, w);
            for (const auto& r : regions) {
                CHECK(intersection_area(all, r.mask) == 0);
                all = unite(all, r.mask);
                CHECK(connected_components(r.mask, 4).size() == 1);
            }
            CHECK(all == BinaryMask::full(h, w));
        }
    }
}

TEST_CASE("additional prompt examples") {
    const auto region_of = [](BinaryMask m) { return UncoveredRegion{std::move(m), {0}}; };
    const BinaryMask part = box_mask(20, 20, 0, 0, 9, 9);
    const std::vector<ScoredMask> parts{scored(part, 0.9, 0, Level::part)};

    // Region inside the part: the part's centroid (4.5, 4.5) -> pixel centre (5.0, 5.0).
    const std::vector<UncoveredRegion> inside{region_of(box_mask(20, 20, 1, 1, 3, 3))};
    auto p = additional_prompts(inside, parts, {}, 0.9, 10);
    REQUIRE(p.size() == 1);
    CHECK(p[0].row == 5.0);
    CHECK(p[0].col == 5.0);
    CHECK(p[0].id == 10);

    // No holder: the region centroid (15, 16.5) -> (15.5, 17.0).
    const std::vector<UncoveredRegion> outside{region_of(box_mask(20, 20, 14, 15, 16, 18))};
    p = additional_prompts(outside, parts, {}, 0.9, 0);
    REQUIRE(p.size() == 1);
    CHECK(p[0].row == 15.5);
    CHECK(p[0].col == 17.0);

    // Straddling two parts 50/50: containment fails, region centroid (9.5, 9) -> (10, 9.5).
    const std::vector<ScoredMask> two{scored(box_mask(20, 20, 0, 0, 9, 19), 0.9, 0, Level::part),
                                      scored(box_mask(20, 20, 10, 0, 19, 19), 0.9, 1, Level::part)};
    const std::vector<UncoveredRegion> straddle{region_of(box_mask(20, 20, 8, 8, 11, 10))};
    p = additional_prompts(straddle, two, {}, 0.9, 0);
    REQUIRE(p.size() == 1);
    CHECK(p[0].row == 10.0);
    CHECK(p[0].col == 9.5);

    // Subparts count as holders; a ring's centroid snaps onto the ring.
    const BinaryMask ring = subtract(box_mask(20, 20, 2, 2, 12, 12), box_mask(20, 20, 4, 4, 10, 10));
    const std::vector<UncoveredRegion> ring_region{region_of(ring)};
    p = additional_prompts(ring_region, {}, {}, 0.9, 0);
    REQUIRE(p.size() == 1);
    CHECK(ring.contains(p[0].pixel_row(), p[0].pixel_col()));
    // The centroid (7, 7) is in the hole; (3, 7) is the first of the four ring pixels 4 px away.
    CHECK(p[0].pixel_row() == 3);
    CHECK(p[0].pixel_col() == 7);

    // Two regions with the same holder give one prompt.
    const std::vector<UncoveredRegion> twice{region_of(box_mask(20, 20, 1, 1, 2, 2)), region_of(box_mask(20, 20, 6, 6, 7, 7))};
    CHECK(additional_prompts(twice, parts, {}, 0.9, 0).size() == 1);
}

TEST_CASE("fuse examples") {
    const BinaryMask e = box_mask(10, 10, 0, 0, 3, 9);
    const EntityMap map{10, 10, {scored(e, 0.9, 0)}};
    // IoU 20 / 60 = 1/3 against the entity.
    const BinaryMask touching = box_mask(10, 10, 2, 0, 5, 9);
    const EntityMap joined = fuse(map, std::vector<ScoredMask>{scored(touching, 0.5, 1)}, 0.1);
    REQUIRE(joined.masks.size() == 1);
    CHECK(joined.masks[0].mask == box_mask(10, 10, 0, 0, 5, 9));
    CHECK(joined.masks[0].score == 0.9);

    const BinaryMask away = box_mask(10, 10, 7, 7, 9, 9);
    const EntityMap appended = fuse(map, std::vector<ScoredMask>{scored(away, 0.5, 1)}, 0.1);
    REQUIRE(appended.masks.size() == 2);
    CHECK(appended.masks[1].mask == away);
    // Above rho: a separate entity, clipped to the uncovered part.
    const EntityMap separate = fuse(map, std::vector<ScoredMask>{scored(touching, 0.5, 1)}, 0.5);
    REQUIRE(separate.masks.size() == 2);
    CHECK(separate.masks[1].mask == box_mask(10, 10, 4, 0, 5, 9));
    CHECK(separate.pairwise_disjoint());
    CHECK_THROWS_AS(fuse(map, std::vector<ScoredMask>{scored(BinaryMask::full(5, 5), 0.5)}, 0.1), DimensionError);
}

TEST_CASE("greedy fill examples") {
    const EntityMap empty{40, 40, {}};
    const BinaryMask big = box_mask(40, 40, 0, 0, 19, 24);
    REQUIRE(big.area() == 500);
    std::size_t accepted = 0;
    const EntityMap one = greedy_fill(empty, std::vector<ScoredMask>{scored(big, 0.9, 0)}, 50, 0.1, &accepted);
    CHECK(accepted == 1);
    REQUIRE(one.masks.size() == 1);
    CHECK(one.masks[0].mask == big);

    const EntityMap same =
        greedy_fill(empty, std::vector<ScoredMask>{scored(big, 0.9, 0), scored(big, 0.9, 1)}, 50, 0.1, &accepted);
    CHECK(accepted == 1);
    CHECK(same.masks.size() == 1);

    const BinaryMask a = box_mask(40, 40, 0, 0, 14, 19);
    const BinaryMask b = box_mask(40, 40, 0, 0, 9, 19);
    REQUIRE(a.area() == 300);
    REQUIRE(b.area() == 200);
    const EntityMap only_a =
        greedy_fill(empty, std::vector<ScoredMask>{scored(b, 0.99, 0), scored(a, 0.5, 1)}, 50, 0.1, &accepted);
    CHECK(accepted == 1);
    REQUIRE(only_a.masks.size() == 1);
    CHECK(only_a.masks[0].mask == a);

    const EntityMap untouched = greedy_fill(empty, std::vector<ScoredMask>{scored(big, 0.9, 0)},
                                            std::numeric_limits<int>::max(), 0.1, &accepted);
    CHECK(accepted == 0);
    CHECK(untouched.masks.empty());
}

TEST_CASE("greedy fill properties") {
    std::mt19937_64 rng(27);
    for (int trial = 0; trial < 150; ++trial) {
        const int h = uniform_int(rng, 2, 20);
        const int w = uniform_int(rng, 2, 20);
        EntityMap map{h, w, split_overlaps(random_masks(rng, h, w, uniform_int(rng, 0, 4)), {}, {}, 0.05, 0.1)};
        const auto candidates = random_masks(rng, h, w, uniform_int(rng, 0, 6));
        const int min_gain = uniform_int(rng, 1, 40);
        std::size_t accepted = 0;
        const EntityMap out = greedy_fill(map, candidates, min_gain, uniform_real(rng, 0.0, 1.0), &accepted);
        CHECK(out.pairwise_disjoint());
        CHECK(accepted <= candidates.size());
        CHECK(out.covered_pixels() >= map.covered_pixels());
        if (accepted > 0) {
            CHECK(out.covered_pixels() >= map.covered_pixels() + static_cast<std::uint64_t>(min_gain));
        } else {
            CHECK(same_masks(out.masks, map.masks));
        }
        // Entities never shrink.
        for (std::size_t i = 0; i < map.masks.size(); ++i) {
            CHECK(subtract(map.masks[i].mask, out.masks[i].mask).is_empty());
        }
    }
}

TEST_CASE("USR recovers an entity missed by every prompt") {
    // Three vertical entities tile the image; the thin middle one is missing from the map.
    SceneSpec scene;
    scene.height = 32;
    scene.width = 32;
    scene.entities.push_back({ShapeKind::rectangle, 0, 0, 32, 14, {220, 40, 40}, 1});
    scene.entities.push_back({ShapeKind::rectangle, 0, 14, 32, 4, {40, 220, 40}, 1});
    scene.entities.push_back({ShapeKind::rectangle, 0, 18, 32, 14, {40, 40, 220}, 1});
    OracleProvider oracle(scene);
    const EntityMap gt = ground_truth(scene);
    const EntityMap partial{32, 32, {gt.masks[0], gt.masks[2]}};
    const SuperpixelMap sp = felzenszwalb(oracle.image(), {});
    UsrReport report;
    const EntityMap out = run_usr(oracle, sp, {}, {}, partial, {}, &report);
    CHECK(report.regions == 1);
    CHECK(report.prompts == 1);
    CHECK(report.accepted == 1);
    REQUIRE(out.masks.size() == 3);
    CHECK(iou(out.masks[2].mask, gt.masks[1].mask) == 1.0);

    // Nothing uncovered: output equals input.
    UsrReport idle;
    const EntityMap same = run_usr(oracle, sp, {}, {}, gt, {}, &idle);
    CHECK(idle.regions == 0);
    CHECK(same_masks(same.masks, gt.masks));
    // Unreachable gain: identity.
    UsrParams strict;
    strict.min_gain_px = std::numeric_limits<int>::max();
    CHECK(same_masks(run_usr(oracle, sp, {}, {}, partial, strict).masks, partial.masks));
}

TEST_CASE("USR keeps the map disjoint and coverage monotone") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        SceneSpec scene = random_scene(seed, {});
        scene.noise = {2, 0.05, 0.3, seed};
        OracleProvider oracle(scene);
        const EntityMap gt = ground_truth(scene);
        // Drop every other entity from the starting map.
        EntityMap start{gt.height, gt.width, {}};
        for (std::size_t i = 0; i < gt.masks.size(); i += 2) {
            start.masks.push_back(gt.masks[i]);
        }
        const SuperpixelMap sp = felzenszwalb(oracle.image(), {});
        UsrReport report;
        const EntityMap out = run_usr(oracle, sp, {}, {}, start, {}, &report);
        CHECK(out.pairwise_disjoint());
        CHECK(out.covered_pixels() >= start.covered_pixels());
        CHECK(report.accepted <= report.prompts);
        if (report.accepted > 0) {
            CHECK(out.covered_pixels() > start.covered_pixels());
        }
    }
}
