#include "entity_refine/synthetic.hpp"

#include "entity_refine/error.hpp"
#include "entity_refine/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace entity_refine {

namespace {

constexpr int kPartShift[4] = {0, 18, -18, 36};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

bool shape_contains(const EntitySpec& e, int r, int c) {
    if (r < e.row || c < e.col || r >= e.row + e.height || c >= e.col + e.width) {
        return false;
    }
    switch (e.shape) {
    case ShapeKind::rectangle:
        return true;
    case ShapeKind::ellipse: {
        const double cr = e.row + (e.height - 1) / 2.0;
        const double cc = e.col + (e.width - 1) / 2.0;
        const double dr = (r - cr) / (e.height / 2.0);
        const double dc = (c - cc) / (e.width / 2.0);
        return dr * dr + dc * dc <= 1.0;
    }
    case ShapeKind::l_polyomino:
        // Box minus its top-right quadrant.
        return !(r < e.row + e.height / 2 && c >= e.col + e.width / 2);
    }
    return false;
}

int part_index(const EntitySpec& e, int r, int c) {
    if (e.width >= e.height) {
        return std::min(e.parts - 1, (c - e.col) * e.parts / e.width);
    }
    return std::min(e.parts - 1, (r - e.row) * e.parts / e.height);
}

Rgb8 part_color(Rgb8 base, int part) {
    auto shift = [&](std::uint8_t v) {
        return static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + kPartShift[part % 4], 0, 255));
    };
    return {shift(base.r), shift(base.g), shift(base.b)};
}

// Square structuring element of side 2 r + 1. Pixels outside the image never constrain erosion.
BinaryMask morph(const BinaryMask& mask, int radius, bool dilate) {
    if (radius == 0 || mask.is_empty()) {
        return mask;
    }
    const Box box = *mask.bbox();
    const int h = mask.height();
    const int w = mask.width();
    const int r0 = std::max(0, box.row_min - radius);
    const int r1 = std::min(h - 1, box.row_max + radius);
    const int c0 = std::max(0, box.col_min - radius);
    const int c1 = std::min(w - 1, box.col_max + radius);
    const int wh = r1 - r0 + 1;
    const int ww = c1 - c0 + 1;
    const Bitmap full = decode(mask);
    std::vector<std::uint8_t> window(static_cast<std::size_t>(wh) * ww);
    for (int r = 0; r < wh; ++r) {
        for (int c = 0; c < ww; ++c) {
            window[static_cast<std::size_t>(r) * ww + c] = full.at(r0 + r, c0 + c) ? 1 : 0;
        }
    }
    // Outside the window but inside the image is background; outside the image is neutral.
    auto sample = [&](const std::vector<std::uint8_t>& src, int r, int c, bool& valid) -> std::uint8_t {
        const int ar = r0 + r;
        const int ac = c0 + c;
        if (ar < 0 || ac < 0 || ar >= h || ac >= w) {
            valid = false;
            return 0;
        }
        valid = true;
        if (r < 0 || c < 0 || r >= wh || c >= ww) {
            return 0;
        }
        return src[static_cast<std::size_t>(r) * ww + c];
    };
    auto pass = [&](const std::vector<std::uint8_t>& src, bool horizontal) {
        std::vector<std::uint8_t> out(src.size());
        for (int r = 0; r < wh; ++r) {
            for (int c = 0; c < ww; ++c) {
                std::uint8_t acc = dilate ? 0 : 1;
                for (int d = -radius; d <= radius; ++d) {
                    bool valid = false;
                    const std::uint8_t v = horizontal ? sample(src, r, c + d, valid) : sample(src, r + d, c, valid);
                    if (!valid) {
                        continue;
                    }
                    acc = dilate ? static_cast<std::uint8_t>(acc | v) : static_cast<std::uint8_t>(acc & v);
                }
                out[static_cast<std::size_t>(r) * ww + c] = acc;
            }
        }
        return out;
    };
    const auto result = pass(pass(window, true), false);
    std::vector<std::uint64_t> indices;
    for (int r = 0; r < wh; ++r) {
        for (int c = 0; c < ww; ++c) {
            if (result[static_cast<std::size_t>(r) * ww + c]) {
                indices.push_back(static_cast<std::uint64_t>(r0 + r) * w + static_cast<std::uint64_t>(c0 + c));
            }
        }
    }
    return BinaryMask::from_sorted_indices(h, w, indices);
}

} // namespace

const char* shape_name(ShapeKind shape) {
    switch (shape) {
    case ShapeKind::rectangle:
        return "rectangle";
    case ShapeKind::ellipse:
        return "ellipse";
    case ShapeKind::l_polyomino:
        return "l_polyomino";
    }
    return "rectangle";
}

ShapeKind parse_shape(const std::string& name) {
    if (name == "rectangle") {
        return ShapeKind::rectangle;
    }
    if (name == "ellipse") {
        return ShapeKind::ellipse;
    }
    if (name == "l_polyomino") {
        return ShapeKind::l_polyomino;
    }
    throw ValidationError("unknown shape '" + name + "'");
}

SceneTruth rasterize(const SceneSpec& scene) {
    if (scene.height <= 0 || scene.width <= 0) {
        throw ValidationError("scene canvas must be positive");
    }
    const auto& noise = scene.noise;
    if (noise.boundary_jitter_px < 0 || !(noise.score_noise_std >= 0.0) ||
        !(noise.dropout_prob >= 0.0 && noise.dropout_prob < 1.0)) {
        throw ValidationError("noise profile out of range");
    }
    SceneTruth truth;
    Bitmap occupied(scene.height, scene.width);
    for (std::size_t i = 0; i < scene.entities.size(); ++i) {
        const EntitySpec& e = scene.entities[i];
        if (e.height < 1 || e.width < 1 || e.row < 0 || e.col < 0 || e.row + e.height > scene.height ||
            e.col + e.width > scene.width) {
            throw ValidationError("entity " + std::to_string(i) + " does not fit the canvas");
        }
        if (e.parts < 1 || e.parts > 4) {
            throw ValidationError("entity " + std::to_string(i) + " must have 1..4 parts");
        }
        std::vector<std::vector<std::uint64_t>> part_pixels(static_cast<std::size_t>(e.parts));
        std::vector<std::uint64_t> pixels;
        for (int r = e.row; r < e.row + e.height; ++r) {
            for (int c = e.col; c < e.col + e.width; ++c) {
                if (!shape_contains(e, r, c)) {
                    continue;
                }
                if (occupied.at(r, c)) {
                    throw ValidationError("entity " + std::to_string(i) + " overlaps an earlier entity");
                }
                occupied.set(r, c);
                const auto idx = static_cast<std::uint64_t>(r) * scene.width + static_cast<std::uint64_t>(c);
                pixels.push_back(idx);
                part_pixels[static_cast<std::size_t>(part_index(e, r, c))].push_back(idx);
            }
        }
        if (pixels.empty()) {
            throw ValidationError("entity " + std::to_string(i) + " is empty");
        }
        // Row-major iteration over the box already yields sorted indices.
        truth.entities.push_back(BinaryMask::from_sorted_indices(scene.height, scene.width, pixels));
        auto& parts = truth.parts.emplace_back();
        for (std::size_t p = 0; p < part_pixels.size(); ++p) {
            if (part_pixels[p].empty()) {
                throw ValidationError("entity " + std::to_string(i) + " has an empty part " + std::to_string(p));
            }
            parts.push_back(BinaryMask::from_sorted_indices(scene.height, scene.width, part_pixels[p]));
        }
    }
    return truth;
}

void validate(const SceneSpec& scene) { (void)rasterize(scene); }

Image render(const SceneSpec& scene) {
    validate(scene);
    Image image(scene.height, scene.width);
    const auto bg = to_unit(scene.background);
    for (int r = 0; r < scene.height; ++r) {
        for (int c = 0; c < scene.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                image.at(r, c, ch) = bg[static_cast<std::size_t>(ch)];
            }
        }
    }
    for (const EntitySpec& e : scene.entities) {
        for (int r = e.row; r < e.row + e.height; ++r) {
            for (int c = e.col; c < e.col + e.width; ++c) {
                if (!shape_contains(e, r, c)) {
                    continue;
                }
                const auto color = to_unit(part_color(e.color, part_index(e, r, c)));
                for (int ch = 0; ch < 3; ++ch) {
                    image.at(r, c, ch) = color[static_cast<std::size_t>(ch)];
                }
            }
        }
    }
    return image;
}

EntityMap ground_truth(const SceneSpec& scene) {
    SceneTruth truth = rasterize(scene);
    EntityMap map{scene.height, scene.width, {}};
    for (auto& m : truth.entities) {
        map.masks.push_back({std::move(m), 1.0, Level::object, std::nullopt});
    }
    return map;
}

SceneSpec random_scene(std::uint64_t seed, const SceneOptions& options) {
    // Saturated hues with headroom for the +-36 part shifts.
    static constexpr Rgb8 kPalette[] = {{200, 60, 60},  {60, 170, 70},  {70, 90, 205},  {205, 180, 50},
                                        {170, 70, 190}, {60, 180, 190}, {210, 120, 50}, {120, 200, 130}};
    std::mt19937_64 rng(splitmix64(seed));
    SceneSpec scene;
    scene.height = options.height;
    scene.width = options.width;
    scene.noise = options.noise;
    std::uniform_int_distribution<int> count_dist(options.min_entities, options.max_entities);
    std::uniform_int_distribution<int> side_dist(options.min_side, options.max_side);
    std::uniform_int_distribution<int> shape_dist(0, 2);
    std::uniform_int_distribution<int> parts_dist(1, 4);
    std::uniform_int_distribution<int> color_dist(0, static_cast<int>(std::size(kPalette)) - 1);
    const int target = count_dist(rng);
    std::vector<Box> boxes;
    for (int attempt = 0; attempt < 400 && static_cast<int>(scene.entities.size()) < target; ++attempt) {
        EntitySpec e;
        e.shape = static_cast<ShapeKind>(shape_dist(rng));
        e.height = std::min(side_dist(rng), options.height);
        e.width = std::min(side_dist(rng), options.width);
        std::uniform_int_distribution<int> row_dist(0, options.height - e.height);
        std::uniform_int_distribution<int> col_dist(0, options.width - e.width);
        e.row = row_dist(rng);
        e.col = col_dist(rng);
        e.color = kPalette[color_dist(rng)];
        // Strips narrower than 6 px make parts that are hard to tell apart.
        e.parts = std::min(parts_dist(rng), std::max(1, std::max(e.height, e.width) / 6));
        const Box grown{e.row - options.gap, e.col - options.gap, e.row + e.height - 1 + options.gap,
                        e.col + e.width - 1 + options.gap};
        if (std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return b.intersects(grown); })) {
            continue;
        }
        boxes.push_back({e.row, e.col, e.row + e.height - 1, e.col + e.width - 1});
        scene.entities.push_back(e);
    }
    validate(scene);
    return scene;
}

bool entities_hit_grid(const SceneSpec& scene, int points_per_side) {
    const SceneTruth truth = rasterize(scene);
    const auto prompts = grid_prompts(scene.height, scene.width, points_per_side);
    return std::all_of(truth.entities.begin(), truth.entities.end(), [&](const BinaryMask& m) {
        const Bitmap bits = decode(m);
        return std::any_of(prompts.begin(), prompts.end(),
                           [&](const PointPrompt& p) { return bits.at(p.pixel_row(), p.pixel_col()); });
    });
}

OracleProvider::OracleProvider(SceneSpec scene) : scene_(std::move(scene)) {
    SceneTruth truth = rasterize(scene_);
    image_ = render(scene_);
    const auto n = static_cast<std::size_t>(scene_.height) * static_cast<std::size_t>(scene_.width);
    entity_at_.assign(n, -1);
    part_at_.assign(n, -1);
    for (std::size_t e = 0; e < truth.entities.size(); ++e) {
        entity_variant_.push_back(add_variants(truth.entities[e]));
        auto& parts = part_variant_.emplace_back();
        auto& subparts = subpart_variant_.emplace_back();
        auto& centroids = part_centroid_.emplace_back();
        for (std::size_t p = 0; p < truth.parts[e].size(); ++p) {
            const BinaryMask& part = truth.parts[e][p];
            parts.push_back(add_variants(part));
            const Point2 center = centroid(part);
            centroids.push_back(center);
            const Bitmap bits = decode(part);
            std::array<std::vector<std::uint64_t>, 4> quadrants;
            for (std::size_t i = 0; i < n; ++i) {
                if (!bits.bits[i]) {
                    continue;
                }
                entity_at_[i] = static_cast<std::int32_t>(e);
                part_at_[i] = static_cast<std::int32_t>(p);
                const auto r = static_cast<double>(i / static_cast<std::size_t>(scene_.width));
                const auto c = static_cast<double>(i % static_cast<std::size_t>(scene_.width));
                quadrants[static_cast<std::size_t>((r >= center.row ? 2 : 0) + (c >= center.col ? 1 : 0))].push_back(i);
            }
            std::array<std::size_t, 4> quadrant_ids{};
            for (std::size_t q = 0; q < 4; ++q) {
                quadrant_ids[q] =
                    quadrants[q].empty()
                        ? parts.back()
                        : add_variants(BinaryMask::from_sorted_indices(scene_.height, scene_.width, quadrants[q]));
            }
            subparts.push_back(quadrant_ids);
        }
    }
}

std::size_t OracleProvider::add_variants(BinaryMask truth) {
    Variants v;
    const int jitter = scene_.noise.boundary_jitter_px;
    for (int radius = 0; radius <= jitter; ++radius) {
        BinaryMask dilated = morph(truth, radius, true);
        BinaryMask eroded = morph(truth, radius, false);
        v.truth_iou.push_back({iou(dilated, truth), iou(eroded, truth)});
        v.perturbed.push_back({std::move(dilated), std::move(eroded)});
    }
    v.truth = std::move(truth);
    variants_.push_back(std::move(v));
    return variants_.size() - 1;
}

MaskTriple OracleProvider::answer(const PointPrompt& prompt) const {
    const int pr = prompt.pixel_row();
    const int pc = prompt.pixel_col();
    const std::size_t pixel = static_cast<std::size_t>(pr) * static_cast<std::size_t>(scene_.width) + pc;
    MaskTriple triple;
    triple.prompt_id = prompt.id;
    const std::int32_t entity = entity_at_[pixel];
    if (entity < 0) {
        const BinaryMask none = BinaryMask::empty(scene_.height, scene_.width);
        triple.object = {none, 0.0, Level::object, prompt.id};
        triple.part = {none, 0.0, Level::part, prompt.id};
        triple.subpart = {none, 0.0, Level::subpart, prompt.id};
        return triple;
    }
    const auto e = static_cast<std::size_t>(entity);
    const auto p = static_cast<std::size_t>(part_at_[pixel]);
    const Point2 center = part_centroid_[e][p];
    const std::size_t quadrant = (pr >= center.row ? 2 : 0) + (pc >= center.col ? 1 : 0);

    const NoiseProfile& noise = scene_.noise;
    std::mt19937_64 rng(splitmix64(noise.seed ^ splitmix64(pixel)));
    std::uniform_int_distribution<int> radius_dist(0, noise.boundary_jitter_px);
    std::bernoulli_distribution erode_coin(0.5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto emit = [&](std::size_t id, Level level) {
        const Variants& v = variants_[id];
        const int radius = radius_dist(rng);
        int op = erode_coin(rng) ? 1 : 0;
        const double jitter = gauss(rng) * noise.score_noise_std;
        if (op == 1 && !v.perturbed[static_cast<std::size_t>(radius)][1].contains(pr, pc)) {
            op = 0;
        }
        const double base = v.truth_iou[static_cast<std::size_t>(radius)][static_cast<std::size_t>(op)];
        return ScoredMask{v.perturbed[static_cast<std::size_t>(radius)][static_cast<std::size_t>(op)],
                          std::clamp(base + jitter, 0.0, 1.0), level, prompt.id};
    };
    triple.object = emit(entity_variant_[e], Level::object);
    triple.part = emit(part_variant_[e][p], Level::part);
    triple.subpart = emit(subpart_variant_[e][p][quadrant], Level::subpart);
    if (unit(rng) < noise.dropout_prob) {
        const double jitter = gauss(rng) * noise.score_noise_std;
        const double base = iou(triple.part.mask, variants_[entity_variant_[e]].truth);
        triple.object = {triple.part.mask, std::clamp(base + jitter, 0.0, 1.0), Level::object, prompt.id};
    }
    return triple;
}

std::vector<std::optional<MaskTriple>> OracleProvider::segment(std::span<const PointPrompt> prompts) {
    std::vector<std::optional<MaskTriple>> out(prompts.size());
    parallel_for(prompts.size(), [&](std::size_t i) { out[i] = answer(prompts[i]); });
    return out;
}

std::optional<FeatureGrid> OracleProvider::embed() {
    constexpr int kStride = 8;
    FeatureGrid grid;
    grid.channels = 3;
    grid.height = (scene_.height + kStride - 1) / kStride;
    grid.width = (scene_.width + kStride - 1) / kStride;
    grid.data.assign(static_cast<std::size_t>(3) * grid.height * grid.width, 0.0f);
    for (int gy = 0; gy < grid.height; ++gy) {
        for (int gx = 0; gx < grid.width; ++gx) {
            std::array<double, 3> sum{};
            int count = 0;
            for (int r = gy * kStride; r < std::min(scene_.height, (gy + 1) * kStride); ++r) {
                for (int c = gx * kStride; c < std::min(scene_.width, (gx + 1) * kStride); ++c) {
                    for (int ch = 0; ch < 3; ++ch) {
                        sum[static_cast<std::size_t>(ch)] += image_.at(r, c, ch);
                    }
                    ++count;
                }
            }
            for (int ch = 0; ch < 3; ++ch) {
                grid.data[(static_cast<std::size_t>(ch) * grid.height + gy) * grid.width + gx] =
                    static_cast<float>(sum[static_cast<std::size_t>(ch)] / count - 0.5);
            }
        }
    }
    return grid;
}

} // namespace entity_refine
