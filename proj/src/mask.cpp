#include "entity_refine/mask.hpp"

#include "entity_refine/error.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace entity_refine {

namespace {

void require_positive(int height, int width) {
    if (height <= 0 || width <= 0) {
        throw DimensionError("mask dimensions must be positive, got " + std::to_string(height) + "x" +
                             std::to_string(width));
    }
}

void require_same_size(const BinaryMask& a, const BinaryMask& b) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw DimensionError("mask size mismatch: " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                             " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
    }
}

// Appends runs while keeping the canonical alternating form.
class RunBuilder {
  public:
    void push(bool value, std::uint64_t length) {
        if (length == 0) {
            return;
        }
        if (runs_.empty()) {
            if (value) {
                runs_.push_back(0);
            }
            runs_.push_back(static_cast<std::uint32_t>(length));
            current_ = value;
            return;
        }
        if (value == current_) {
            runs_.back() += static_cast<std::uint32_t>(length);
        } else {
            runs_.push_back(static_cast<std::uint32_t>(length));
            current_ = value;
        }
    }

    std::vector<std::uint32_t> take() { return std::move(runs_); }

  private:
    std::vector<std::uint32_t> runs_;
    bool current_ = false;
};

// Walks two run sequences in lockstep and emits op(a, b) per stretch.
template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, Op op) {
    require_same_size(a, b);
    const auto& ra = a.runs();
    const auto& rb = b.runs();
    RunBuilder out;
    std::size_t ia = 0;
    std::size_t ib = 0;
    std::uint64_t left_a = ra[0];
    std::uint64_t left_b = rb[0];
    bool va = false;
    bool vb = false;
    std::uint64_t remaining = a.pixel_count();
    while (remaining > 0) {
        while (left_a == 0) {
            left_a = ra[++ia];
            va = !va;
        }
        while (left_b == 0) {
            left_b = rb[++ib];
            vb = !vb;
        }
        const std::uint64_t step = std::min(left_a, left_b);
        out.push(op(va, vb), step);
        left_a -= step;
        left_b -= step;
        remaining -= step;
    }
    return BinaryMask(a.height(), a.width(), out.take());
}

bool boxes_disjoint(const BinaryMask& a, const BinaryMask& b) {
    return !a.bbox() || !b.bbox() || !a.bbox()->intersects(*b.bbox());
}

} // namespace

Bitmap::Bitmap(int h, int w, bool value)
    : height(h), width(w),
      bits(static_cast<std::size_t>(std::max(h, 0)) * static_cast<std::size_t>(std::max(w, 0)), value ? 1 : 0) {}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint32_t> runs)
    : height_(height), width_(width), runs_(std::move(runs)) {
    require_positive(height, width);
    if (runs_.empty()) {
        throw CorruptMaskError("mask has no runs");
    }
    std::uint64_t total = 0;
    std::uint64_t position = 0;
    int row_min = height;
    int col_min = width;
    int row_max = -1;
    int col_max = -1;
    for (std::size_t i = 0; i < runs_.size(); ++i) {
        const std::uint64_t length = runs_[i];
        if (i > 0 && length == 0) {
            throw CorruptMaskError("zero-length run at position " + std::to_string(i));
        }
        if (i % 2 == 1) {
            area_ += length;
            const std::uint64_t first = position;
            const std::uint64_t last = position + length - 1;
            const auto w = static_cast<std::uint64_t>(width);
            const int r0 = static_cast<int>(first / w);
            const int r1 = static_cast<int>(std::min<std::uint64_t>(last / w, static_cast<std::uint64_t>(height)));
            row_min = std::min(row_min, r0);
            row_max = std::max(row_max, r1);
            if (r0 == r1) {
                col_min = std::min(col_min, static_cast<int>(first % w));
                col_max = std::max(col_max, static_cast<int>(last % w));
            } else {
                col_min = 0;
                col_max = width - 1;
            }
        }
        position += length;
        total += length;
    }
    if (total != pixel_count()) {
        throw CorruptMaskError("run lengths sum to " + std::to_string(total) + ", expected " +
                               std::to_string(pixel_count()));
    }
    if (area_ > 0) {
        bbox_ = Box{row_min, col_min, row_max, col_max};
    }
}

BinaryMask BinaryMask::empty(int height, int width) {
    require_positive(height, width);
    return BinaryMask(height, width, {static_cast<std::uint32_t>(static_cast<std::uint64_t>(height) * width)});
}

BinaryMask BinaryMask::full(int height, int width) {
    require_positive(height, width);
    return BinaryMask(height, width, {0, static_cast<std::uint32_t>(static_cast<std::uint64_t>(height) * width)});
}

BinaryMask BinaryMask::from_sorted_indices(int height, int width, std::span<const std::uint64_t> indices) {
    require_positive(height, width);
    const std::uint64_t total = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
    RunBuilder out;
    std::uint64_t cursor = 0;
    for (std::size_t i = 0; i < indices.size();) {
        const std::uint64_t start = indices[i];
        if (start < cursor || start >= total) {
            throw CorruptMaskError("pixel indices must be strictly increasing and in range");
        }
        std::size_t j = i + 1;
        while (j < indices.size() && indices[j] == indices[j - 1] + 1) {
            ++j;
        }
        out.push(false, start - cursor);
        out.push(true, j - i);
        cursor = start + (j - i);
        i = j;
    }
    if (cursor > total) {
        throw CorruptMaskError("pixel index out of range");
    }
    out.push(false, total - cursor);
    return BinaryMask(height, width, out.take());
}

bool BinaryMask::contains(int row, int col) const {
    if (row < 0 || col < 0 || row >= height_ || col >= width_ || !bbox_) {
        return false;
    }
    const std::uint64_t target = static_cast<std::uint64_t>(row) * static_cast<std::uint64_t>(width_) + col;
    std::uint64_t position = 0;
    for (std::size_t i = 0; i < runs_.size(); ++i) {
        position += runs_[i];
        if (target < position) {
            return i % 2 == 1;
        }
    }
    return false;
}

const char* level_name(Level level) {
    switch (level) {
    case Level::object:
        return "object";
    case Level::part:
        return "part";
    case Level::subpart:
        return "subpart";
    case Level::best:
        return "best";
    }
    return "object";
}

Level parse_level(const std::string& name) {
    if (name == "object") {
        return Level::object;
    }
    if (name == "part") {
        return Level::part;
    }
    if (name == "subpart") {
        return Level::subpart;
    }
    if (name == "best") {
        return Level::best;
    }
    throw ValidationError("unknown mask level '" + name + "'");
}

void validate(const ScoredMask& mask) {
    if (!(mask.score >= 0.0 && mask.score <= 1.0)) {
        throw ValidationError("mask score " + std::to_string(mask.score) + " outside [0,1]");
    }
}

BinaryMask encode(const Bitmap& bitmap) {
    require_positive(bitmap.height, bitmap.width);
    if (bitmap.bits.size() != static_cast<std::size_t>(bitmap.height) * bitmap.width) {
        throw DimensionError("bitmap storage does not match its dimensions");
    }
    RunBuilder out;
    bool current = false;
    std::uint64_t count = 0;
    for (const auto bit : bitmap.bits) {
        const bool value = bit != 0;
        if (value != current) {
            out.push(current, count);
            current = value;
            count = 0;
        }
        ++count;
    }
    out.push(current, count);
    return BinaryMask(bitmap.height, bitmap.width, out.take());
}

Bitmap decode(const BinaryMask& mask) {
    require_positive(mask.height(), mask.width());
    std::uint64_t total = 0;
    for (const auto run : mask.runs()) {
        total += run;
    }
    if (total != mask.pixel_count()) {
        throw CorruptMaskError("run lengths do not cover the mask");
    }
    Bitmap bitmap(mask.height(), mask.width());
    std::size_t position = 0;
    bool value = false;
    for (const auto run : mask.runs()) {
        if (value) {
            std::fill_n(bitmap.bits.begin() + static_cast<std::ptrdiff_t>(position), run, std::uint8_t{1});
        }
        position += run;
        value = !value;
    }
    return bitmap;
}

std::uint64_t intersection_area(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b);
    if (boxes_disjoint(a, b)) {
        return 0;
    }
    const auto& ra = a.runs();
    const auto& rb = b.runs();
    std::size_t ia = 0;
    std::size_t ib = 0;
    std::uint64_t left_a = ra[0];
    std::uint64_t left_b = rb[0];
    bool va = false;
    bool vb = false;
    std::uint64_t overlap = 0;
    // Stop once either sequence is exhausted; the tail cannot contribute.
    while (true) {
        while (left_a == 0) {
            if (++ia == ra.size()) {
                return overlap;
            }
            left_a = ra[ia];
            va = !va;
        }
        while (left_b == 0) {
            if (++ib == rb.size()) {
                return overlap;
            }
            left_b = rb[ib];
            vb = !vb;
        }
        const std::uint64_t step = std::min(left_a, left_b);
        if (va && vb) {
            overlap += step;
        }
        left_a -= step;
        left_b -= step;
    }
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    const std::uint64_t inter = intersection_area(a, b);
    const std::uint64_t uni = a.area() + b.area() - inter;
    if (uni == 0) {
        return 0.0;
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryMask intersect(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b);
    if (boxes_disjoint(a, b)) {
        return BinaryMask::empty(a.height(), a.width());
    }
    return combine(a, b, [](bool x, bool y) { return x && y; });
}

BinaryMask unite(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b);
    if (b.is_empty()) {
        return a;
    }
    if (a.is_empty()) {
        return b;
    }
    return combine(a, b, [](bool x, bool y) { return x || y; });
}

BinaryMask subtract(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b);
    if (boxes_disjoint(a, b)) {
        return a;
    }
    return combine(a, b, [](bool x, bool y) { return x && !y; });
}

BinaryMask complement(const BinaryMask& mask) {
    auto runs = mask.runs();
    if (runs.front() == 0) {
        runs.erase(runs.begin());
    } else {
        runs.insert(runs.begin(), 0);
    }
    return BinaryMask(mask.height(), mask.width(), std::move(runs));
}

Point2 centroid(const BinaryMask& mask) {
    if (mask.is_empty()) {
        throw EmptyMaskError("centroid of an empty mask");
    }
    const auto w = static_cast<std::uint64_t>(mask.width());
    double row_sum = 0.0;
    double col_sum = 0.0;
    std::uint64_t position = 0;
    bool value = false;
    for (const auto run : mask.runs()) {
        if (value) {
            std::uint64_t start = position;
            const std::uint64_t end = position + run;
            while (start < end) {
                const std::uint64_t row = start / w;
                const std::uint64_t row_end = std::min(end, (row + 1) * w);
                const auto c0 = static_cast<double>(start - row * w);
                const auto c1 = static_cast<double>(row_end - 1 - row * w);
                const auto n = static_cast<double>(row_end - start);
                row_sum += static_cast<double>(row) * n;
                col_sum += (c0 + c1) * n / 2.0;
                start = row_end;
            }
        }
        position += run;
        value = !value;
    }
    const auto area = static_cast<double>(mask.area());
    return {row_sum / area, col_sum / area};
}

std::vector<BinaryMask> connected_components(const BinaryMask& mask, int connectivity) {
    if (connectivity != 4 && connectivity != 8) {
        throw ValidationError("connectivity must be 4 or 8");
    }
    std::vector<BinaryMask> components;
    if (mask.is_empty()) {
        return components;
    }
    const Bitmap bitmap = decode(mask);
    const int h = bitmap.height;
    const int w = bitmap.width;
    std::vector<std::uint8_t> seen(bitmap.bits.size(), 0);
    std::vector<std::uint64_t> stack;
    std::vector<std::uint64_t> pixels;
    static constexpr int kDr[8] = {-1, 1, 0, 0, -1, -1, 1, 1};
    static constexpr int kDc[8] = {0, 0, -1, 1, -1, 1, -1, 1};
    for (std::size_t start = 0; start < bitmap.bits.size(); ++start) {
        if (!bitmap.bits[start] || seen[start]) {
            continue;
        }
        pixels.clear();
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::uint64_t p = stack.back();
            stack.pop_back();
            pixels.push_back(p);
            const int r = static_cast<int>(p / static_cast<std::uint64_t>(w));
            const int c = static_cast<int>(p % static_cast<std::uint64_t>(w));
            for (int k = 0; k < connectivity; ++k) {
                const int nr = r + kDr[k];
                const int nc = c + kDc[k];
                if (nr < 0 || nc < 0 || nr >= h || nc >= w) {
                    continue;
                }
                const std::size_t q = bitmap.index(nr, nc);
                if (bitmap.bits[q] && !seen[q]) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            }
        }
        std::sort(pixels.begin(), pixels.end());
        components.push_back(BinaryMask::from_sorted_indices(h, w, pixels));
    }
    // Discovery order is by first pixel; re-sort on the bbox corner.
    std::stable_sort(components.begin(), components.end(), [](const BinaryMask& a, const BinaryMask& b) {
        const Box& ba = *a.bbox();
        const Box& bb = *b.bbox();
        if (ba.row_min != bb.row_min) {
            return ba.row_min < bb.row_min;
        }
        return ba.col_min < bb.col_min;
    });
    return components;
}

std::vector<std::size_t> score_order(std::span<const ScoredMask> masks) {
    std::vector<std::size_t> order(masks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (masks[a].score != masks[b].score) {
            return masks[a].score > masks[b].score;
        }
        const bool has_a = masks[a].prompt_id.has_value();
        const bool has_b = masks[b].prompt_id.has_value();
        if (has_a != has_b) {
            return has_a;
        }
        if (has_a && *masks[a].prompt_id != *masks[b].prompt_id) {
            return *masks[a].prompt_id < *masks[b].prompt_id;
        }
        return false;
    });
    return order;
}

std::vector<std::size_t> nms_indices(std::span<const ScoredMask> masks, double iou_threshold) {
    std::vector<std::size_t> kept;
    for (const std::size_t candidate : score_order(masks)) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return iou(masks[candidate].mask, masks[k].mask) > iou_threshold;
        });
        if (!suppressed) {
            kept.push_back(candidate);
        }
    }
    return kept;
}

std::vector<ScoredMask> nms(std::span<const ScoredMask> masks, double iou_threshold) {
    std::vector<ScoredMask> out;
    for (const std::size_t i : nms_indices(masks, iou_threshold)) {
        out.push_back(masks[i]);
    }
    return out;
}

} // namespace entity_refine
