#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace entity_refine {

// Inclusive pixel bounds.
struct Box {
    int row_min = 0;
    int col_min = 0;
    int row_max = 0;
    int col_max = 0;

    bool intersects(const Box& other) const {
        return row_min <= other.row_max && other.row_min <= row_max && col_min <= other.col_max &&
               other.col_min <= col_max;
    }

    friend bool operator==(const Box&, const Box&) = default;
};

// Dense row-major 0/1 raster. Used for encoding, decoding and as a brute-force reference.
struct Bitmap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    Bitmap() = default;
    Bitmap(int h, int w, bool value = false);

    bool at(int row, int col) const { return bits[index(row, col)] != 0; }
    void set(int row, int col, bool value = true) { bits[index(row, col)] = value ? 1 : 0; }
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col);
    }

    friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

/// Run-length encoded binary raster.
///
/// Runs cover the pixels in row-major order and alternate background/foreground,
/// starting with a background run that may be zero. Every other run is positive,
/// so the encoding of a raster is unique. Area and bounding box are computed once
/// at construction; the object is immutable afterwards.
class BinaryMask {
  public:
    BinaryMask() = default;

    /// Validates `runs` against the declared size and canonical form.
    /// Throws DimensionError for non-positive sizes and CorruptMaskError otherwise.
    BinaryMask(int height, int width, std::vector<std::uint32_t> runs);

    static BinaryMask empty(int height, int width);
    static BinaryMask full(int height, int width);
    /// Builds a mask from strictly increasing row-major pixel indices.
    static BinaryMask from_sorted_indices(int height, int width, std::span<const std::uint64_t> indices);

    int height() const { return height_; }
    int width() const { return width_; }
    std::uint64_t pixel_count() const {
        return static_cast<std::uint64_t>(height_) * static_cast<std::uint64_t>(width_);
    }
    const std::vector<std::uint32_t>& runs() const { return runs_; }
    std::uint64_t area() const { return area_; }
    bool is_empty() const { return area_ == 0; }
    const std::optional<Box>& bbox() const { return bbox_; }

    /// Linear scan; prefer decode() when probing many pixels.
    bool contains(int row, int col) const;

    friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.runs_ == b.runs_;
    }

  private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint32_t> runs_;
    std::uint64_t area_ = 0;
    std::optional<Box> bbox_;
};

enum class Level { object, part, subpart, best };

const char* level_name(Level level);
/// Throws ValidationError for unknown names.
Level parse_level(const std::string& name);

struct ScoredMask {
    BinaryMask mask;
    double score = 0.0;
    Level level = Level::object;
    std::optional<int> prompt_id;
};

/// Throws ValidationError when the score is outside [0,1] or not finite.
void validate(const ScoredMask& mask);

BinaryMask encode(const Bitmap& bitmap);
Bitmap decode(const BinaryMask& mask);

// Pairwise operations require equal dimensions (DimensionError otherwise) and
// short-circuit when the bounding boxes are disjoint.
std::uint64_t intersection_area(const BinaryMask& a, const BinaryMask& b);
/// Zero when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);
BinaryMask intersect(const BinaryMask& a, const BinaryMask& b);
BinaryMask unite(const BinaryMask& a, const BinaryMask& b);
BinaryMask subtract(const BinaryMask& a, const BinaryMask& b);
BinaryMask complement(const BinaryMask& mask);

struct Point2 {
    double row = 0.0;
    double col = 0.0;
};

/// Mean foreground pixel index. Throws EmptyMaskError on an empty mask.
Point2 centroid(const BinaryMask& mask);

/// Components ordered by (row_min, col_min) of their bounding box, then by first pixel.
/// `connectivity` must be 4 or 8.
std::vector<BinaryMask> connected_components(const BinaryMask& mask, int connectivity);

/// Descending score, ascending prompt id (missing ids last), ascending input index.
std::vector<std::size_t> score_order(std::span<const ScoredMask> masks);

/// Greedy suppression: walk score_order and keep a mask iff its IoU with every
/// kept mask is <= iou_threshold. Returns indices into `masks` in kept order.
std::vector<std::size_t> nms_indices(std::span<const ScoredMask> masks, double iou_threshold);
std::vector<ScoredMask> nms(std::span<const ScoredMask> masks, double iou_threshold);

} // namespace entity_refine
