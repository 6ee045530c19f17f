#pragma once

#include "entity_refine/backend.hpp"
#include "entity_refine/entity_map.hpp"
#include "entity_refine/mmg.hpp"
#include "entity_refine/superpixel.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <vector>

namespace entity_refine {

struct GalleryEntry {
    ScoredMask object;
    ScoredMask best;
};

/// Fine-grid object and best-level masks keyed by prompt id.
struct MaskGallery {
    std::map<int, GalleryEntry> by_prompt;
    std::vector<ScoredMask> all_masks;

    bool empty() const { return by_prompt.empty(); }
};

/// Keys are the masks' prompt ids (list position when absent). Prompts whose
/// object or best mask is empty are left out. Throws ValidationError on a length mismatch.
MaskGallery build_gallery(std::span<const ScoredMask> object, std::span<const ScoredMask> best);

/// Guidance for one fine prompt: the object mask when the best mask
/// scores less than `tau` above it, the best mask otherwise.
const ScoredMask& guidance_for(const GalleryEntry& entry, double tau);

/// Most frequent guidance mask among the fine prompts whose pixel lies inside
/// `region` (ties: higher score, then lower prompt id). nullopt when no such prompt
/// has a gallery entry.
std::optional<ScoredMask> modal_guidance(const BinaryMask& region, const MaskGallery& gallery,
                                         std::span<const PointPrompt> prompts, double tau);

/// Resolves every pairwise overlap, walking masks in score order. Small overlaps
/// (relative to the larger mask, below delta) are cut from the larger mask;
/// otherwise the overlap goes wholly to whichever mask has the higher IoU with the
/// modal guidance mask. Output is pairwise disjoint, nonempty, in score order.
std::vector<ScoredMask> split_overlaps(std::span<const ScoredMask> masks, const MaskGallery& gallery,
                                       std::span<const PointPrompt> prompts, double delta, double tau);

/// Cosine similarity between feature vectors bilinearly sampled at superpixel centroids.
Eigen::MatrixXd centroid_similarity(const FeatureGrid& features, const SuperpixelMap& superpixels);

/// Feature-free fallback: cosine over (L/100, a/128, b/128, row/H, col/W) per superpixel.
Eigen::MatrixXd centroid_similarity_fallback(const SuperpixelMap& superpixels);

/// Cosine similarity of row vectors; zero vectors are similar only to themselves.
Eigen::MatrixXd cosine_similarity(const Eigen::MatrixXd& vectors);

/// Top-k centroid neighbour counts between masks, kept as raw counts so merges
/// can be folded in exactly.
class MaskAffinity {
  public:
    MaskAffinity(Eigen::MatrixXd counts, std::vector<int> centroids, int k, int height, int width);

    /// counts(i, j) / (|C_i| k); rows of masks without centroids are zero.
    Eigen::MatrixXd similarity() const;
    /// Folds mask b into mask a and drops b (later indices shift down by one).
    void merge(std::size_t a, std::size_t b);

    std::size_t size() const { return centroids_.size(); }
    int k() const { return k_; }
    int height() const { return height_; }
    int width() const { return width_; }
    const std::vector<int>& centroid_counts() const { return centroids_; }

  private:
    Eigen::MatrixXd counts_;
    std::vector<int> centroids_;
    int k_;
    int height_;
    int width_;
};

/// Superpixel centroids (rounded to the nearest pixel) are assigned to the mask
/// containing them; each centroid's k most similar other centroids vote for
/// the masks that own them.
MaskAffinity mask_affinity(std::span<const ScoredMask> masks, const SuperpixelMap& superpixels,
                           const Eigen::MatrixXd& centroid_sim, int k);

Eigen::MatrixXd adjacency_similarity(std::span<const ScoredMask> masks, const SuperpixelMap& superpixels,
                                     const Eigen::MatrixXd& centroid_sim, int k);

/// Number of gallery masks g with IoU(g, m) >= gamma.
std::size_t gallery_votes(const MaskGallery& gallery, const BinaryMask& m, double gamma);

/// The gallery backs merging a and b when the masks covering at least gamma of
/// both a and b are at least one and no fewer than the votes for a or for b
/// alone. A single stray gallery mask that happens to cover both cannot outvote
/// the many prompts that saw them apart.
bool gallery_supports(const MaskGallery& gallery, const BinaryMask& a, const BinaryMask& b, double gamma);

/// Repeatedly merges the most affine pair (max of both directions >= threshold)
/// that the gallery supports, until no pair qualifies.
EntityMap merge_similar(std::vector<ScoredMask> masks, MaskAffinity affinity, const MaskGallery& gallery,
                        double merge_threshold, double containment_gamma);

struct EmrParams {
    double delta = 0.05;
    double tau = 0.1;
    int top_k = 3;
    double merge_threshold = 0.5;
    double containment_gamma = 0.7;
};

/// Split-then-merge over `masks`, using the MMG fine grid as gallery. Falls back
/// to color features when `features` is absent.
EntityMap run_emr(std::span<const ScoredMask> masks, const MmgOutput& mmg, const std::optional<FeatureGrid>& features,
                  const EmrParams& params);

} // namespace entity_refine
