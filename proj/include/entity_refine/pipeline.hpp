#pragma once

#include "entity_refine/config.hpp"
#include "entity_refine/entity_map.hpp"
#include "entity_refine/image.hpp"
#include "entity_refine/synthetic.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace entity_refine {

/// Which refinement modules run. A disabled module becomes a pass-through:
///  - no MMG: every level of the coarse grid pooled and thinned by plain NMS at
///    theta_o; USR sees the raw part/subpart masks;
///  - no EMR: split and merge skipped (the map may keep overlaps);
///  - no USR: the uncovered-region pass skipped.
struct Ablation {
    bool mmg = true;
    bool emr = true;
    bool usr = true;

    /// "MMG+EMR+USR", "baseline", "MMG+USR", ...
    std::string label() const;
};

struct StageMap {
    std::string name;
    EntityMap map;
};

struct PipelineResult {
    EntityMap entities;
    // Output of each stage that ran, in order ("generation", "emr", "usr").
    std::vector<StageMap> stages;
    bool feature_fallback = false;
    UsrReport usr;
};

PipelineResult run_pipeline(SegmenterProvider& provider, const Image& image, const PipelineConfig& config,
                            const Ablation& ablation = {});

/// A provider together with the image it is bound to.
struct ProviderSession {
    std::unique_ptr<SegmenterProvider> provider;
    Image image;
    std::optional<SceneSpec> scene;
};

/// Builds the provider named by config.provider. The oracle uses the scene file
/// when given, otherwise a random noiseless scene seeded by config.seed. The
/// external provider needs `image_path`. Throws BackendError / IoError / ValidationError.
ProviderSession open_provider(const PipelineConfig& config, const std::optional<std::string>& scene_path,
                              const std::optional<std::string>& image_path);

} // namespace entity_refine
