#pragma once

#include "entity_refine/config.hpp"
#include "entity_refine/eval.hpp"
#include "entity_refine/pipeline.hpp"
#include "entity_refine/synthetic.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace entity_refine {

struct BenchOptions {
    int scenes = 50;
    std::uint64_t seed = 0;
    // Scene geometry; options.noise is the noise profile (its seed is replaced per scene).
    SceneOptions scene;
};

struct BenchRow {
    Ablation ablation;
    EvalResult result;
    std::size_t masks = 0;
};

/// Seed of scene `index` in a benchmark seeded with `seed`.
std::uint64_t scene_seed(std::uint64_t seed, int index);

/// The eight module on/off combinations, baseline first and the full pipeline last.
std::vector<Ablation> all_variants();

/// Parses "baseline", "full" or a '+'-joined subset of MMG, EMR, USR.
Ablation parse_variant(const std::string& name);

/// Runs every variant on the same seeded scenes and scores it against the
/// oracle's noiseless entities. Scenes are independent and may run in parallel;
/// results do not depend on the worker count.
std::vector<BenchRow> synth_bench(const BenchOptions& options, const PipelineConfig& config,
                                  std::span<const Ablation> variants);

std::string format_bench_table(std::span<const BenchRow> rows);

} // namespace entity_refine
