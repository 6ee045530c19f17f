#include "entity_refine/bench.hpp"

#include "entity_refine/error.hpp"
#include "entity_refine/parallel.hpp"

#include <algorithm>
#include <cstdio>

namespace entity_refine {

std::uint64_t scene_seed(std::uint64_t seed, int index) {
    // splitmix64 finaliser so neighbouring indices give unrelated scenes.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::vector<Ablation> all_variants() {
    std::vector<Ablation> out;
    for (int bits = 0; bits < 8; ++bits) {
        out.push_back(Ablation{(bits & 4) != 0, (bits & 2) != 0, (bits & 1) != 0});
    }
    // Order: baseline, then by number of enabled modules.
    std::stable_sort(out.begin(), out.end(), [](const Ablation& a, const Ablation& b) {
        return (a.mmg + a.emr + a.usr) < (b.mmg + b.emr + b.usr);
    });
    return out;
}

Ablation parse_variant(const std::string& name) {
    if (name == "baseline") {
        return Ablation{false, false, false};
    }
    if (name == "full") {
        return Ablation{};
    }
    Ablation a{false, false, false};
    std::size_t start = 0;
    while (start <= name.size()) {
        const auto end = std::min(name.find('+', start), name.size());
        const std::string part = name.substr(start, end - start);
        if (part == "MMG" || part == "mmg") {
            a.mmg = true;
        } else if (part == "EMR" || part == "emr") {
            a.emr = true;
        } else if (part == "USR" || part == "usr") {
            a.usr = true;
        } else {
            throw ValidationError("unknown pipeline variant '" + name + "'");
        }
        start = end + 1;
    }
    return a;
}

std::vector<BenchRow> synth_bench(const BenchOptions& options, const PipelineConfig& config,
                                  std::span<const Ablation> variants) {
    if (options.scenes < 1) {
        throw ValidationError("the benchmark needs at least one scene");
    }
    const auto n = static_cast<std::size_t>(options.scenes);
    std::vector<EntityMap> truths(n);
    // predictions[v][scene]
    std::vector<std::vector<EntityMap>> predictions(variants.size(), std::vector<EntityMap>(n));
    parallel_for(n, [&](std::size_t i) {
        const std::uint64_t s = scene_seed(options.seed, static_cast<int>(i));
        SceneOptions so = options.scene;
        so.noise.seed = s;
        const SceneSpec scene = random_scene(s, so);
        truths[i] = ground_truth(scene);
        OracleProvider oracle(scene);
        for (std::size_t v = 0; v < variants.size(); ++v) {
            predictions[v][i] = run_pipeline(oracle, oracle.image(), config, variants[v]).entities;
        }
    });
    std::vector<BenchRow> rows;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        BenchRow row;
        row.ablation = variants[v];
        row.result = average_precision(predictions[v], truths);
        for (const auto& m : predictions[v]) {
            row.masks += m.masks.size();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_bench_table(std::span<const BenchRow> rows) {
    std::string out = "MMG  EMR  USR  |   AP     AP50   AP75  | masks\n";
    out += "---------------+-----------------------+------\n";
    char line[128];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), " %s    %s    %s   | %6.2f %6.2f %6.2f | %zu\n", r.ablation.mmg ? "x" : " ",
                      r.ablation.emr ? "x" : " ", r.ablation.usr ? "x" : " ", 100.0 * r.result.ap,
                      100.0 * r.result.ap50, 100.0 * r.result.ap75, r.masks);
        out += line;
    }
    return out;
}

} // namespace entity_refine
