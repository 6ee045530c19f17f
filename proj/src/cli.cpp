#include "entity_refine/cli.hpp"

#include "entity_refine/bench.hpp"
#include "entity_refine/error.hpp"
#include "entity_refine/eval.hpp"
#include "entity_refine/formats.hpp"
#include "entity_refine/pipeline.hpp"
#include "entity_refine/providers.hpp"
#include "entity_refine/viz.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace entity_refine {

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
    std::string file;
    std::vector<std::string> sets;
};

void add_config_flags(CLI::App* app, ConfigFlags& flags) {
    app->add_option("--config", flags.file, "key = value config file");
    app->add_option("--set", flags.sets, "override one key (key=value), repeatable");
}

PipelineConfig load_config(const ConfigFlags& flags) {
    PipelineConfig config;
    if (!flags.file.empty()) {
        config = read_config_file(flags.file);
    }
    for (const auto& kv : flags.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("--set expects key=value, got '" + kv + "'");
        }
        set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return config;
}

// "out/pred.ndjson" + "emr" -> "out/pred.emr.ndjson"
std::string stage_path(const std::string& out, const std::string& stage) {
    fs::path p(out);
    const fs::path stem = p.parent_path() / p.stem();
    return stem.string() + "." + stage + ".ndjson";
}

std::string default_image_id(const PipelineConfig& config, const std::optional<std::string>& scene,
                             const std::optional<std::string>& image) {
    if (image) {
        return fs::path(*image).stem().string();
    }
    if (config.provider == "oracle") {
        return scene ? fs::path(*scene).stem().string() : "oracle-" + std::to_string(config.seed);
    }
    if (config.provider.rfind("dir:", 0) == 0) {
        return fs::path(config.provider.substr(4)).lexically_normal().filename().string();
    }
    return "image";
}

void print_result(std::ostream& out, const EvalResult& r, bool as_json) {
    if (as_json) {
        json per = json::array();
        for (const auto& [t, ap] : r.per_threshold) {
            per.push_back({{"iou", t}, {"ap", ap}});
        }
        out << json{{"ap", r.ap}, {"ap50", r.ap50}, {"ap75", r.ap75}, {"per_threshold", per}}.dump() << "\n";
        return;
    }
    out << std::fixed << std::setprecision(4);
    out << "AP    " << r.ap << "\nAP50  " << r.ap50 << "\nAP75  " << r.ap75 << "\n";
    for (const auto& [t, ap] : r.per_threshold) {
        out << "  @" << std::setprecision(2) << t << "  " << std::setprecision(4) << ap << "\n";
    }
}

struct RunFlags {
    ConfigFlags config;
    std::string provider;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> scene;
    std::optional<std::string> image;
    std::string out;
    bool dump_stages = false;
    bool no_mmg = false;
    bool no_emr = false;
    bool no_usr = false;
    std::string image_id;
    std::string record;
    std::string gt_out;
};

int do_run(const RunFlags& f, std::ostream& out, std::ostream& err) {
    PipelineConfig config = load_config(f.config);
    if (!f.provider.empty()) {
        config.provider = f.provider;
    }
    if (f.seed) {
        config.seed = *f.seed;
    }
    validate(config);
    if (f.scene && config.provider != "oracle") {
        throw ValidationError("--scene only applies to the oracle provider");
    }
    ProviderSession session = open_provider(config, f.scene, f.image);
    const Ablation ablation{!f.no_mmg, !f.no_emr, !f.no_usr};

    std::optional<RecordingProvider> recorder;
    SegmenterProvider* provider = session.provider.get();
    if (!f.record.empty()) {
        recorder.emplace(*session.provider);
        provider = &*recorder;
    }
    const PipelineResult result = run_pipeline(*provider, session.image, config, ablation);
    if (result.feature_fallback) {
        err << "note: provider has no feature encoder, using color/position features\n";
    }

    const std::string id = f.image_id.empty() ? default_image_id(config, f.scene, f.image) : f.image_id;
    write_entity_file(f.out, {ImageRecord{id, result.entities}}, true);
    if (f.dump_stages) {
        for (const auto& stage : result.stages) {
            write_entity_file(stage_path(f.out, stage.name), {ImageRecord{id, stage.map}}, true);
        }
    }
    if (!f.gt_out.empty()) {
        if (!session.scene) {
            throw ValidationError("--gt-out needs the oracle provider");
        }
        write_entity_file(f.gt_out, {ImageRecord{id, ground_truth(*session.scene)}}, false);
    }
    if (recorder) {
        std::vector<int> grids{config.mmg.grid_coarse};
        if (ablation.emr && config.mmg.grid_fine != config.mmg.grid_coarse) {
            grids.push_back(config.mmg.grid_fine);
        }
        recorder->write_directory(f.record, session.image, grids);
    }
    out << id << ": " << result.entities.masks.size() << " entities";
    if (ablation.usr) {
        out << " (usr: " << result.usr.regions << " regions, " << result.usr.accepted << " accepted)";
    }
    out << "\n";
    return kExitOk;
}

struct EvalFlags {
    std::string pred;
    std::string gt;
    bool json = false;
};

int do_eval(const EvalFlags& f, std::ostream& out, std::ostream& err) {
    const auto preds = read_entity_file(f.pred);
    const auto gts = read_entity_file(f.gt);
    std::map<std::string, const ImageRecord*> by_id;
    for (const auto& p : preds) {
        if (!by_id.emplace(p.image_id, &p).second) {
            throw ValidationError("duplicate image_id '" + p.image_id + "' in " + f.pred);
        }
    }
    std::vector<EntityMap> pred_maps;
    std::vector<EntityMap> gt_maps;
    for (const auto& g : gts) {
        gt_maps.push_back(g.map);
        const auto it = by_id.find(g.image_id);
        if (it == by_id.end()) {
            err << "warning: no prediction for image '" << g.image_id << "', counted as empty\n";
            pred_maps.push_back(EntityMap{g.map.height, g.map.width, {}});
            continue;
        }
        pred_maps.push_back(it->second->map);
        by_id.erase(it);
    }
    for (const auto& [id, record] : by_id) {
        err << "warning: prediction for unknown image '" << id << "' ignored\n";
    }
    print_result(out, average_precision(pred_maps, gt_maps), f.json);
    return kExitOk;
}

struct BenchFlags {
    ConfigFlags config;
    int scenes = 50;
    std::uint64_t seed = 0;
    int jitter = 2;
    double score_noise = 0.05;
    double dropout = 0.3;
    std::vector<std::string> variants;
    bool json = false;
};

int do_bench(const BenchFlags& f, std::ostream& out) {
    const PipelineConfig config = load_config(f.config);
    validate(config);
    if (f.scenes < 1) {
        throw ValidationError("--scenes must be at least 1");
    }
    BenchOptions options;
    options.scenes = f.scenes;
    options.seed = f.seed;
    options.scene.noise.boundary_jitter_px = f.jitter;
    options.scene.noise.score_noise_std = f.score_noise;
    options.scene.noise.dropout_prob = f.dropout;
    std::vector<Ablation> variants;
    for (const auto& v : f.variants) {
        variants.push_back(parse_variant(v));
    }
    if (variants.empty()) {
        variants = all_variants();
    }
    const auto rows = synth_bench(options, config, variants);
    if (f.json) {
        for (const auto& row : rows) {
            out << json{{"variant", row.ablation.label()},
                        {"ap", row.result.ap},
                        {"ap50", row.result.ap50},
                        {"ap75", row.result.ap75},
                        {"masks", row.masks}}
                       .dump()
                << "\n";
        }
    } else {
        out << format_bench_table(rows);
    }
    return kExitOk;
}

struct VizFlags {
    ConfigFlags config;
    std::string entities;
    std::string image;
    std::string out;
    std::string image_id;
    std::string superpixels;
};

int do_viz(const VizFlags& f, std::ostream& out) {
    const Image image = read_png(f.image);
    const auto records = read_entity_file(f.entities);
    const ImageRecord* chosen = nullptr;
    for (const auto& r : records) {
        if (f.image_id.empty() || r.image_id == f.image_id) {
            chosen = &r;
            break;
        }
    }
    if (chosen == nullptr) {
        throw ValidationError(f.image_id.empty() ? "no records in " + f.entities
                                                 : "no record for image '" + f.image_id + "'");
    }
    write_png(f.out, render_overlay(image, chosen->map));
    const fs::path p(f.out);
    const std::string labels = ((p.parent_path() / p.stem()).string()) + "_labels.png";
    write_png(labels, render_labels(chosen->map));
    if (!f.superpixels.empty()) {
        const PipelineConfig config = load_config(f.config);
        write_png(f.superpixels, render_superpixels(image, felzenszwalb(image, config.mmg.superpixels)));
    }
    out << "wrote " << f.out << " and " << labels << "\n";
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Training-free refinement of promptable-segmenter masks into entity maps"};
    app.name("entity-refine");
    app.require_subcommand(1);

    RunFlags run_flags;
    auto* run = app.add_subcommand("run", "run the pipeline on one image and write predictions");
    add_config_flags(run, run_flags.config);
    run->add_option("--provider", run_flags.provider, "oracle | dir:<path> | exec:<command>");
    run->add_option("--seed", run_flags.seed, "oracle scene seed");
    run->add_option("--scene", run_flags.scene, "oracle scene JSON file");
    run->add_option("--image", run_flags.image, "input PNG");
    run->add_option("--out", run_flags.out, "prediction ndjson")->required();
    run->add_flag("--dump-stages", run_flags.dump_stages, "also write <out stem>.<stage>.ndjson");
    run->add_flag("--no-mmg", run_flags.no_mmg);
    run->add_flag("--no-emr", run_flags.no_emr);
    run->add_flag("--no-usr", run_flags.no_usr);
    run->add_option("--image-id", run_flags.image_id);
    run->add_option("--record", run_flags.record, "export every answered prompt as a precomputed directory");
    run->add_option("--gt-out", run_flags.gt_out, "oracle ground truth ndjson");

    EvalFlags eval_flags;
    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    eval->add_option("--pred", eval_flags.pred)->required();
    eval->add_option("--gt", eval_flags.gt)->required();
    eval->add_flag("--json", eval_flags.json);

    BenchFlags bench_flags;
    auto* bench = app.add_subcommand("synth-bench", "ablation table on seeded synthetic scenes");
    add_config_flags(bench, bench_flags.config);
    bench->add_option("--scenes", bench_flags.scenes)->capture_default_str();
    bench->add_option("--seed", bench_flags.seed)->capture_default_str();
    bench->add_option("--jitter", bench_flags.jitter, "boundary jitter in pixels")->capture_default_str();
    bench->add_option("--score-noise", bench_flags.score_noise)->capture_default_str();
    bench->add_option("--dropout", bench_flags.dropout)->capture_default_str();
    bench->add_option("--variants", bench_flags.variants, "baseline, full or e.g. MMG+EMR")->delimiter(',');
    bench->add_flag("--json", bench_flags.json);

    VizFlags viz_flags;
    auto* viz = app.add_subcommand("viz", "color overlay and label map of an entity file");
    add_config_flags(viz, viz_flags.config);
    viz->add_option("--entities", viz_flags.entities)->required();
    viz->add_option("--image", viz_flags.image)->required();
    viz->add_option("--out", viz_flags.out)->required();
    viz->add_option("--image-id", viz_flags.image_id);
    viz->add_option("--superpixels", viz_flags.superpixels, "also write a superpixel debug PNG");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed()) {
            return do_run(run_flags, out, err);
        }
        if (eval->parsed()) {
            return do_eval(eval_flags, out, err);
        }
        if (bench->parsed()) {
            return do_bench(bench_flags, out);
        }
        return do_viz(viz_flags, out);
    } catch (const BackendError& e) {
        err << "provider error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

} // namespace entity_refine
