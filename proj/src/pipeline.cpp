#include "entity_refine/pipeline.hpp"

#include "entity_refine/emr.hpp"
#include "entity_refine/error.hpp"
#include "entity_refine/formats.hpp"
#include "entity_refine/mmg.hpp"
#include "entity_refine/providers.hpp"
#include "entity_refine/usr.hpp"

namespace entity_refine {

std::string Ablation::label() const {
    if (!mmg && !emr && !usr) {
        return "baseline";
    }
    std::string out;
    for (const auto& [on, name] : {std::pair{mmg, "MMG"}, std::pair{emr, "EMR"}, std::pair{usr, "USR"}}) {
        if (on) {
            out += out.empty() ? name : std::string("+") + name;
        }
    }
    return out;
}

PipelineResult run_pipeline(SegmenterProvider& provider, const Image& image, const PipelineConfig& config,
                            const Ablation& ablation) {
    validate(config);
    if (image.height != provider.height() || image.width != provider.width()) {
        throw DimensionError("image and provider sizes differ");
    }
    const MmgParams& p = config.mmg;
    MmgOutput mmg;
    mmg.coarse = drop_low_confidence(
        stratify(segment(provider, grid_prompts(image.height, image.width, p.grid_coarse)), p.grid_coarse),
        p.min_confidence);
    if (ablation.mmg || ablation.emr || ablation.usr) {
        mmg.superpixels = felzenszwalb(image, p.superpixels);
        mmg.density = density_map(mmg.superpixels);
    }

    std::vector<ScoredMask> generated;
    if (ablation.mmg) {
        mmg.object_refined = filter_object_level(mmg.coarse.object, mmg.coarse.best, p.theta_o, p.gamma_o);
        mmg.part_thinned = adaptive_nms(mmg.coarse.part, mmg.density, p.n_t);
        mmg.subpart_thinned = adaptive_nms(mmg.coarse.subpart, mmg.density, p.n_t);
        generated = mmg.object_refined;
    } else {
        generated = pooled_level_nms(mmg.coarse, p.theta_o);
        mmg.part_thinned = nonempty(mmg.coarse.part);
        mmg.subpart_thinned = nonempty(mmg.coarse.subpart);
    }

    PipelineResult result;
    EntityMap current{image.height, image.width, generated};
    result.stages.push_back({"generation", current});

    if (ablation.emr) {
        mmg.prompts_fine = grid_prompts(image.height, image.width, p.grid_fine);
        mmg.fine = drop_low_confidence(stratify(segment(provider, mmg.prompts_fine), p.grid_fine), p.min_confidence);
        const auto features = provider.embed();
        result.feature_fallback = !features.has_value();
        current = run_emr(generated, mmg, features, config.emr);
        result.stages.push_back({"emr", current});
    }
    if (ablation.usr) {
        UsrParams usr = config.usr;
        usr.min_confidence = p.min_confidence;
        current = run_usr(provider, mmg.superpixels, mmg.part_thinned, mmg.subpart_thinned, current, usr, &result.usr);
        result.stages.push_back({"usr", current});
    }
    result.entities = std::move(current);
    return result;
}

ProviderSession open_provider(const PipelineConfig& config, const std::optional<std::string>& scene_path,
                              const std::optional<std::string>& image_path) {
    ProviderSession session;
    const std::string& name = config.provider;
    if (name == "oracle") {
        SceneSpec scene;
        if (scene_path) {
            scene = read_scene_file(*scene_path);
        } else {
            SceneOptions options;
            options.noise.seed = config.seed;
            scene = random_scene(config.seed, options);
        }
        auto oracle = std::make_unique<OracleProvider>(scene);
        session.image = oracle->image();
        session.scene = std::move(scene);
        session.provider = std::move(oracle);
    } else if (name.rfind("dir:", 0) == 0) {
        auto dir = std::make_unique<DirectoryProvider>(name.substr(4));
        session.image = read_png(image_path.value_or(dir->image_path()));
        session.provider = std::move(dir);
    } else if (name.rfind("exec:", 0) == 0) {
        if (!image_path) {
            throw ValidationError("the external provider needs an input image");
        }
        session.image = read_png(*image_path);
        session.provider = std::make_unique<ExternalProcessProvider>(name.substr(5), *image_path);
    } else {
        throw ValidationError("unknown provider '" + name + "'");
    }
    if (session.image.height != session.provider->height() || session.image.width != session.provider->width()) {
        throw DimensionError("input image does not match the provider's image size");
    }
    return session;
}

} // namespace entity_refine
