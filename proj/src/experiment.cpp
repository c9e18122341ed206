// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/experiment.hpp"

#include "json_util.hpp"
#include "occfield/errors.hpp"
#include "occfield/rendering.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace occ {

using jsonutil::json;

std::vector<SceneSpec> SceneSource::load() const {
    std::vector<SceneSpec> out;
    out.reserve(files.size() + seeds.size());
    for (const auto& f : files) {
        out.push_back(load_scene(f));
    }
    for (const auto s : seeds) {
        out.push_back(generate_scene(s, generator));
    }
    return out;
}

SceneSource SceneSource::from_json(const json& j, const std::filesystem::path& base_dir, const std::string& context) {
    jsonutil::reject_unknown_keys(j, {"files", "seeds", "seed_range", "generator"}, context);
    SceneSource s;
    for (const auto& f : jsonutil::get_or(j, "files", std::vector<std::string>{}, context)) {
        const std::filesystem::path p(f);
        s.files.push_back(p.is_absolute() ? p : base_dir / p);
    }
    s.seeds = jsonutil::get_or(j, "seeds", std::vector<std::uint64_t>{}, context);
    if (j.contains("seed_range")) {
        const auto range = jsonutil::get_required<std::vector<std::uint64_t>>(j, "seed_range", context);
        if (range.size() != 2) {
            throw ConfigError(context + ".seed_range: expected [first, count]");
        }
        for (std::uint64_t i = 0; i < range[1]; ++i) {
            s.seeds.push_back(range[0] + i);
        }
    }
    if (j.contains("generator")) {
        s.generator = SceneGenConfig::from_json(j.at("generator"));
    }
    return s;
}

json SceneSource::to_json() const {
    std::vector<std::string> names;
    for (const auto& f : files) {
        names.push_back(std::filesystem::absolute(f).lexically_normal().string());
    }
    return json{{"files", names}, {"seeds", seeds}, {"generator", generator.to_json()}};
}

EvalConfig EvalConfig::from_json(const json& j) {
    const std::string ctx = "eval";
    jsonutil::reject_unknown_keys(j, {"ray_step", "max_range", "weight_floor", "voxel_size", "voxel_samples",
                                      "voxel_threshold", "voxel_seed", "visibility_oversample"},
                                  ctx);
    EvalConfig c;
    c.pointmap.render.step = jsonutil::get_or(j, "ray_step", c.pointmap.render.step, ctx);
    c.pointmap.render.max_range = jsonutil::get_or(j, "max_range", c.pointmap.render.max_range, ctx);
    c.pointmap.weight_floor = jsonutil::get_or(j, "weight_floor", c.pointmap.weight_floor, ctx);
    if (j.contains("voxel_size")) {
        const auto& v = j.at("voxel_size");
        c.occupancy.voxel_size = v.is_number() ? Vec3::Constant(v.get<double>()) : jsonutil::vec3_from(v, ctx + ".voxel_size");
    }
    c.occupancy.voxel.samples = jsonutil::get_or(j, "voxel_samples", c.occupancy.voxel.samples, ctx);
    c.occupancy.voxel.threshold = jsonutil::get_or(j, "voxel_threshold", c.occupancy.voxel.threshold, ctx);
    c.occupancy.voxel.seed = jsonutil::get_or(j, "voxel_seed", c.occupancy.voxel.seed, ctx);
    c.occupancy.visibility_oversample =
        jsonutil::get_or(j, "visibility_oversample", c.occupancy.visibility_oversample, ctx);
    try {
        c.pointmap.render.validate();
        c.occupancy.voxel.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(ctx + ": " + e.what());
    }
    if (!(c.occupancy.voxel_size.minCoeff() > 0.0) || c.occupancy.visibility_oversample < 1) {
        throw ConfigError(ctx + ": voxel_size must be positive and visibility_oversample >= 1");
    }
    return c;
}

json EvalConfig::to_json() const {
    return json{{"ray_step", pointmap.render.step},
                {"max_range", pointmap.render.max_range},
                {"weight_floor", pointmap.weight_floor},
                {"voxel_size", jsonutil::vec3_to(occupancy.voxel_size)},
                {"voxel_samples", occupancy.voxel.samples},
                {"voxel_threshold", occupancy.voxel.threshold},
                {"voxel_seed", occupancy.voxel.seed},
                {"visibility_oversample", occupancy.visibility_oversample}};
}

void RunConfig::set_seed(std::uint64_t seed) {
    model.seed = seed;
    train.seed = seed;
}

namespace {

void check_scene_fits(const SceneSpec& scene, const ModelConfig& model, const std::string& context) {
    if (!(scene.roi == model.roi)) {
        throw ConfigError(context + ": scene ROI differs from model.roi");
    }
    if (static_cast<int>(scene.rig.cameras.size()) != model.cameras) {
        throw ConfigError(context + ": scene has " + std::to_string(scene.rig.cameras.size()) +
                          " cameras, model.cameras is " + std::to_string(model.cameras));
    }
    for (const auto& cam : scene.rig.cameras) {
        if (cam.width != model.image_size || cam.height != model.image_size) {
            throw ConfigError(context + ": camera '" + cam.name + "' raster differs from model.image_size");
        }
    }
}

} // namespace

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    jsonutil::reject_unknown_keys(j, {"model", "train", "scenes", "eval_scenes", "eval"}, "config");
    RunConfig c;
    if (j.contains("model")) {
        c.model = ModelConfig::from_json(j.at("model"));
    }
    if (j.contains("train")) {
        c.train = TrainConfig::from_json(j.at("train"));
    }
    if (!j.contains("scenes")) {
        throw ConfigError("config: missing required key 'scenes'");
    }
    c.scenes = SceneSource::from_json(j.at("scenes"), base_dir, "scenes");
    if (c.scenes.empty()) {
        throw ConfigError("scenes: lists no scene");
    }
    if (j.contains("eval_scenes")) {
        c.eval_scenes = SceneSource::from_json(j.at("eval_scenes"), base_dir, "eval_scenes");
    }
    if (j.contains("eval")) {
        c.eval = EvalConfig::from_json(j.at("eval"));
    }
    // Generated scenes can be checked without building them.
    for (const auto* src : {&c.scenes, &c.eval_scenes}) {
        if (!src->seeds.empty()) {
            check_scene_fits(generate_scene(src->seeds.front(), src->generator), c.model,
                             src == &c.scenes ? "scenes.generator" : "eval_scenes.generator");
        }
    }
    return c;
}

json RunConfig::to_json() const {
    json j{{"model", model.to_json()}, {"train", train.to_json()}, {"scenes", scenes.to_json()}, {"eval", eval.to_json()}};
    if (!eval_scenes.empty()) {
        j["eval_scenes"] = eval_scenes.to_json();
    }
    return j;
}

std::vector<Ray> lidar_beam_rays(const LidarConfig& lidar) {
    std::vector<Ray> rays;
    rays.reserve(lidar.elevations_deg.size() * static_cast<std::size_t>(lidar.azimuth_count));
    for (int e = 0; e < static_cast<int>(lidar.elevations_deg.size()); ++e) {
        for (int a = 0; a < lidar.azimuth_count; ++a) {
            rays.push_back(Ray::make(lidar.origin, lidar_direction(lidar, e, a)));
        }
    }
    return rays;
}

SceneScores evaluate_scene(std::shared_ptr<const OccupancyModel> model, const SceneSpec& scene,
                           const EvalConfig& cfg) {
    check_scene_fits(scene, model->config(), "evaluate_scene");
    const auto handle = freeze(model, render_views(scene));
    const auto field = field_occupancy(handle);
    const auto rays = rays_from_cloud(simulate_lidar(scene));
    const auto& roi = model->config().roi;
    const auto pm = eval_pointmap(field, scene, rays, roi, cfg.pointmap);
    const auto oc = eval_occupancy(field, scene, roi, cfg.occupancy);
    return SceneScores{pm.metrics.at("absrel"), pm.metrics.at("chamfer"), oc.metrics.at("f1"), oc.metrics.at("iou")};
}

SceneScores evaluate_scenes(std::shared_ptr<const OccupancyModel> model, std::span<const SceneSpec> scenes,
                            const EvalConfig& cfg) {
    if (scenes.empty()) {
        throw ContractError("evaluate_scenes: no scenes");
    }
    SceneScores mean;
    for (const auto& s : scenes) {
        const auto r = evaluate_scene(model, s, cfg);
        mean.absrel += r.absrel;
        mean.chamfer += r.chamfer;
        mean.f1 += r.f1;
        mean.iou += r.iou;
    }
    const double n = static_cast<double>(scenes.size());
    mean.absrel /= n;
    mean.chamfer /= n;
    mean.f1 /= n;
    mean.iou /= n;
    return mean;
}

std::vector<AblationRow> ablate_sampling(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
    const auto specs = cfg.scenes.load();
    std::vector<TrainingScene> scenes;
    scenes.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        check_scene_fits(specs[i], cfg.model, "scenes[" + std::to_string(i) + "]");
        scenes.push_back(prepare_scene(specs[i]));
    }
    const auto eval_specs = cfg.eval_scenes.empty() ? specs : cfg.eval_scenes.load();

    std::vector<AblationRow> rows;
    for (const auto strategy :
         {SamplingStrategy::random, SamplingStrategy::stratified, SamplingStrategy::stratified_symmetric}) {
        TrainConfig tc = cfg.train;
        tc.strategy = strategy;
        TrainOptions opt;
        if (out_dir) {
            opt.out_dir = *out_dir / to_string(strategy);
        }
        const auto result = train(scenes, tc, cfg.model, opt);
        AblationRow row;
        row.strategy = strategy;
        const auto tail = std::min<std::size_t>(100, result.history.size());
        for (auto i = result.history.size() - tail; i < result.history.size(); ++i) {
            row.final_loss += result.history[i].loss;
        }
        row.final_loss /= static_cast<double>(tail);
        row.scores = evaluate_scenes(result.model, eval_specs, cfg.eval);
        rows.push_back(row);
    }
    return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << "strategy,final_loss,absrel,chamfer,f1,iou\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", to_string(r.strategy).c_str(), r.final_loss,
                      r.scores.absrel, r.scores.chamfer, r.scores.f1, r.scores.iou);
        out << buf;
    }
    if (!out) {
        throw IoError("write failed on '" + path.string() + "'");
    }
}

} // namespace occ
