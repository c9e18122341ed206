// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. With no arguments every
// criterion runs; otherwise only the listed numbers. Exit status is 1 when
// any selected criterion fails.

#include "gradcheck.hpp"
#include "occfield/cli.hpp"
#include "occfield/errors.hpp"
#include "occfield/evaluation.hpp"
#include "occfield/experiment.hpp"
#include "occfield/rendering.hpp"
#include "occfield/rng.hpp"
#include "occfield/runtime.hpp"
#include "occfield/simulator.hpp"
#include "occfield/supervision.hpp"
#include "occfield/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace occ;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path work_dir(const std::string& name) {
    const char* env = std::getenv("OCCFIELD_ACCEPTANCE_DIR");
    const fs::path base = env && *env ? fs::path(env) : fs::temp_directory_path() / "occfield_acceptance";
    const fs::path dir = base / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void progress(const std::string& msg) {
    std::fprintf(stderr, "  .. %s\n", msg.c_str());
}

// 1. Central finite differences for every op and the tiny model.
Outcome gradients() {
    const auto t0 = Clock::now();
    double worst_op = 0.0;
    std::string worst_name;
    std::size_t cases = 0;
    for (const auto& op : occ::testing::op_cases()) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const auto r = op.run(seed);
            ++cases;
            if (r.max_rel_error > worst_op) {
                worst_op = r.max_rel_error;
                worst_name = op.name + " seed " + std::to_string(seed) + " " + r.worst;
            }
        }
    }
    double worst_model = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        worst_model = std::max(worst_model, occ::testing::tiny_model_check(seed).max_rel_error);
        ++cases;
    }
    const double secs = seconds_since(t0);
    const bool pass = worst_op < 1e-4 && worst_model < 1e-3 && cases >= 100 && secs < 120.0;
    return {pass, fmt("%zu cases, worst op rel err %.2e (%s) < 1e-4, tiny model %.2e < 1e-3, %.1f s < 120 s",
                      cases, worst_op, worst_name.c_str(), worst_model, secs)};
}

// 2. Oracle-field ray rendering against analytic casting.
Outcome rendering_oracle() {
    const auto t0 = Clock::now();
    RayRenderConfig cfg;
    std::int64_t rays_checked = 0;
    std::int64_t grazing = 0;
    std::int64_t rays_total = 0;
    double worst = 0.0;
    bool monotone = true;
    bool bounded = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto scene = generate_scene(1000 + seed);
        const auto field = oracle_occupancy(scene);
        for (const auto& ray : rays_from_cloud(simulate_lidar(scene))) {
            const double d = *ray.hit_distance;
            if (!scene.roi.contains(ray.at(d))) {
                continue;
            }
            ++rays_total;
            const auto clip = clip_ray_to_roi(ray, scene.roi);
            const auto r = render_ray_depth(field, ray, cfg, scene.roi);
            if (!clip || !r) {
                return {false, "ray with an in-ROI return missed the ROI"};
            }
            // Full sample sequence for the per-ray invariants.
            std::vector<double> t;
            std::vector<Vec3> pts;
            const double t_end = std::min(clip->exit, cfg.max_range);
            for (std::int64_t i = 0; clip->enter + static_cast<double>(i) * cfg.step <= t_end; ++i) {
                t.push_back(clip->enter + static_cast<double>(i) * cfg.step);
                pts.push_back(ray.at(t.back()));
            }
            const auto integ = integrate_samples(t, field(pts));
            double sum = 0.0;
            for (std::size_t i = 0; i < integ.weights.size(); ++i) {
                sum += integ.weights[i];
                if (i > 0 && integ.transmittance[i] > integ.transmittance[i - 1]) {
                    monotone = false;
                }
            }
            if (sum > 1.0 + 1e-12) {
                bounded = false;
            }
            // The step grid resolves the surface when the first sample at or
            // past d lies inside the solid; thinner slivers are grazing hits.
            const double t_first = clip->enter + std::ceil((d - clip->enter) / cfg.step - 1e-9) * cfg.step;
            if (!occupied(scene, ray.at(t_first))) {
                ++grazing;
                continue;
            }
            ++rays_checked;
            worst = std::max(worst, std::abs(r->depth - d));
        }
    }
    const double secs = seconds_since(t0);
    const double grazing_share = static_cast<double>(grazing) / static_cast<double>(std::max<std::int64_t>(1, rays_total));
    const bool pass = rays_checked >= 10000 && worst <= cfg.step && monotone && bounded && grazing_share < 0.01 &&
                      secs < 60.0;
    return {pass, fmt("%lld rays / 20 scenes, max |depth - cast| %.4f m <= %.2f, grazing %.3f%% < 1%%, "
                      "transmittance monotone %s, sum w <= 1 %s, %.1f s < 60 s",
                      static_cast<long long>(rays_checked), worst, cfg.step, 100.0 * grazing_share,
                      monotone ? "yes" : "NO", bounded ? "yes" : "NO", secs)};
}

// 3. Labels agree with the simulator; bins and intervals hold exactly.
Outcome supervision_soundness() {
    const auto t0 = Clock::now();
    double neg_agreement = 1.0;
    double pos_agreement = 1.0;
    std::int64_t bad_bins = 0;
    std::int64_t rays_binned = 0;
    std::int64_t bad_intervals = 0;
    std::int64_t symmetric_seen = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto scene = generate_scene(2000 + seed);
        const auto rays = rays_from_cloud(simulate_lidar(scene));
        for (const auto strategy : {SamplingStrategy::stratified, SamplingStrategy::stratified_symmetric}) {
            auto cfg = SamplingConfig::desk();
            cfg.strategy = strategy;
            cfg.seed = seed;
            const auto qs = sample_queries(rays, cfg, scene.roi);
            const auto a = validate_against_oracle(qs, scene);
            neg_agreement = std::min(neg_agreement, a.negatives);
            pos_agreement = std::min(pos_agreement, a.positives);

            std::map<std::uint32_t, std::vector<int>> bins;
            for (std::size_t i = 0; i < qs.size(); ++i) {
                const auto& ray = rays[qs.ray_index[i]];
                const double d = *ray.hit_distance;
                const double t = qs.t[i];
                switch (qs.kind[i]) {
                case SampleKind::positive:
                    bad_intervals += !(t >= d && t < d + 0.1) || qs.labels[i] != 1;
                    break;
                case SampleKind::symmetric:
                    ++symmetric_seen;
                    bad_intervals += !(t >= d - 0.1 && t < d) || qs.labels[i] != 0;
                    break;
                case SampleKind::free: {
                    bad_intervals += !(t >= 0.0 && t < d) || qs.labels[i] != 0;
                    const auto seg = free_segment(ray, scene.roi);
                    const auto edges = bin_edges(seg.enter, seg.exit, 5);
                    auto& counts = bins[qs.ray_index[i]];
                    counts.resize(5, 0);
                    const auto b = std::upper_bound(edges.begin(), edges.end(), t) - edges.begin() - 1;
                    if (b < 0 || b >= 5) {
                        ++bad_bins;
                    } else {
                        ++counts[static_cast<std::size_t>(b)];
                    }
                    break;
                }
                }
            }
            // Every visit of a ray draws once per bin, so all bins of a ray
            // carry the same non-zero count.
            for (const auto& [r, counts] : bins) {
                ++rays_binned;
                const bool even = counts[0] > 0 && std::all_of(counts.begin(), counts.end(),
                                                              [&](int c) { return c == counts[0]; });
                bad_bins += !even;
            }
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = neg_agreement == 1.0 && bad_bins == 0 && bad_intervals == 0 && symmetric_seen > 0 &&
                      secs < 60.0;
    return {pass, fmt("negative agreement %.6f == 1, %lld rays with all 5 bins filled (%lld bad), "
                      "%lld interval violations, positive agreement >= %.4f, %.1f s < 60 s",
                      neg_agreement, static_cast<long long>(rays_binned), static_cast<long long>(bad_bins),
                      static_cast<long long>(bad_intervals), pos_agreement, secs)};
}

// Median over 500-step windows of (late mean - early mean); negative means
// the loss keeps decreasing.
double median_window_change(const std::vector<LossRecord>& h) {
    std::vector<double> changes;
    auto mean = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t i = a; i < b; ++i) {
            s += h[i].loss;
        }
        return s / static_cast<double>(b - a);
    };
    for (std::size_t s = 0; s + 500 <= h.size(); s += 100) {
        changes.push_back(mean(s + 450, s + 500) - mean(s, s + 50));
    }
    if (changes.empty()) {
        return 0.0;
    }
    std::sort(changes.begin(), changes.end());
    return changes[changes.size() / 2];
}

double tail_mean(const std::vector<LossRecord>& h, std::size_t n) {
    n = std::min(n, h.size());
    double s = 0.0;
    for (std::size_t i = h.size() - n; i < h.size(); ++i) {
        s += h[i].loss;
    }
    return s / static_cast<double>(n);
}

// 4. Single-scene overfit with the desk model.
Outcome overfit() {
    const auto t0 = Clock::now();
    const auto spec = generate_scene(7);
    const std::vector<TrainingScene> scenes{prepare_scene(spec)};
    TrainConfig tc;
    tc.iterations = 2000;
    TrainOptions opt;
    opt.out_dir = work_dir("overfit");
    opt.on_step = [](const LossRecord& r) {
        if ((r.step + 1) % 250 == 0) {
            progress(fmt("overfit step %lld loss %.4f", static_cast<long long>(r.step + 1), r.loss));
        }
    };
    const auto result = train(scenes, tc, ModelConfig::desk(), opt);
    const double final_loss = tail_mean(result.history, 100);
    const double change = median_window_change(result.history);
    const auto handle = freeze(result.model, scenes[0].views);
    const auto rep = eval_occupancy(field_occupancy(handle), spec, spec.roi, OccupancyEvalConfig{});
    const double iou = rep.metrics.at("iou");
    const double f1 = rep.metrics.at("f1");
    const double secs = seconds_since(t0);
    const bool pass = final_loss < 0.1 && change < 0.0 && iou >= 0.8 && f1 >= 0.85 && secs < 1800.0;
    return {pass, fmt("loss (mean of last 100 steps) %.4f < 0.1, median 500-step change %+.4f < 0, "
                      "IoU %.4f >= 0.8, F1 %.4f >= 0.85, %.0f s < 1800 s",
                      final_loss, change, iou, f1, secs)};
}

// 5. Train on 50 scenes, compare 10 held-out scenes with the training set.
Outcome generalization() {
    const auto t0 = Clock::now();
    std::vector<SceneSpec> train_specs;
    std::vector<TrainingScene> scenes;
    for (std::uint64_t s = 0; s < 50; ++s) {
        train_specs.push_back(generate_scene(s));
        scenes.push_back(prepare_scene(train_specs.back()));
    }
    std::vector<SceneSpec> held_out;
    for (std::uint64_t s = 0; s < 10; ++s) {
        held_out.push_back(generate_scene(5000 + s));
    }
    TrainConfig tc;
    tc.iterations = 4000;
    tc.warmup = 200;
    TrainOptions opt;
    opt.out_dir = work_dir("generalization");
    opt.on_step = [](const LossRecord& r) {
        if ((r.step + 1) % 500 == 0) {
            progress(fmt("generalization step %lld loss %.4f", static_cast<long long>(r.step + 1), r.loss));
        }
    };
    const auto result = train(scenes, tc, ModelConfig::desk(), opt);
    const auto train_scores = evaluate_scenes(result.model, train_specs);
    const auto test_scores = evaluate_scenes(result.model, held_out);
    const double secs = seconds_since(t0);
    const bool absrel_ok = test_scores.absrel <= 2.0 * train_scores.absrel;
    const bool iou_ok = test_scores.iou >= 0.5 * train_scores.iou;
    const bool pass = absrel_ok && iou_ok && secs < 7200.0;
    return {pass, fmt("AbsRel held-out %.4f vs train %.4f (<= 2x), IoU held-out %.4f vs train %.4f (>= 1/2), "
                      "train loss %.4f, %.0f s < 7200 s",
                      test_scores.absrel, train_scores.absrel, test_scores.iou, train_scores.iou,
                      tail_mean(result.history, 100), secs)};
}

// 6. Average rank of the published results table.
Outcome rank_table() {
    const auto t0 = Clock::now();
    const auto table = read_rank_table(OCCFIELD_SOURCE_DIR "/fixtures/table2.csv");
    const auto avg = average_rank(table);
    const auto it = std::find(table.methods.begin(), table.methods.end(), "Ours");
    if (it == table.methods.end()) {
        return {false, "fixture has no 'Ours' row"};
    }
    const double ours = avg[static_cast<std::size_t>(it - table.methods.begin())];
    const double secs = seconds_since(t0);
    const bool pass = ours == 1.8 && secs < 1.0;
    return {pass, fmt("average rank %.10g == 1.8 over %zu columns, %.3f s < 1 s", ours, table.columns.size(), secs)};
}

// 7. Spatial index against brute force; confusion-matrix identities.
Outcome metric_oracles() {
    const auto t0 = Clock::now();
    Rng rng(7007);
    int exact = 0;
    for (int pair = 0; pair < 100; ++pair) {
        std::vector<Vec3> a(200), b(200);
        for (auto* cloud : {&a, &b}) {
            for (auto& p : *cloud) {
                p = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-1, 5));
            }
        }
        exact += chamfer(a, b) == chamfer_brute_force(a, b);
    }
    int iou_le_f1 = 0;
    int perfect = 0;
    const int grids = 200;
    for (int g = 0; g < grids; ++g) {
        auto gt = VoxelGrid::empty(RoiBox(Vec3::Zero(), Vec3(8, 8, 2)), Vec3::Ones());
        auto pred = gt;
        const double density = rng.uniform(0.02, 0.6);
        gt.visibility = std::vector<std::uint8_t>(gt.occupancy.size());
        for (std::size_t i = 0; i < gt.occupancy.size(); ++i) {
            gt.occupancy[i] = rng.uniform() < density;
            pred.occupancy[i] = rng.uniform() < density;
            (*gt.visibility)[i] = rng.uniform() < 0.8;
        }
        (*gt.visibility)[0] = 1;
        const auto s = occupancy_scores(pred, gt);
        iou_le_f1 += s.iou <= s.f1;
        auto same = gt;
        same.visibility.reset();
        const auto p = occupancy_scores(same, gt);
        perfect += p.iou == 1.0 && p.f1 == 1.0;
    }
    const double secs = seconds_since(t0);
    const bool pass = exact == 100 && iou_le_f1 == grids && perfect == grids && secs < 60.0;
    return {pass, fmt("chamfer kd-tree == brute force on %d/100 pairs, IoU <= F1 on %d/%d, perfect -> 1.0 on %d/%d, "
                      "%.2f s < 60 s",
                      exact, iou_le_f1, grids, perfect, grids, secs)};
}

// 8. Two fixed-seed runs match byte for byte; a checkpoint reload answers
// probe queries identically.
Outcome determinism() {
    const auto t0 = Clock::now();
    const std::vector<TrainingScene> scenes{prepare_scene(generate_scene(11)), prepare_scene(generate_scene(12))};
    TrainConfig tc;
    tc.iterations = 30;
    tc.warmup = 5;
    tc.seed = 99;
    tc.checkpoint_every = 0;
    const auto base = work_dir("determinism");
    std::vector<std::shared_ptr<OccupancyModel>> models;
    for (const char* run : {"a", "b"}) {
        TrainOptions opt;
        opt.out_dir = base / run;
        auto mc = ModelConfig::desk();
        mc.seed = 99;
        models.push_back(train(scenes, tc, mc, opt).model);
    }
    const std::string a = slurp(base / "a" / "final.vgtc");
    const bool same_ckpt = !a.empty() && a == slurp(base / "b" / "final.vgtc");

    auto loaded = std::make_shared<OccupancyModel>(load_checkpoint(base / "a" / "final.vgtc"));
    Rng rng(5);
    std::vector<Vec3> probes(4096);
    const auto& roi = loaded->config().roi;
    for (auto& p : probes) {
        p = Vec3(rng.uniform(roi.min().x(), roi.max().x()), rng.uniform(roi.min().y(), roi.max().y()),
                 rng.uniform(roi.min().z(), roi.max().z()));
    }
    const auto before = freeze(models[0], scenes[0].views).query(probes);
    const auto after = freeze(loaded, scenes[0].views).query(probes);
    const bool same_queries =
        before.size() == after.size() && std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0;
    const double secs = seconds_since(t0);
    return {same_ckpt && same_queries,
            fmt("checkpoints of two fixed-seed runs identical: %s (%zu bytes); reloaded probe queries "
                "bit-identical: %s (%zu points), %.1f s",
                same_ckpt ? "yes" : "NO", a.size(), same_queries ? "yes" : "NO", probes.size(), secs)};
}

// 9. The command-line ablation emits one row per strategy.
Outcome ablation() {
    const auto t0 = Clock::now();
    const auto dir = work_dir("ablation");
    const nlohmann::json config = {
        {"train", {{"iterations", 200}, {"warmup", 20}, {"checkpoint_every", 0}}},
        {"scenes", {{"seeds", {21, 22}}}},
        {"eval_scenes", {{"seeds", {23}}}},
    };
    std::ofstream(dir / "ablation.json") << config.dump(2);
    std::ostringstream out, err;
    const int code = cli::run({"ablate", "sampling", "--config", (dir / "ablation.json").string(), "--seed", "3",
                               "--out", (dir / "ablation.csv").string()},
                              out, err);
    if (code != 0) {
        return {false, "ablate sampling exited " + std::to_string(code) + ": " + err.str()};
    }
    std::istringstream csv(slurp(dir / "ablation.csv"));
    std::string line;
    std::getline(csv, line);
    const bool header_ok = line == "strategy,final_loss,absrel,chamfer,f1,iou";
    std::vector<std::string> strategies;
    bool finite = true;
    std::string rows;
    while (std::getline(csv, line)) {
        std::istringstream cells(line);
        std::string cell;
        std::getline(cells, cell, ',');
        strategies.push_back(cell);
        while (std::getline(cells, cell, ',')) {
            finite = finite && std::isfinite(std::stod(cell));
        }
        rows += " [" + line + "]";
    }
    const bool all = strategies == std::vector<std::string>{"random", "stratified", "stratified_symmetric"};
    const double secs = seconds_since(t0);
    return {header_ok && all && finite,
            fmt("%zu rows, strategies complete %s, values finite %s, %.0f s;", strategies.size(), all ? "yes" : "NO",
                finite ? "yes" : "NO", secs) +
                rows};
}

} // namespace

int main(int argc, char** argv) {
    configure_allocator();
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradients},
        {"rendering oracle equivalence", rendering_oracle},
        {"supervision soundness", supervision_soundness},
        {"single-scene overfit", overfit},
        {"generalization", generalization},
        {"average rank reproduction", rank_table},
        {"metric oracles", metric_oracles},
        {"determinism and persistence", determinism},
        {"sampling ablation harness", ablation},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        const int n = std::atoi(argv[i]);
        if (n < 1 || n > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion '" << argv[i] << "'\n";
            return 2;
        }
        selected.push_back(n);
    }
    if (selected.empty()) {
        for (int n = 1; n <= static_cast<int>(criteria.size()); ++n) {
            selected.push_back(n);
        }
    }
    bool all_pass = true;
    for (const int n : selected) {
        const auto& [name, fn] = criteria[static_cast<std::size_t>(n - 1)];
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all_pass = all_pass && o.pass;
        std::cout << "criterion " << n << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail
                  << std::endl;
    }
    return all_pass ? 0 : 1;
}
