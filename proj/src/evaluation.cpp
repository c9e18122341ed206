// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/evaluation.hpp"

#include "json_util.hpp"
#include "occfield/errors.hpp"
#include "occfield/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace occ {

using jsonutil::json;

AbsRelResult absrel(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size()) {
        throw ContractError("absrel: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(gt.size()) + " ground-truth depths");
    }
    AbsRelResult out;
    double sum = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!(gt[i] > 0.0)) {
            ++out.excluded;
            continue;
        }
        sum += std::abs(pred[i] - gt[i]) / gt[i];
        ++out.evaluated;
    }
    if (out.evaluated == 0) {
        throw EmptyMetricError("absrel: no ray with a positive ground-truth depth");
    }
    out.value = sum / static_cast<double>(out.evaluated);
    return out;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    if (points_.size() >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
        throw ContractError("KdTree: too many points");
    }
    std::vector<std::uint32_t> idx(points_.size());
    std::iota(idx.begin(), idx.end(), 0u);
    nodes_.reserve(points_.size());
    root_ = build(idx, 0, idx.size(), 0);
}

std::int32_t KdTree::build(std::vector<std::uint32_t>& idx, std::size_t lo, std::size_t hi, int depth) {
    if (lo >= hi) {
        return -1;
    }
    const int axis = depth % 3;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::uint32_t a, std::uint32_t b) {
                         const double pa = points_[a][axis];
                         const double pb = points_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                     });
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{idx[mid], -1, -1, static_cast<std::uint8_t>(axis)});
    const auto left = build(idx, lo, mid, depth + 1);
    const auto right = build(idx, mid + 1, hi, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
}

void KdTree::search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_d2) const {
    if (node < 0) {
        return;
    }
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    const Vec3& p = points_[n.point];
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
        best_d2 = d2;
        best = n.point;
    }
    const double diff = q[n.axis] - p[n.axis];
    const auto near = diff < 0.0 ? n.left : n.right;
    const auto far = diff < 0.0 ? n.right : n.left;
    search(near, q, best, best_d2);
    if (diff * diff <= best_d2) {
        search(far, q, best, best_d2);
    }
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& q) const {
    if (points_.empty()) {
        throw ContractError("KdTree::nearest on an empty tree");
    }
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best, best_d2);
    return {best, std::sqrt(best_d2)};
}

namespace {

void require_clouds(std::span<const Vec3> a, std::span<const Vec3> b) {
    if (a.empty() || b.empty()) {
        throw ContractError("chamfer: both clouds must be non-empty");
    }
}

double mean_nn(std::span<const Vec3> from, const KdTree& to) {
    double sum = 0.0;
    for (const auto& p : from) {
        sum += to.nearest(p).second;
    }
    return sum / static_cast<double>(from.size());
}

double mean_nn_brute(std::span<const Vec3> from, std::span<const Vec3> to) {
    double sum = 0.0;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            best = std::min(best, (q - p).squaredNorm());
        }
        sum += std::sqrt(best);
    }
    return sum / static_cast<double>(from.size());
}

} // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
    require_clouds(a, b);
    const KdTree ta(a);
    const KdTree tb(b);
    return 0.5 * (mean_nn(a, tb) + mean_nn(b, ta));
}

double chamfer_brute_force(std::span<const Vec3> a, std::span<const Vec3> b) {
    require_clouds(a, b);
    return 0.5 * (mean_nn_brute(a, b) + mean_nn_brute(b, a));
}

OccupancyScores occupancy_scores(const VoxelGrid& pred, const VoxelGrid& gt) {
    if (pred.dims != gt.dims || !(pred.roi == gt.roi) || pred.occupancy.size() != gt.occupancy.size()) {
        throw ContractError("occupancy_scores: grids differ in dims or ROI");
    }
    if (!gt.visibility || gt.visibility->size() != gt.occupancy.size()) {
        throw ContractError("occupancy_scores: ground truth carries no visibility mask");
    }
    OccupancyScores s;
    for (std::size_t i = 0; i < gt.occupancy.size(); ++i) {
        if (!(*gt.visibility)[i]) {
            continue;
        }
        ++s.visible;
        const bool p = pred.occupancy[i] != 0;
        const bool g = gt.occupancy[i] != 0;
        if (p && g) {
            ++s.counts.tp;
        } else if (p) {
            ++s.counts.fp;
        } else if (g) {
            ++s.counts.fn;
        } else {
            ++s.counts.tn;
        }
    }
    if (s.visible == 0) {
        throw EmptyMetricError("occupancy_scores: no visible voxels");
    }
    const auto& c = s.counts;
    const double denom = static_cast<double>(c.tp + c.fp + c.fn);
    if (denom == 0.0) {
        s.iou = 1.0;
        s.f1 = 1.0;
    } else {
        s.iou = static_cast<double>(c.tp) / denom;
        s.f1 = 2.0 * static_cast<double>(c.tp) / (denom + static_cast<double>(c.tp));
    }
    return s;
}

std::vector<std::int64_t> walk_voxels(const VoxelGrid& grid, const Ray& ray, double t0, double t1) {
    std::vector<std::int64_t> out;
    if (!(t1 >= t0)) {
        return out;
    }
    const Vec3 start = ray.at(t0).cwiseMax(grid.roi.min()).cwiseMin(grid.roi.max());
    std::array<std::int64_t, 3> cell{};
    std::array<std::int64_t, 3> step{};
    std::array<double, 3> t_max{};
    std::array<double, 3> t_delta{};
    for (int a = 0; a < 3; ++a) {
        const double rel = (start[a] - grid.roi.min()[a]) / grid.voxel_size[a];
        cell[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(rel)), 0, grid.dims[a] - 1);
        const double d = ray.direction[a];
        if (d > 0.0) {
            step[a] = 1;
            const double boundary = grid.roi.min()[a] + static_cast<double>(cell[a] + 1) * grid.voxel_size[a];
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = grid.voxel_size[a] / d;
        } else if (d < 0.0) {
            step[a] = -1;
            const double boundary = grid.roi.min()[a] + static_cast<double>(cell[a]) * grid.voxel_size[a];
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = -grid.voxel_size[a] / d;
        } else {
            step[a] = 0;
            t_max[a] = std::numeric_limits<double>::infinity();
            t_delta[a] = std::numeric_limits<double>::infinity();
        }
    }
    while (true) {
        out.push_back(grid.index(cell[0], cell[1], cell[2]));
        int axis = 0;
        if (t_max[1] < t_max[axis]) {
            axis = 1;
        }
        if (t_max[2] < t_max[axis]) {
            axis = 2;
        }
        if (t_max[axis] > t1) {
            break;
        }
        cell[axis] += step[axis];
        if (cell[axis] < 0 || cell[axis] >= grid.dims[axis]) {
            break;
        }
        t_max[axis] += t_delta[axis];
    }
    return out;
}

std::vector<std::uint8_t> visibility_mask(const SceneSpec& scene, const VoxelGrid& grid, int oversample) {
    if (scene.rig.cameras.empty()) {
        throw ValidationError("visibility_mask: scene has no camera rig");
    }
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(grid.count()), 0);
    for (const auto& cam : scene.rig.cameras) {
        for (const auto& ray : camera_rays(cam, oversample)) {
            const auto clip = clip_ray_to_roi(ray, grid.roi);
            if (!clip) {
                continue;
            }
            const auto hit = cast(scene, ray, scene.rig.max_range);
            const double end = std::min(clip->exit, hit ? *hit : scene.rig.max_range);
            for (auto v : walk_voxels(grid, ray, clip->enter, end)) {
                mask[static_cast<std::size_t>(v)] = 1;
            }
        }
    }
    return mask;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') {
        cells.emplace_back();
    }
    return cells;
}

} // namespace

RankTable parse_rank_table(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        rows.push_back(split_csv_line(line));
    }
    if (rows.size() < 2) {
        throw ValidationError("rank table needs a header row and an orientation row");
    }
    RankTable t;
    const auto& header = rows[0];
    if (header.size() < 2) {
        throw ValidationError("rank table header has no metric columns");
    }
    t.columns.assign(header.begin() + 1, header.end());
    const auto& orient = rows[1];
    if (orient.empty() || orient[0] != "orientation" || orient.size() != header.size()) {
        throw ValidationError("rank table second row must be 'orientation' with one entry per column");
    }
    for (std::size_t c = 1; c < orient.size(); ++c) {
        if (orient[c] == "lower") {
            t.lower_is_better.push_back(true);
        } else if (orient[c] == "higher") {
            t.lower_is_better.push_back(false);
        } else {
            throw ValidationError("rank table orientation for column '" + t.columns[c - 1] +
                                  "' must be 'lower' or 'higher'");
        }
    }
    for (std::size_t r = 2; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() > header.size()) {
            throw ValidationError("rank table row '" + row[0] + "' has too many cells");
        }
        t.methods.push_back(row[0]);
        std::vector<std::optional<double>> scores(t.columns.size());
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c].empty()) {
                continue;
            }
            try {
                std::size_t used = 0;
                scores[c - 1] = std::stod(row[c], &used);
                if (used != row[c].size()) {
                    throw std::invalid_argument("trailing characters");
                }
            } catch (const std::exception&) {
                throw ValidationError("rank table cell (" + row[0] + ", " + t.columns[c - 1] + ") is not a number: '" +
                                      row[c] + "'");
            }
        }
        t.scores.push_back(std::move(scores));
    }
    if (t.methods.empty()) {
        throw ValidationError("rank table has no method rows");
    }
    return t;
}

RankTable read_rank_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_rank_table(buf.str());
}

std::vector<std::vector<int>> column_ranks(const RankTable& table) {
    const auto m = table.methods.size();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            if (!table.scores[i][c]) {
                throw IncompleteTableError("rank table cell (" + table.methods[i] + ", " + table.columns[c] +
                                           ") is missing");
            }
        }
    }
    std::vector<std::vector<int>> ranks(m, std::vector<int>(table.columns.size(), 0));
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        for (std::size_t i = 0; i < m; ++i) {
            const double si = *table.scores[i][c];
            int better = 0;
            for (std::size_t j = 0; j < m; ++j) {
                const double sj = *table.scores[j][c];
                better += table.lower_is_better[c] ? (sj < si) : (sj > si);
            }
            ranks[i][c] = better + 1;
        }
    }
    return ranks;
}

std::vector<double> average_rank(const RankTable& table) {
    const auto ranks = column_ranks(table);
    std::vector<double> out;
    out.reserve(ranks.size());
    for (const auto& row : ranks) {
        const int sum = std::accumulate(row.begin(), row.end(), 0);
        out.push_back(static_cast<double>(sum) / static_cast<double>(row.size()));
    }
    return out;
}

json MetricReport::to_json() const {
    json j;
    j["metrics"] = metrics;
    j["counts"] = counts;
    j["config"] = config;
    return j;
}

void MetricReport::save(const std::filesystem::path& path) const { jsonutil::save_file(path, to_json()); }

namespace {

struct GtRays {
    std::vector<Ray> rays;
    std::int64_t outside = 0;
};

GtRays in_roi_rays(std::span<const Ray> rays, const RoiBox& roi) {
    GtRays out;
    for (const auto& r : rays) {
        if (!r.hit_distance || !(*r.hit_distance > 0.0)) {
            throw ContractError("evaluation needs ground-truth rays with a hit distance");
        }
        if (roi.contains(r.at(*r.hit_distance))) {
            out.rays.push_back(r);
        } else {
            ++out.outside;
        }
    }
    if (out.rays.empty()) {
        throw EmptyMetricError("no ground-truth return lies inside the ROI");
    }
    return out;
}

} // namespace

MetricReport eval_pointmap(const OccupancyFn& field, const SceneSpec& scene, std::span<const Ray> gt_rays,
                           const RoiBox& roi, const PointmapEvalConfig& cfg) {
    // Rays read back from f32 files can graze past an edge the original
    // beam hit; a few such rays are dropped, many mean the wrong scene.
    std::vector<Ray> consistent;
    std::int64_t inconsistent = 0;
    for (std::size_t i = 0; i < gt_rays.size(); ++i) {
        const auto& r = gt_rays[i];
        if ((r.origin - scene.lidar.origin).norm() > 1e-4) {
            throw ContractError("eval_pointmap: ray " + std::to_string(i) + " does not start at the scene's LiDAR");
        }
        if (!r.hit_distance) {
            throw ContractError("evaluation needs ground-truth rays with a hit distance");
        }
        const auto hit = cast(scene, r, scene.lidar.max_range);
        if (!hit || std::abs(*hit - *r.hit_distance) > 1e-3 * std::max(1.0, *hit)) {
            ++inconsistent;
        } else {
            consistent.push_back(r);
        }
    }
    if (static_cast<double>(inconsistent) > 0.01 * static_cast<double>(gt_rays.size())) {
        throw ContractError("eval_pointmap: " + std::to_string(inconsistent) + " of " +
                            std::to_string(gt_rays.size()) + " rays disagree with the scene geometry");
    }
    const auto gt = in_roi_rays(consistent, roi);
    const auto depths = render_depths(field, gt.rays, cfg.render, roi);

    std::vector<double> pred_depth;
    std::vector<double> gt_depth;
    std::vector<Vec3> gt_points;
    std::vector<Vec3> pred_points;
    std::int64_t below_floor = 0;
    for (std::size_t i = 0; i < gt.rays.size(); ++i) {
        const auto& r = gt.rays[i];
        gt_points.push_back(r.at(*r.hit_distance));
        const double d = depths[i] ? depths[i]->depth : 0.0;
        pred_depth.push_back(d);
        gt_depth.push_back(*r.hit_distance);
        if (depths[i] && depths[i]->total_weight >= cfg.weight_floor) {
            pred_points.push_back(r.at(d));
        } else {
            ++below_floor;
        }
    }
    const auto ar = absrel(pred_depth, gt_depth);
    MetricReport rep;
    rep.metrics["absrel"] = ar.value;
    rep.counts["rays_evaluated"] = ar.evaluated;
    rep.counts["rays_outside_roi"] = gt.outside;
    rep.counts["rays_inconsistent"] = inconsistent;
    rep.counts["rays_below_weight_floor"] = below_floor;
    rep.counts["gt_points"] = static_cast<std::int64_t>(gt_points.size());
    rep.counts["pred_points"] = static_cast<std::int64_t>(pred_points.size());
    if (pred_points.empty()) {
        throw EmptyMetricError("eval_pointmap: every rendered ray fell below the weight floor; no cloud to score");
    }
    rep.metrics["chamfer"] = chamfer(pred_points, gt_points);
    rep.config = {{"step", cfg.render.step},
                  {"max_range", cfg.render.max_range},
                  {"weight_floor", cfg.weight_floor},
                  {"roi", jsonutil::roi_to(roi)}};
    return rep;
}

MetricReport eval_pointmap_cloud(const PointCloud& pred, std::span<const Ray> gt_rays, const RoiBox& roi) {
    if (pred.points.empty()) {
        throw ContractError("eval_pointmap_cloud: empty predicted cloud");
    }
    MetricReport rep;
    std::vector<Vec3> gt_points;
    if (pred.points.size() == gt_rays.size()) {
        std::vector<double> pd;
        std::vector<double> gd;
        std::vector<Vec3> pp;
        std::int64_t outside = 0;
        for (std::size_t i = 0; i < gt_rays.size(); ++i) {
            const auto& r = gt_rays[i];
            if (!r.hit_distance) {
                throw ContractError("evaluation needs ground-truth rays with a hit distance");
            }
            if (!roi.contains(r.at(*r.hit_distance))) {
                ++outside;
                continue;
            }
            gt_points.push_back(r.at(*r.hit_distance));
            pp.push_back(pred.points[i]);
            pd.push_back((pred.points[i] - r.origin).norm());
            gd.push_back(*r.hit_distance);
        }
        const auto ar = absrel(pd, gd);
        rep.metrics["absrel"] = ar.value;
        rep.counts["rays_evaluated"] = ar.evaluated;
        rep.counts["rays_outside_roi"] = outside;
        rep.metrics["chamfer"] = chamfer(pp, gt_points);
        rep.counts["pred_points"] = static_cast<std::int64_t>(pp.size());
    } else {
        const auto gt = in_roi_rays(gt_rays, roi);
        for (const auto& r : gt.rays) {
            gt_points.push_back(r.at(*r.hit_distance));
        }
        std::vector<Vec3> pp;
        for (const auto& p : pred.points) {
            if (roi.contains(p)) {
                pp.push_back(p);
            }
        }
        if (pp.empty()) {
            throw EmptyMetricError("eval_pointmap_cloud: no predicted point inside the ROI");
        }
        rep.metrics["chamfer"] = chamfer(pp, gt_points);
        rep.counts["rays_outside_roi"] = gt.outside;
        rep.counts["pred_points"] = static_cast<std::int64_t>(pp.size());
    }
    rep.counts["gt_points"] = static_cast<std::int64_t>(gt_points.size());
    rep.config = {{"roi", jsonutil::roi_to(roi)}};
    return rep;
}

VoxelGrid ground_truth_grid(const SceneSpec& scene, const RoiBox& roi, const OccupancyEvalConfig& cfg) {
    VoxelGrid gt = render_voxel_grid(oracle_occupancy(scene), roi, cfg.voxel_size, cfg.voxel);
    gt.visibility = visibility_mask(scene, gt, cfg.visibility_oversample);
    return gt;
}

MetricReport eval_occupancy(const OccupancyFn& field, const SceneSpec& scene, const RoiBox& roi,
                            const OccupancyEvalConfig& cfg) {
    const VoxelGrid gt = ground_truth_grid(scene, roi, cfg);
    const VoxelGrid pred = render_voxel_grid(field, roi, cfg.voxel_size, cfg.voxel);
    const auto s = occupancy_scores(pred, gt);
    MetricReport rep;
    rep.metrics["f1"] = s.f1;
    rep.metrics["iou"] = s.iou;
    rep.counts["visible_voxels"] = s.visible;
    rep.counts["tp"] = s.counts.tp;
    rep.counts["fp"] = s.counts.fp;
    rep.counts["fn"] = s.counts.fn;
    rep.counts["tn"] = s.counts.tn;
    rep.config = {{"voxel_size", jsonutil::vec3_to(cfg.voxel_size)},
                  {"samples", cfg.voxel.samples},
                  {"threshold", cfg.voxel.threshold},
                  {"seed", cfg.voxel.seed},
                  {"visibility_oversample", cfg.visibility_oversample},
                  {"roi", jsonutil::roi_to(roi)}};
    return rep;
}

} // namespace occ
