// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/supervision.hpp"

#include "binio.hpp"
#include "json_util.hpp"
#include "occfield/errors.hpp"
#include "occfield/rng.hpp"
#include "occfield/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace occ {

using jsonutil::json;

namespace {

constexpr std::uint32_t kLqryVersion = 1;

enum Stream : std::uint64_t { kPositive = 1, kFree = 2, kSymmetric = 3 };

double keyed_uniform(std::uint64_t key, std::uint64_t j) {
    return static_cast<double>(mix64(key ^ mix64(j + 0x51)) >> 11) * 0x1.0p-53;
}

// t uniform on [lo, hi), kept strictly below hi after rounding.
double draw_in(double lo, double hi, double u) {
    double t = lo + u * (hi - lo);
    if (t >= hi) {
        t = std::nextafter(hi, lo);
    }
    return std::max(t, lo);
}

std::vector<std::uint32_t> visit_order(std::size_t n, std::uint64_t seed, Stream stream) {
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(derive_seed(seed, stream));
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.index(i)]);
    }
    return order;
}

// Visits rays in order, pass after pass, letting `draw` append points until
// `count` is reached. A pass that yields nothing means no ray
// can ever contribute.
template <typename Draw>
void fill(std::int64_t count, const std::vector<std::uint32_t>& order, const char* what, Draw draw) {
    std::int64_t have = 0;
    for (std::uint64_t pass = 0; have < count; ++pass) {
        const std::int64_t before = have;
        for (std::uint32_t r : order) {
            if (have >= count) {
                break;
            }
            have += draw(r, pass, count - have);
        }
        if (have == before) {
            throw UnsatisfiableSamplingError(std::string("no ray yields ") + what +
                                             " inside the ROI; cannot meet the configured count");
        }
    }
}

} // namespace

std::string to_string(SamplingStrategy s) {
    switch (s) {
    case SamplingStrategy::random:
        return "random";
    case SamplingStrategy::stratified:
        return "stratified";
    case SamplingStrategy::stratified_symmetric:
        return "stratified_symmetric";
    }
    return "unknown";
}

SamplingStrategy parse_strategy(const std::string& name) {
    if (name == "random") {
        return SamplingStrategy::random;
    }
    if (name == "stratified") {
        return SamplingStrategy::stratified;
    }
    if (name == "stratified_symmetric" || name == "stratified+symmetric") {
        return SamplingStrategy::stratified_symmetric;
    }
    throw ConfigError("unknown sampling strategy '" + name + "' (random | stratified | stratified_symmetric)");
}

SamplingConfig SamplingConfig::full_scale() {
    SamplingConfig c;
    c.positives = 150000;
    c.negatives = 150000;
    c.symmetric = 30000;
    return c;
}

SamplingConfig SamplingConfig::desk() { return SamplingConfig{}; }

void SamplingConfig::validate() const {
    if (bins < 1) {
        throw ConfigError("sampling.bins must be >= 1");
    }
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw ConfigError("sampling.tau must be positive");
    }
    if (positives <= 0 || negatives <= 0) {
        throw ConfigError("sampling.positives and sampling.negatives must be positive");
    }
    if (symmetric < 0 || symmetric > negatives) {
        throw ConfigError("sampling.symmetric must lie in [0, negatives]");
    }
    if (strategy == SamplingStrategy::stratified_symmetric && symmetric == 0) {
        throw ConfigError("sampling.symmetric must be positive for stratified_symmetric");
    }
}

std::int64_t SamplingConfig::symmetric_count() const {
    return strategy == SamplingStrategy::stratified_symmetric ? symmetric : 0;
}

SamplingConfig SamplingConfig::from_json(const json& j) {
    const std::string ctx = "sampling";
    jsonutil::reject_unknown_keys(j, {"strategy", "bins", "tau", "positives", "negatives", "symmetric", "seed"},
                                  ctx);
    SamplingConfig c;
    if (j.contains("strategy")) {
        c.strategy = parse_strategy(jsonutil::get_required<std::string>(j, "strategy", ctx));
    }
    c.bins = jsonutil::get_or(j, "bins", c.bins, ctx);
    c.tau = jsonutil::get_or(j, "tau", c.tau, ctx);
    c.positives = jsonutil::get_or(j, "positives", c.positives, ctx);
    c.negatives = jsonutil::get_or(j, "negatives", c.negatives, ctx);
    c.symmetric = jsonutil::get_or(j, "symmetric", c.symmetric, ctx);
    c.seed = jsonutil::get_or(j, "seed", c.seed, ctx);
    c.validate();
    return c;
}

json SamplingConfig::to_json() const {
    return json{{"strategy", to_string(strategy)}, {"bins", bins},           {"tau", tau},
                {"positives", positives},          {"negatives", negatives}, {"symmetric", symmetric},
                {"seed", seed}};
}

std::int64_t LabeledQuerySet::positive_count() const {
    return std::count(labels.begin(), labels.end(), std::uint8_t{1});
}

std::int64_t LabeledQuerySet::negative_count() const {
    return static_cast<std::int64_t>(labels.size()) - positive_count();
}

void LabeledQuerySet::reserve(std::size_t n) {
    points.reserve(n);
    labels.reserve(n);
    ray_index.reserve(n);
    t.reserve(n);
    kind.reserve(n);
}

void LabeledQuerySet::push(const Vec3& p, std::uint8_t label, std::uint32_t ray, double t_value, SampleKind k) {
    points.push_back(p);
    labels.push_back(label);
    ray_index.push_back(ray);
    t.push_back(t_value);
    kind.push_back(k);
}

std::vector<double> bin_edges(double a, double b, int bins) {
    if (bins < 1) {
        throw ContractError("bin_edges: need at least one bin");
    }
    std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
    const double w = (b - a) / bins;
    for (int k = 0; k < bins; ++k) {
        edges[static_cast<std::size_t>(k)] = a + k * w;
    }
    edges.back() = b;
    return edges;
}

Interval free_segment(const Ray& ray, const RoiBox& roi) {
    const double d = ray.hit_distance.value_or(0.0);
    const auto clip = clip_ray_to_roi(ray, roi);
    if (!clip || clip->enter >= d) {
        return {0.0, 0.0};
    }
    return {clip->enter, std::min(d, clip->exit)};
}

LabeledQuerySet sample_queries(std::span<const Ray> rays, const SamplingConfig& cfg, const RoiBox& roi) {
    cfg.validate();
    if (rays.empty()) {
        throw ContractError("sample_queries: no rays");
    }
    if (rays.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw ContractError("sample_queries: too many rays for u32 indices");
    }
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays[i].hit_distance || !(*rays[i].hit_distance > 0.0)) {
            throw ContractError("sample_queries: ray " + std::to_string(i) + " has no positive hit distance");
        }
    }

    LabeledQuerySet qs;
    qs.reserve(static_cast<std::size_t>(cfg.positives + cfg.negatives));
    const std::uint64_t seed = cfg.seed;
    auto key = [&](Stream s, std::uint32_t r, std::uint64_t pass) { return derive_seed(derive_seed(seed, s, r), pass); };

    fill(cfg.positives, visit_order(rays.size(), seed, kPositive), "positives",
         [&](std::uint32_t r, std::uint64_t pass, std::int64_t) -> std::int64_t {
             const Ray& ray = rays[r];
             const double d = *ray.hit_distance;
             const double t = draw_in(d, d + cfg.tau, keyed_uniform(key(kPositive, r, pass), 0));
             const Vec3 p = ray.at(t);
             if (!roi.contains(p)) {
                 ++qs.discarded_out_of_roi;
                 return 0;
             }
             qs.push(p, 1, r, t, SampleKind::positive);
             return 1;
         });

    std::vector<Interval> segments(rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) {
        segments[i] = free_segment(rays[i], roi);
    }
    const bool stratified = cfg.strategy != SamplingStrategy::random;
    fill(cfg.free_count(), visit_order(rays.size(), seed, kFree), "free-space negatives",
         [&](std::uint32_t r, std::uint64_t pass, std::int64_t) -> std::int64_t {
             const Interval seg = segments[r];
             if (!(seg.exit > seg.enter)) {
                 return 0;
             }
             const std::uint64_t k = key(kFree, r, pass);
             if (!stratified) {
                 const double t = draw_in(seg.enter, seg.exit, keyed_uniform(k, 0));
                 qs.push(rays[r].at(t), 0, r, t, SampleKind::free);
                 return 1;
             }
             const auto edges = bin_edges(seg.enter, seg.exit, cfg.bins);
             // Every visited ray gets all bins, so a count not divisible by
             // K overshoots by fewer than K draws.
             const std::int64_t n = cfg.bins;
             for (std::int64_t b = 0; b < n; ++b) {
                 const auto lo = edges[static_cast<std::size_t>(b)];
                 const auto hi = edges[static_cast<std::size_t>(b) + 1];
                 const double t = draw_in(lo, hi, keyed_uniform(k, static_cast<std::uint64_t>(b)));
                 qs.push(rays[r].at(t), 0, r, t, SampleKind::free);
             }
             return n;
         });

    const auto n_sym = cfg.symmetric_count();
    if (n_sym > 0) {
        for (const auto& ray : rays) {
            if (*ray.hit_distance <= cfg.tau) {
                ++qs.skipped_symmetric_rays;
            }
        }
        fill(n_sym, visit_order(rays.size(), seed, kSymmetric), "symmetric negatives",
             [&](std::uint32_t r, std::uint64_t pass, std::int64_t) -> std::int64_t {
                 const Ray& ray = rays[r];
                 const double d = *ray.hit_distance;
                 if (d <= cfg.tau) {
                     return 0;
                 }
                 const double t = draw_in(d - cfg.tau, d, keyed_uniform(key(kSymmetric, r, pass), 0));
                 const Vec3 p = ray.at(t);
                 if (!roi.contains(p)) {
                     ++qs.discarded_out_of_roi;
                     return 0;
                 }
                 qs.push(p, 0, r, t, SampleKind::symmetric);
                 return 1;
             });
    }
    return qs;
}

OracleAgreement validate_against_oracle(const LabeledQuerySet& qs, const SceneSpec& scene) {
    OracleAgreement out;
    std::int64_t neg_ok = 0;
    std::int64_t pos_ok = 0;
    for (std::size_t i = 0; i < qs.size(); ++i) {
        const bool occ = occupied(scene, qs.points[i]);
        if (qs.labels[i]) {
            ++out.positive_count;
            pos_ok += occ ? 1 : 0;
        } else {
            ++out.negative_count;
            neg_ok += occ ? 0 : 1;
        }
    }
    if (out.negative_count > 0) {
        out.negatives = static_cast<double>(neg_ok) / static_cast<double>(out.negative_count);
    }
    if (out.positive_count > 0) {
        out.positives = static_cast<double>(pos_ok) / static_cast<double>(out.positive_count);
    }
    if (!qs.points.empty()) {
        out.overall = static_cast<double>(neg_ok + pos_ok) / static_cast<double>(qs.size());
    }
    return out;
}

void write_lqry(const std::filesystem::path& path, const LabeledQuerySet& qs) {
    binio::Writer out(path);
    out.magic("LQRY");
    out.put<std::uint32_t>(kLqryVersion);
    out.put<std::uint64_t>(qs.size());
    for (std::size_t i = 0; i < qs.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            out.put<float>(static_cast<float>(qs.points[i][a]));
        }
        out.put<std::uint8_t>(qs.labels[i]);
        out.put<std::uint32_t>(qs.ray_index[i]);
    }
    out.close();
}

LabeledQuerySet read_lqry(const std::filesystem::path& path) {
    binio::Reader in(path);
    in.expect_magic("LQRY");
    const auto version = in.get<std::uint32_t>();
    if (version != kLqryVersion) {
        throw IoError("unsupported LQRY version " + std::to_string(version));
    }
    const auto count = in.get<std::uint64_t>();
    if (count > std::filesystem::file_size(path) / 17) {
        throw IoError("LQRY count " + std::to_string(count) + " exceeds the file size");
    }
    LabeledQuerySet qs;
    qs.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Vec3 p;
        for (int a = 0; a < 3; ++a) {
            p[a] = in.get<float>();
        }
        const auto label = in.get<std::uint8_t>();
        if (label > 1) {
            throw IoError("LQRY label must be 0 or 1");
        }
        const auto ray = in.get<std::uint32_t>();
        qs.push(p, label, ray, std::nan(""), label ? SampleKind::positive : SampleKind::free);
    }
    return qs;
}

} // namespace occ
