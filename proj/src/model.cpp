// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/model.hpp"

#include "binio.hpp"
#include "json_util.hpp"
#include "occfield/diffcore/ops.hpp"
#include "occfield/errors.hpp"
#include "occfield/rng.hpp"
#include "occfield/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace occ {

using diff::Shape;
using diff::Tensor;
using diff::shape_numel;
using diff::shape_str;
using jsonutil::json;

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int projector_blocks(ProjectorVariant v) {
    switch (v) {
    case ProjectorVariant::ca:
        return 1;
    case ProjectorVariant::ca_ca:
        return 2;
    case ProjectorVariant::ca_sa_ca:
        return 3;
    }
    return 0;
}

bool is_self_attention(ProjectorVariant v, int block) { return v == ProjectorVariant::ca_sa_ca && block == 1; }

// Rows [0, n) of a, followed by rows of b, ...: transposes, joins columns,
// and transposes back.
Tensor concat_rows(std::span<const Tensor> parts) {
    std::vector<Tensor> cols;
    cols.reserve(parts.size());
    for (const auto& p : parts) {
        cols.push_back(diff::transpose_2d(p));
    }
    return diff::transpose_2d(diff::concat_lastdim(cols));
}

// Patch matrix [T, in_ch * patch^2] of one raster; features are ordered
// channel, row, column within the patch.
Tensor patchify(const CameraRaster& r, int patch) {
    const int py = r.height / patch;
    const int px = r.width / patch;
    const int feat = 2 * patch * patch;
    std::vector<double> out(static_cast<std::size_t>(py) * px * feat);
    for (int by = 0; by < py; ++by) {
        for (int bx = 0; bx < px; ++bx) {
            double* row = out.data() + (static_cast<std::size_t>(by) * px + bx) * feat;
            for (int ch = 0; ch < 2; ++ch) {
                const auto& plane = ch == 0 ? r.inverse_depth : r.mask;
                for (int dy = 0; dy < patch; ++dy) {
                    for (int dx = 0; dx < patch; ++dx) {
                        const auto src = static_cast<std::size_t>(by * patch + dy) * r.width + bx * patch + dx;
                        *row++ = plane[src];
                    }
                }
            }
        }
    }
    return Tensor::from({static_cast<std::int64_t>(py) * px, feat}, std::move(out));
}

} // namespace

std::string to_string(ProjectorVariant v) {
    switch (v) {
    case ProjectorVariant::ca:
        return "ca";
    case ProjectorVariant::ca_ca:
        return "ca_ca";
    case ProjectorVariant::ca_sa_ca:
        return "ca_sa_ca";
    }
    return "unknown";
}

ProjectorVariant parse_projector_variant(const std::string& name) {
    if (name == "ca" || name == "CA") {
        return ProjectorVariant::ca;
    }
    if (name == "ca_ca" || name == "CA+CA") {
        return ProjectorVariant::ca_ca;
    }
    if (name == "ca_sa_ca" || name == "CA+SA+CA") {
        return ProjectorVariant::ca_sa_ca;
    }
    throw ConfigError("unknown projector variant '" + name + "' (ca | ca_ca | ca_sa_ca)");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::desk_wide() {
    ModelConfig c;
    c.image_size = 64;
    c.depth = 6;
    c.width = 128;
    c.tapped = {3, 4, 5, 6};
    c.query_channels = 128;
    c.fused_channels = 64;
    c.fuse_width = 128;
    c.decoder_hidden = 128;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.image_size = 16;
    c.patch = 8;
    c.cameras = 2;
    c.depth = 2;
    c.width = 8;
    c.heads = 2;
    c.tapped = {1, 2};
    c.query_side = 4;
    c.query_channels = 8;
    c.fused_side = 8;
    c.fused_channels = 4;
    c.fuse_width = 4;
    c.decoder_hidden = 8;
    c.decoder_blocks = 1;
    return c;
}

ModelConfig ModelConfig::full_scale() {
    ModelConfig c;
    c.image_size = 518;
    c.patch = 14;
    c.cameras = 6;
    c.depth = 24;
    c.width = 1024;
    c.heads = 16;
    c.mlp_ratio = 4;
    c.tapped = {21, 22, 23, 24};
    c.query_side = 32;
    c.query_channels = 1024;
    c.fused_side = 256;
    c.fused_channels = 256;
    c.fuse_width = 256;
    c.decoder_hidden = 256;
    c.decoder_blocks = 5;
    c.roi = RoiBox::full_scale();
    return c;
}

int ModelConfig::upsample_stages() const {
    int stages = 0;
    for (int s = query_side; s < fused_side; s *= 2) {
        ++stages;
    }
    return stages;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
    if (image_size <= 0 || patch <= 0 || image_size % patch != 0) {
        fail("image_size must be a positive multiple of patch");
    }
    if (in_channels != 2) {
        fail("in_channels must be 2 (inverse depth and mask)");
    }
    if (cameras < 1 || depth < 1 || width < 1 || heads < 1 || mlp_ratio < 1) {
        fail("cameras, depth, width, heads and mlp_ratio must be positive");
    }
    if (width % heads != 0 || query_channels % heads != 0) {
        fail("width and query_channels must be divisible by heads");
    }
    if (tapped.empty()) {
        fail("at least one tapped layer is required");
    }
    for (std::size_t i = 0; i < tapped.size(); ++i) {
        if (tapped[i] < 1 || tapped[i] > depth) {
            fail("tapped layer " + std::to_string(tapped[i]) + " outside [1, depth]");
        }
        if (i > 0 && tapped[i] <= tapped[i - 1]) {
            fail("tapped layers must be strictly increasing");
        }
    }
    if (!power_of_two(query_side) || !power_of_two(fused_side)) {
        fail("query_side and fused_side must be powers of two");
    }
    if (fused_side < query_side) {
        fail("fused_side must be >= query_side");
    }
    if (query_channels < 1 || fused_channels < 1 || fuse_width < 1 || decoder_hidden < 1 || decoder_blocks < 0) {
        fail("channel counts must be positive");
    }
    if (!(coord_gain > 0.0) || !std::isfinite(coord_gain)) {
        fail("coord_gain must be positive");
    }
}

ModelConfig ModelConfig::from_json(const json& j) {
    const std::string ctx = "model";
    jsonutil::reject_unknown_keys(j,
                                  {"image_size", "patch", "in_channels", "cameras", "depth", "width", "heads",
                                   "mlp_ratio", "tapped", "query_side", "query_channels", "projector", "fused_side",
                                   "fused_channels", "fuse_width", "decoder_hidden", "decoder_blocks", "coord_gain", "roi",
                                   "seed", "preset"},
                                  ctx);
    ModelConfig c;
    if (j.contains("preset")) {
        const auto preset = jsonutil::get_required<std::string>(j, "preset", ctx);
        if (preset == "desk") {
            c = desk();
        } else if (preset == "desk_wide") {
            c = desk_wide();
        } else if (preset == "tiny") {
            c = tiny();
        } else if (preset == "full_scale") {
            c = full_scale();
        } else {
            throw ConfigError(ctx + ".preset: unknown preset '" + preset + "'");
        }
    }
    c.image_size = jsonutil::get_or(j, "image_size", c.image_size, ctx);
    c.patch = jsonutil::get_or(j, "patch", c.patch, ctx);
    c.in_channels = jsonutil::get_or(j, "in_channels", c.in_channels, ctx);
    c.cameras = jsonutil::get_or(j, "cameras", c.cameras, ctx);
    c.depth = jsonutil::get_or(j, "depth", c.depth, ctx);
    c.width = jsonutil::get_or(j, "width", c.width, ctx);
    c.heads = jsonutil::get_or(j, "heads", c.heads, ctx);
    c.mlp_ratio = jsonutil::get_or(j, "mlp_ratio", c.mlp_ratio, ctx);
    c.tapped = jsonutil::get_or(j, "tapped", c.tapped, ctx);
    c.query_side = jsonutil::get_or(j, "query_side", c.query_side, ctx);
    c.query_channels = jsonutil::get_or(j, "query_channels", c.query_channels, ctx);
    if (j.contains("projector")) {
        c.projector = parse_projector_variant(jsonutil::get_required<std::string>(j, "projector", ctx));
    }
    c.fused_side = jsonutil::get_or(j, "fused_side", c.fused_side, ctx);
    c.fused_channels = jsonutil::get_or(j, "fused_channels", c.fused_channels, ctx);
    c.fuse_width = jsonutil::get_or(j, "fuse_width", c.fuse_width, ctx);
    c.decoder_hidden = jsonutil::get_or(j, "decoder_hidden", c.decoder_hidden, ctx);
    c.decoder_blocks = jsonutil::get_or(j, "decoder_blocks", c.decoder_blocks, ctx);
    c.coord_gain = jsonutil::get_or(j, "coord_gain", c.coord_gain, ctx);
    if (j.contains("roi")) {
        c.roi = jsonutil::roi_from(j.at("roi"), ctx + ".roi");
    }
    c.seed = jsonutil::get_or(j, "seed", c.seed, ctx);
    c.validate();
    return c;
}

json ModelConfig::to_json() const {
    return json{{"image_size", image_size},
                {"patch", patch},
                {"in_channels", in_channels},
                {"cameras", cameras},
                {"depth", depth},
                {"width", width},
                {"heads", heads},
                {"mlp_ratio", mlp_ratio},
                {"tapped", tapped},
                {"query_side", query_side},
                {"query_channels", query_channels},
                {"projector", to_string(projector)},
                {"fused_side", fused_side},
                {"fused_channels", fused_channels},
                {"fuse_width", fuse_width},
                {"decoder_hidden", decoder_hidden},
                {"decoder_blocks", decoder_blocks},
                {"coord_gain", coord_gain},
                {"roi", jsonutil::roi_to(roi)},
                {"seed", seed}};
}

std::vector<int> argmax_camera_map(const AttentionMatrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows), 0);
    for (std::int64_t r = 0; r < m.rows; ++r) {
        double best = -1.0;
        for (std::size_t c = 0; c < m.camera_ranges.size(); ++c) {
            double mass = 0.0;
            for (auto k = m.camera_ranges[c].first; k < m.camera_ranges[c].second; ++k) {
                mass += m.weights[static_cast<std::size_t>(r * m.cols + k)];
            }
            if (mass > best) {
                best = mass;
                out[static_cast<std::size_t>(r)] = static_cast<int>(c);
            }
        }
    }
    return out;
}

std::vector<std::filesystem::path> write_attention_csv(const std::filesystem::path& dir, const AttentionRecord& rec,
                                                       int query_side) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    for (const auto& m : rec.entries) {
        const std::string tag = "layer" + std::to_string(m.layer) + "_block" + std::to_string(m.block) + ".csv";
        const auto attn_path = dir / ("attn_" + tag);
        std::ofstream out(attn_path);
        if (!out) {
            throw IoError("cannot open '" + attn_path.string() + "' for writing");
        }
        out << "query";
        for (std::size_t c = 0; c < m.camera_ranges.size(); ++c) {
            for (auto k = m.camera_ranges[c].first; k < m.camera_ranges[c].second; ++k) {
                out << ",cam" << c << ".t" << (k - m.camera_ranges[c].first);
            }
        }
        out << '\n';
        char buf[32];
        for (std::int64_t r = 0; r < m.rows; ++r) {
            out << r;
            for (std::int64_t k = 0; k < m.cols; ++k) {
                std::snprintf(buf, sizeof buf, ",%.9g", m.weights[static_cast<std::size_t>(r * m.cols + k)]);
                out << buf;
            }
            out << '\n';
        }
        written.push_back(attn_path);

        const auto map_path = dir / ("argmax_" + tag);
        std::ofstream map_out(map_path);
        if (!map_out) {
            throw IoError("cannot open '" + map_path.string() + "' for writing");
        }
        const auto cams = argmax_camera_map(m);
        for (int y = 0; y < query_side; ++y) {
            for (int x = 0; x < query_side; ++x) {
                map_out << (x ? "," : "") << cams[static_cast<std::size_t>(y * query_side + x)];
            }
            map_out << '\n';
        }
        written.push_back(map_path);
    }
    return written;
}

OccupancyModel::OccupancyModel(ModelConfig cfg) : cfg_(std::move(cfg)), encoder_calls_(std::make_shared<std::int64_t>(0)) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.seed, 0x1417));

    auto add = [&](const std::string& name, Shape shape, double stddev, double fill = 0.0) {
        const auto n = static_cast<std::size_t>(shape_numel(shape));
        std::vector<double> v(n, fill);
        if (stddev > 0.0) {
            for (auto& x : v) {
                x = stddev * rng.normal();
            }
        }
        index_.emplace_back(name, params_.size());
        params_.emplace_back(name, Tensor::from(std::move(shape), std::move(v), true));
    };
    auto add_linear = [&](const std::string& prefix, int in, int out, double gain = 1.0) {
        add(prefix + ".weight", {in, out}, gain / std::sqrt(static_cast<double>(in)));
        add(prefix + ".bias", {out}, 0.0);
    };
    auto add_norm = [&](const std::string& prefix, int dim) {
        add(prefix + ".gamma", {dim}, 0.0, 1.0);
        add(prefix + ".beta", {dim}, 0.0);
    };
    auto add_block = [&](const std::string& prefix, int dim, int kv_dim) {
        add_linear(prefix + ".attn.q", dim, dim);
        add_linear(prefix + ".attn.k", kv_dim, dim);
        add_linear(prefix + ".attn.v", kv_dim, dim);
        add_linear(prefix + ".attn.o", dim, dim);
        add_norm(prefix + ".norm1", dim);
        add_linear(prefix + ".mlp.fc1", dim, dim * cfg_.mlp_ratio);
        add_linear(prefix + ".mlp.fc2", dim * cfg_.mlp_ratio, dim);
        add_norm(prefix + ".norm2", dim);
    };

    const int w = cfg_.width;
    add_linear("encoder.patch_embed", cfg_.in_channels * cfg_.patch * cfg_.patch, w);
    add("encoder.pos", {cfg_.tokens_per_camera(), w}, 0.02);
    const int used_depth = cfg_.tapped.back();
    for (int b = 0; b < used_depth; ++b) {
        add_block("encoder.blocks." + std::to_string(b), w, w);
    }

    const int cq = cfg_.query_channels;
    const int cells = cfg_.query_side * cfg_.query_side;
    for (std::size_t s = 0; s < cfg_.tapped.size(); ++s) {
        const std::string p = "proj." + std::to_string(s);
        add(p + ".queries", {cells, cq}, 1.0);
        add(p + ".camera_embed", {cfg_.cameras, w}, 0.02);
        for (int b = 0; b < projector_blocks(cfg_.projector); ++b) {
            add_block(p + ".blocks." + std::to_string(b), cq, is_self_attention(cfg_.projector, b) ? cq : w);
        }
    }

    int channels = cq * static_cast<int>(cfg_.tapped.size());
    int side = cfg_.query_side;
    for (int st = 0; st < cfg_.upsample_stages(); ++st) {
        add_linear("fuse.stage." + std::to_string(st), 9 * channels, cfg_.fuse_width);
        // Nearest 2x upsample folded into the 3x3 neighborhood gather.
        const int out_side = 2 * side;
        for (int k = 0; k < 9; ++k) {
            const int dy = k / 3 - 1;
            const int dx = k % 3 - 1;
            std::vector<std::int64_t> rows(static_cast<std::size_t>(out_side) * out_side, -1);
            for (int y = 0; y < out_side; ++y) {
                for (int x = 0; x < out_side; ++x) {
                    const int ny = y + dy;
                    const int nx = x + dx;
                    if (ny >= 0 && ny < out_side && nx >= 0 && nx < out_side) {
                        rows[static_cast<std::size_t>(y) * out_side + x] = (ny / 2) * side + nx / 2;
                    }
                }
            }
            conv_gather_.push_back(std::move(rows));
        }
        channels = cfg_.fuse_width;
        side = out_side;
    }
    add_linear("fuse.proj", channels, cfg_.fused_channels);

    const int din = cfg_.fused_channels + 3;
    const int h = cfg_.decoder_hidden;
    // The coordinate columns start at the usual scale despite the gain, so
    // only their effective learning rate changes.
    auto add_input_linear = [&](const std::string& prefix) {
        add_linear(prefix, din, h);
        auto values = params_[params_.size() - 2].second.mutable_data();
        for (auto i = static_cast<std::size_t>(cfg_.fused_channels) * h; i < values.size(); ++i) {
            values[i] /= cfg_.coord_gain;
        }
    };
    add_input_linear("decoder.input");
    for (int b = 0; b < cfg_.decoder_blocks; ++b) {
        const std::string p = "decoder.blocks." + std::to_string(b);
        add_input_linear(p + ".inject");
        add_linear(p + ".fc0", h, h);
        add_linear(p + ".fc1", h, h);
    }
    add_linear("decoder.out", h, 1, 0.1);

    std::sort(index_.begin(), index_.end());
}

std::int64_t OccupancyModel::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_) {
        n += t.numel();
    }
    return n;
}

const Tensor& OccupancyModel::parameter(const std::string& name) const {
    const auto it = std::lower_bound(index_.begin(), index_.end(), std::make_pair(name, std::size_t{0}));
    if (it == index_.end() || it->first != name) {
        throw ContractError("model has no parameter '" + name + "'");
    }
    return params_[it->second].second;
}

Tensor OccupancyModel::param(const std::string& name) const { return parameter(name); }

Tensor OccupancyModel::linear(const Tensor& x, const std::string& prefix) const {
    return diff::add(diff::matmul(x, param(prefix + ".weight")), param(prefix + ".bias"));
}

Tensor OccupancyModel::norm(const Tensor& x, const std::string& prefix) const {
    return diff::layer_norm(x, param(prefix + ".gamma"), param(prefix + ".beta"));
}

Tensor OccupancyModel::attention(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
                                 AttentionMatrix* record) const {
    const Tensor q = linear(q_in, prefix + ".q");
    const Tensor k = linear(kv_in, prefix + ".k");
    const Tensor v = linear(kv_in, prefix + ".v");
    const std::int64_t dim = q.dim(1);
    const std::int64_t dh = dim / cfg_.heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(cfg_.heads));
    if (record) {
        record->rows = q.dim(0);
        record->cols = k.dim(0);
        record->weights.assign(static_cast<std::size_t>(record->rows * record->cols), 0.0);
    }
    for (int h = 0; h < cfg_.heads; ++h) {
        const Tensor qh = diff::slice_lastdim(q, h * dh, (h + 1) * dh);
        const Tensor kh = diff::slice_lastdim(k, h * dh, (h + 1) * dh);
        const Tensor vh = diff::slice_lastdim(v, h * dh, (h + 1) * dh);
        const Tensor a = diff::softmax_lastdim(diff::scale(diff::matmul(qh, diff::transpose_2d(kh)), inv));
        if (record) {
            const auto data = a.data();
            for (std::size_t i = 0; i < data.size(); ++i) {
                record->weights[i] += data[i] / cfg_.heads;
            }
        }
        outs.push_back(diff::matmul(a, vh));
    }
    return linear(cfg_.heads == 1 ? outs.front() : diff::concat_lastdim(outs), prefix + ".o");
}

Tensor OccupancyModel::feed_forward(const Tensor& x, const std::string& prefix) const {
    return linear(diff::gelu(linear(x, prefix + ".fc1")), prefix + ".fc2");
}

std::vector<std::vector<Tensor>> OccupancyModel::encode_views(const RenderedViews& views) const {
    if (static_cast<int>(views.cameras.size()) != cfg_.cameras) {
        throw ConfigError("model expects " + std::to_string(cfg_.cameras) + " camera slots, got " +
                          std::to_string(views.cameras.size()));
    }
    for (const auto& r : views.cameras) {
        if (r.height != cfg_.image_size || r.width != cfg_.image_size) {
            throw ConfigError("raster " + std::to_string(r.height) + "x" + std::to_string(r.width) +
                              " does not match model image_size " + std::to_string(cfg_.image_size));
        }
    }
    ++*encoder_calls_;
    std::vector<std::vector<Tensor>> out(cfg_.tapped.size());
    for (const auto& raster : views.cameras) {
        Tensor x = diff::add(linear(patchify(raster, cfg_.patch), "encoder.patch_embed"), param("encoder.pos"));
        std::size_t slot = 0;
        for (int b = 0; b < cfg_.tapped.back(); ++b) {
            const std::string p = "encoder.blocks." + std::to_string(b);
            const Tensor n1 = norm(x, p + ".norm1");
            x = diff::add(x, attention(n1, n1, p + ".attn", nullptr));
            x = diff::add(x, feed_forward(norm(x, p + ".norm2"), p + ".mlp"));
            if (slot < cfg_.tapped.size() && cfg_.tapped[slot] == b + 1) {
                out[slot++].push_back(x);
            }
        }
    }
    return out;
}

Tensor OccupancyModel::project_to_bev(int layer_slot, std::span<const Tensor> camera_tokens,
                                      AttentionRecord* record) const {
    if (layer_slot < 0 || layer_slot >= static_cast<int>(cfg_.tapped.size())) {
        throw ContractError("project_to_bev: layer slot out of range");
    }
    if (static_cast<int>(camera_tokens.size()) != cfg_.cameras) {
        throw DimensionError("project_to_bev: expected one token set per camera slot");
    }
    const std::string p = "proj." + std::to_string(layer_slot);
    const Tensor embed = param(p + ".camera_embed");
    std::vector<Tensor> parts;
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
    std::int64_t offset = 0;
    for (int c = 0; c < cfg_.cameras; ++c) {
        const std::int64_t row = c;
        parts.push_back(diff::add(camera_tokens[static_cast<std::size_t>(c)],
                                  diff::gather_rows(embed, std::span<const std::int64_t>(&row, 1))));
        ranges.emplace_back(offset, offset + camera_tokens[static_cast<std::size_t>(c)].dim(0));
        offset = ranges.back().second;
    }
    const Tensor kv = parts.size() == 1 ? parts.front() : concat_rows(parts);

    Tensor q = param(p + ".queries");
    for (int b = 0; b < projector_blocks(cfg_.projector); ++b) {
        const std::string bp = p + ".blocks." + std::to_string(b);
        const bool self = is_self_attention(cfg_.projector, b);
        AttentionMatrix* rec = nullptr;
        if (record && !self) {
            record->entries.push_back(AttentionMatrix{cfg_.tapped[static_cast<std::size_t>(layer_slot)], b, 0, 0, {},
                                                      ranges});
            rec = &record->entries.back();
        }
        q = norm(diff::add(q, attention(q, self ? q : kv, bp + ".attn", rec)), bp + ".norm1");
        q = norm(diff::add(q, feed_forward(q, bp + ".mlp")), bp + ".norm2");
    }
    return q;
}

Tensor OccupancyModel::fuse_and_upsample(std::span<const Tensor> maps) const {
    if (maps.size() != cfg_.tapped.size()) {
        throw DimensionError("fuse_and_upsample: expected " + std::to_string(cfg_.tapped.size()) + " maps");
    }
    for (const auto& m : maps) {
        if (m.shape() != maps.front().shape()) {
            throw DimensionError("fuse_and_upsample: maps differ in shape");
        }
    }
    Tensor x = maps.size() == 1 ? maps.front() : diff::concat_lastdim(maps);
    for (int st = 0; st < cfg_.upsample_stages(); ++st) {
        std::vector<Tensor> taps;
        taps.reserve(9);
        for (int k = 0; k < 9; ++k) {
            taps.push_back(diff::gather_rows(x, conv_gather_[static_cast<std::size_t>(st * 9 + k)]));
        }
        x = diff::relu(linear(diff::concat_lastdim(taps), "fuse.stage." + std::to_string(st)));
    }
    const Tensor fused = linear(x, "fuse.proj");
    const std::int64_t r = cfg_.fused_side;
    return diff::reshape(diff::transpose_2d(fused), {cfg_.fused_channels, r, r});
}

Tensor OccupancyModel::bev_grid(const RenderedViews& views, AttentionRecord* record) const {
    const auto tokens = encode_views(views);
    std::vector<Tensor> maps;
    maps.reserve(tokens.size());
    for (std::size_t s = 0; s < tokens.size(); ++s) {
        maps.push_back(project_to_bev(static_cast<int>(s), tokens[s], record));
    }
    return fuse_and_upsample(maps);
}

Tensor OccupancyModel::decode_logits(const Tensor& grid, std::span<const Vec3> points) const {
    if (points.empty()) {
        throw ContractError("decode: no query points");
    }
    const auto n = static_cast<std::int64_t>(points.size());
    std::vector<double> xy(static_cast<std::size_t>(n) * 2);
    std::vector<double> xyz(static_cast<std::size_t>(n) * 3);
    for (std::int64_t i = 0; i < n; ++i) {
        const Vec3 q = normalize_point(points[static_cast<std::size_t>(i)], cfg_.roi);
        xy[static_cast<std::size_t>(2 * i)] = q.x();
        xy[static_cast<std::size_t>(2 * i + 1)] = q.y();
        for (int a = 0; a < 3; ++a) {
            xyz[static_cast<std::size_t>(3 * i + a)] = cfg_.coord_gain * q[a];
        }
    }
    const Tensor feat = diff::bilinear_sample_2d(grid, Tensor::from({n, 2}, std::move(xy)));
    const std::vector<Tensor> parts{feat, Tensor::from({n, 3}, std::move(xyz))};
    const Tensor in = diff::concat_lastdim(parts);
    Tensor h = linear(in, "decoder.input");
    for (int b = 0; b < cfg_.decoder_blocks; ++b) {
        const std::string p = "decoder.blocks." + std::to_string(b);
        h = diff::add(h, linear(in, p + ".inject"));
        const Tensor dx = linear(diff::relu(linear(diff::relu(h), p + ".fc0")), p + ".fc1");
        h = diff::add(h, dx);
    }
    return linear(diff::relu(h), "decoder.out");
}

Tensor OccupancyModel::decode_occupancy(const Tensor& grid, std::span<const Vec3> points) const {
    return diff::sigmoid(decode_logits(grid, points));
}

OccupancyFieldHandle::OccupancyFieldHandle(std::shared_ptr<const OccupancyModel> model, const RenderedViews& views)
    : model_(std::move(model)) {
    diff::NoGradGuard guard;
    grid_ = model_->bev_grid(views).detach();
}

std::vector<double> OccupancyFieldHandle::query_logits(std::span<const Vec3> points) const {
    diff::NoGradGuard guard;
    constexpr std::size_t kChunk = 2048;
    std::vector<double> out;
    out.reserve(points.size());
    for (std::size_t begin = 0; begin < points.size(); begin += kChunk) {
        const auto len = std::min(kChunk, points.size() - begin);
        const Tensor logits = model_->decode_logits(grid_, points.subspan(begin, len));
        out.insert(out.end(), logits.data().begin(), logits.data().end());
    }
    return out;
}

std::vector<double> OccupancyFieldHandle::query(std::span<const Vec3> points) const {
    auto out = query_logits(points);
    for (auto& v : out) {
        v = 1.0 / (1.0 + std::exp(-v));
    }
    return out;
}

OccupancyFieldHandle freeze(std::shared_ptr<const OccupancyModel> model, const RenderedViews& views) {
    return OccupancyFieldHandle(std::move(model), views);
}

void save_checkpoint(const std::filesystem::path& path, const OccupancyModel& model) {
    binio::Writer out(path);
    out.magic("VGTC");
    out.put<std::uint32_t>(kCheckpointVersion);
    const std::string cfg = model.config().to_json().dump();
    out.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
    out.bytes(cfg.data(), cfg.size());
    const auto& params = model.parameters();
    out.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        out.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        out.bytes(name.data(), name.size());
        out.put<std::uint8_t>(kDtypeF64);
        out.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) {
            out.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        }
        const auto data = t.data();
        out.bytes(data.data(), data.size() * sizeof(double));
    }
    out.close();
}

OccupancyModel load_checkpoint(const std::filesystem::path& path) {
    binio::Reader in(path);
    in.expect_magic("VGTC");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw IoError("unsupported VGTC version " + std::to_string(version));
    }
    const auto size = std::filesystem::file_size(path);
    const auto cfg_len = in.get<std::uint32_t>();
    if (cfg_len > size) {
        throw IoError("VGTC config length exceeds the file size");
    }
    json cfg_json;
    try {
        cfg_json = json::parse(in.string(cfg_len));
    } catch (const json::parse_error& e) {
        throw IoError("VGTC config is not valid JSON: " + std::string(e.what()));
    }
    OccupancyModel model(ModelConfig::from_json(cfg_json));
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : model.parameters()) {
        by_name[name] = &t;
    }
    const auto count = in.get<std::uint32_t>();
    if (count != by_name.size()) {
        throw IoError("VGTC holds " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(by_name.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = in.get<std::uint32_t>();
        if (name_len > 4096) {
            throw IoError("VGTC tensor name too long");
        }
        const auto name = in.string(name_len);
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw IoError("VGTC tensor '" + name + "' is not a model parameter");
        }
        if (in.get<std::uint8_t>() != kDtypeF64) {
            throw IoError("VGTC tensor '" + name + "' has an unsupported dtype");
        }
        const auto rank = in.get<std::uint8_t>();
        Shape shape(rank);
        for (auto& d : shape) {
            d = in.get<std::uint32_t>();
        }
        Tensor& t = *it->second;
        if (shape != t.shape()) {
            throw IoError("VGTC tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                          shape_str(t.shape()));
        }
        auto data = t.mutable_data();
        in.bytes(data.data(), data.size() * sizeof(double));
        by_name.erase(it);
    }
    return model;
}

} // namespace occ
