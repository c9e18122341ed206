// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "occfield/diffcore/optim.hpp"
#include "occfield/diffcore/tensor.hpp"
#include "occfield/geometry.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace occ {

struct RenderedViews;

/// Block layout of each per-layer BEV projector.
enum class ProjectorVariant { ca, ca_ca, ca_sa_ca };

std::string to_string(ProjectorVariant v);
ProjectorVariant parse_projector_variant(const std::string& name);

struct ModelConfig {
    int image_size = 32;
    int patch = 8;
    int in_channels = 2;
    int cameras = 4;
    int depth = 4;
    int width = 64;
    int heads = 4;
    int mlp_ratio = 2;
    /// 1-based encoder block indices whose outputs feed the projectors.
    std::vector<int> tapped{1, 2, 3, 4};
    int query_side = 16;
    int query_channels = 64;
    ProjectorVariant projector = ProjectorVariant::ca_ca;
    int fused_side = 64;
    int fused_channels = 32;
    /// Width of the upsampling convolutions.
    int fuse_width = 64;
    int decoder_hidden = 64;
    int decoder_blocks = 2;
    /// Scale applied to the normalized xyz decoder input; the matching
    /// weight rows start divided by it.
    double coord_gain = 16.0;
    RoiBox roi = RoiBox::desk();
    std::uint64_t seed = 0;

    /// Shrunk default sized for a single CPU core.
    static ModelConfig desk();
    /// Patch 8, depth 6, width 128, 16x16x128 queries, 64x64x64 fused,
    /// decoder 2x128.
    static ModelConfig desk_wide();
    /// 2 cameras, 16x16 rasters; used by gradient checks.
    static ModelConfig tiny();
    /// Full-scale sizes: 32x32 queries with 1024 channels, 256x256x256 fused.
    static ModelConfig full_scale();

    int tokens_per_camera() const { return (image_size / patch) * (image_size / patch); }
    int upsample_stages() const;

    /// Throws ConfigError on violated invariants.
    void validate() const;
    static ModelConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// One post-softmax attention matrix (rows: queries, columns: image tokens),
/// averaged over heads.
struct AttentionMatrix {
    int layer = 0; ///< tapped encoder layer (1-based)
    int block = 0; ///< cross-attention block index within the projector
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> weights;
    /// [begin, end) token columns per camera slot.
    std::vector<std::pair<std::int64_t, std::int64_t>> camera_ranges;
};

struct AttentionRecord {
    std::vector<AttentionMatrix> entries;
};

/// Per BEV cell, the camera slot receiving the most attention mass.
std::vector<int> argmax_camera_map(const AttentionMatrix& m);

/// Writes attn_layer<L>_block<B>.csv per entry plus argmax_layer<L>_block<B>.csv
/// (query_side x query_side camera indices). Returns the written paths.
std::vector<std::filesystem::path> write_attention_csv(const std::filesystem::path& dir, const AttentionRecord& rec,
                                                       int query_side);

class OccupancyModel {
public:
    /// Initializes every parameter from cfg.seed.
    explicit OccupancyModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    diff::NamedParameters& parameters() { return params_; }
    const diff::NamedParameters& parameters() const { return params_; }
    std::int64_t parameter_count() const;

    /// tokens[l][c]: camera c's tokens after tapped layer l, [T, width].
    /// Cameras are encoded independently.
    std::vector<std::vector<diff::Tensor>> encode_views(const RenderedViews& views) const;

    /// Two (or one, or three) attention blocks for tapped layer `layer_slot`
    /// (0-based position in cfg.tapped). Returns [side*side, query_channels],
    /// row index = iy * side + ix.
    diff::Tensor project_to_bev(int layer_slot, std::span<const diff::Tensor> camera_tokens,
                                AttentionRecord* record = nullptr) const;

    /// Concat, upsample/convolve, project. Returns the fused grid [C_f, R, R].
    diff::Tensor fuse_and_upsample(std::span<const diff::Tensor> maps) const;

    /// Full image-to-grid path.
    diff::Tensor bev_grid(const RenderedViews& views, AttentionRecord* record = nullptr) const;

    /// Pre-sigmoid occupancy logits [N, 1]. Points must lie in the ROI.
    diff::Tensor decode_logits(const diff::Tensor& grid, std::span<const Vec3> points) const;
    /// sigmoid(decode_logits).
    diff::Tensor decode_occupancy(const diff::Tensor& grid, std::span<const Vec3> points) const;

    std::int64_t encoder_calls() const { return *encoder_calls_; }

    /// Looks up a parameter by name.
    const diff::Tensor& parameter(const std::string& name) const;

private:
    diff::Tensor param(const std::string& name) const;
    diff::Tensor linear(const diff::Tensor& x, const std::string& prefix) const;
    diff::Tensor norm(const diff::Tensor& x, const std::string& prefix) const;
    diff::Tensor attention(const diff::Tensor& q_in, const diff::Tensor& kv_in, const std::string& prefix,
                           AttentionMatrix* record) const;
    diff::Tensor feed_forward(const diff::Tensor& x, const std::string& prefix) const;

    ModelConfig cfg_;
    diff::NamedParameters params_;
    std::vector<std::pair<std::string, std::size_t>> index_;
    std::vector<std::vector<std::int64_t>> conv_gather_;
    std::shared_ptr<std::int64_t> encoder_calls_;
};

/// Frozen inference handle: the fused grid is computed once at freeze time
/// and every query afterwards runs only the decoder.
class OccupancyFieldHandle {
public:
    OccupancyFieldHandle(std::shared_ptr<const OccupancyModel> model, const RenderedViews& views);

    const ModelConfig& config() const { return model_->config(); }
    const diff::Tensor& grid() const { return grid_; }
    const OccupancyModel& model() const { return *model_; }

    /// Probabilities in (0,1), one per point, same order. Throws OutOfRoiError.
    std::vector<double> query(std::span<const Vec3> points) const;
    std::vector<double> query_logits(std::span<const Vec3> points) const;

private:
    std::shared_ptr<const OccupancyModel> model_;
    diff::Tensor grid_;
};

OccupancyFieldHandle freeze(std::shared_ptr<const OccupancyModel> model, const RenderedViews& views);

// VGTC: "VGTC" | u32 version | u32 config JSON length | bytes | u32 tensor
// count | per tensor: u32 name length, bytes, u8 dtype (1 = f64), u8 rank,
// rank x u32 dims, f64 payload.
void save_checkpoint(const std::filesystem::path& path, const OccupancyModel& model);
OccupancyModel load_checkpoint(const std::filesystem::path& path);

} // namespace occ
