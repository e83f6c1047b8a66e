#pragma once

#include <vector>

#include "saanet/attention.hpp"

SAANET_BEGIN_NAMESPACE

/// Flattened multi-level tokens. Spans partition the token rows in level order.
struct FeaturePyramid {
    Tensor tokens;  // [sum N_l x width]
    std::vector<LevelSpan> spans;

    std::size_t width() const { return tokens.size(1); }
    std::size_t token_count() const { return tokens.size(0); }
    std::size_t levels() const { return spans.size(); }
    /// Throws ContractError unless spans tile the token axis exactly.
    void validate() const;

    Tensor level_tokens(std::size_t level) const;
    /// Level `l` as a width x H_l x W_l map.
    Tensor level_map(std::size_t level) const;
    /// Builds a pyramid from same-width C x H x W maps, flattening in order.
    static FeaturePyramid flatten(const std::vector<Tensor>& maps);
    std::vector<Tensor> unflatten() const;
    /// Normalized pixel-centre anchors of every token within its own level.
    ReferencePoints reference_points() const;
};

/// Pre-norm deformable encoder layer over a multi-level token set.
struct FusionLayer {
    LayerNorm norm1, norm2;
    DeformableAttention attn;
    Mlp mlp;

    FusionLayer() = default;
    FusionLayer(const AttentionConfig& cfg, std::size_t levels, std::size_t mlp_ratio, Rng& rng);

    Tensor forward(const Tensor& tokens, const ReferencePoints& ref, const std::vector<LevelSpan>& spans,
                   DeformableTrace* trace = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;
    void zero_branches();
};

struct FusionConfig {
    std::size_t width = 32;  // common token width after projection
    std::size_t heads = 4;
    std::size_t points = 4;
    std::size_t layers = 4;
    std::size_t mlp_ratio = 4;
};

/// Multi-level feature fusion: per-level linear projection to a common width,
/// flattening, positional and scale-level embeddings, and deformable encoder
/// layers sampling every level from every query.
class FeatureFusion {
   public:
    FeatureFusion() = default;
    FeatureFusion(const FusionConfig& cfg, const std::vector<std::size_t>& in_channels, Rng& rng);

    const FusionConfig& config() const { return cfg_; }
    std::size_t levels() const { return projections_.size(); }

    FeaturePyramid project_and_flatten(const std::vector<Tensor>& maps) const;
    /// Adds positional encoding and the scale-level embedding per level.
    FeaturePyramid embed(const FeaturePyramid& pyr) const;
    /// Only the scale-level embedding.
    FeaturePyramid add_level_embedding(const FeaturePyramid& pyr) const;
    FeaturePyramid fuse(const FeaturePyramid& pyr, std::vector<DeformableTrace>* traces = nullptr) const;

    void collect(const std::string& prefix, ParamList& out) const;

    std::vector<Linear>& projections() { return projections_; }
    std::vector<ConvPositionalEncoding>& positional() { return positional_; }
    Tensor& level_embedding() { return level_embedding_; }
    std::vector<FusionLayer>& layers() { return layers_; }
    const std::vector<FusionLayer>& layers() const { return layers_; }

   private:
    FusionConfig cfg_;
    std::vector<Linear> projections_;
    std::vector<ConvPositionalEncoding> positional_;
    Tensor level_embedding_;  // [levels x width]
    std::vector<FusionLayer> layers_;
};

SAANET_END_NAMESPACE
