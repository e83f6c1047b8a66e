#pragma once

#include <array>
#include <string>
#include <vector>

#include "saanet/attention.hpp"

SAANET_BEGIN_NAMESPACE

enum class BlockKind { Deformable, Global };

const char* to_string(BlockKind kind);

struct StageConfig {
    std::size_t patch = 3;
    std::size_t stride = 2;
    std::size_t channels = 0;
    std::size_t heads = 1;
    std::size_t deformable_blocks = 0;  // DA-only blocks
    std::size_t paired_blocks = 0;      // DA/GSA pairs
};

/// Four-stage hierarchy. Stages 1-2 hold DA blocks only, stages 3-4 DA/GSA pairs.
struct DeformerConfig {
    std::string name = "tiny";
    std::array<StageConfig, 4> stages{};
    std::size_t points = 4;
    std::size_t mlp_ratio = 4;

    /// Full-width settings divided by `width_divisor` (channels only).
    static DeformerConfig tiny(std::size_t width_divisor = 1);
    static DeformerConfig small(std::size_t width_divisor = 1);
    static DeformerConfig base(std::size_t width_divisor = 1);
    static DeformerConfig named(const std::string& name, std::size_t width_divisor = 1);

    std::vector<BlockKind> block_kinds(std::size_t stage) const;
    void validate() const;
};

/// Feature map of one stage plus its index (1-based).
struct StageOutput {
    Tensor map;  // C x H x W
    std::size_t stage = 0;

    std::size_t channels() const { return map.size(0); }
    std::size_t height() const { return map.size(1); }
    std::size_t width() const { return map.size(2); }
};

/// Overlapped patch embedding/merging: conv with kernel P, the given stride and
/// padding floor(P/2), followed by a channel LayerNorm.
struct PatchEmbed {
    Conv2d proj;
    LayerNorm norm;
    std::size_t patch = 0;

    PatchEmbed() = default;
    PatchEmbed(std::size_t in_channels, std::size_t out_channels, std::size_t patch, std::size_t stride, Rng& rng);

    StageOutput forward(const Tensor& x, std::size_t stage) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

StageOutput patch_embed(const Tensor& img, const PatchEmbed& embed);

/// Positional encoding, pre-norm attention with residual, pre-norm MLP with residual.
struct EncoderBlock {
    BlockKind kind = BlockKind::Deformable;
    ConvPositionalEncoding pos;
    LayerNorm norm1, norm2;
    DeformableAttention deformable;  // used when kind == Deformable
    GlobalAttention global;          // used when kind == Global
    Mlp mlp;

    EncoderBlock() = default;
    EncoderBlock(BlockKind kind, std::size_t channels, std::size_t heads, std::size_t points, std::size_t mlp_ratio, Rng& rng);

    StageOutput forward(const StageOutput& x, DeformableTrace* trace = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;
    /// Zeroes the positional, attention and MLP branches (the block becomes the identity).
    void zero_branches();
};

StageOutput encoder_block(const StageOutput& x, const EncoderBlock& block);

struct Stage {
    PatchEmbed embed;
    std::vector<EncoderBlock> blocks;
    LayerNorm norm;
};

struct BackboneFeatures {
    std::array<StageOutput, 4> stages;
    const StageOutput& f2() const { return stages[1]; }
    const StageOutput& f3() const { return stages[2]; }
    const StageOutput& f4() const { return stages[3]; }
};

/// Deformable-attention traces of every DA block, grouped by stage.
struct BackboneTrace {
    std::array<std::vector<DeformableTrace>, 4> stages;
};

class Deformer {
   public:
    Deformer() = default;
    Deformer(const DeformerConfig& cfg, Rng& rng);

    const DeformerConfig& config() const { return cfg_; }
    /// Input extents must be divisible by 32.
    BackboneFeatures forward(const Tensor& img, BackboneTrace* trace = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;

    std::array<Stage, 4>& stages() { return stages_; }
    const std::array<Stage, 4>& stages() const { return stages_; }

   private:
    DeformerConfig cfg_;
    std::array<Stage, 4> stages_;
};

BackboneFeatures forward_backbone(const Tensor& img, const Deformer& model);

/// Throws ConfigError unless H and W are multiples of 32.
void check_backbone_input(const Shape& img_shape);

SAANET_END_NAMESPACE
