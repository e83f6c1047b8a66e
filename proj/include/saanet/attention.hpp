#pragma once

#include <vector>

#include "saanet/nn.hpp"

SAANET_BEGIN_NAMESPACE

struct AttentionConfig {
    std::size_t d_model = 32;
    std::size_t heads = 2;
    std::size_t points = 4;  // sampled keys per head per level (deformable only)
    double dropout_rate = 0.0;

    /// Throws ConfigError when d_model is not divisible by heads, points is 0,
    /// or the dropout rate is outside [0, 1).
    void validate() const;
    std::size_t head_dim() const { return d_model / heads; }
};

/// Normalized (x, y) anchors in [0, 1]^2, one per query token.
struct ReferencePoints {
    std::vector<Real> xy;  // interleaved x, y
    std::vector<std::size_t> level;

    std::size_t size() const { return xy.size() / 2; }
    void validate() const;
};

/// Pixel-centre anchors of an H x W grid in row-major order.
ReferencePoints grid_reference_points(std::size_t height, std::size_t width, std::size_t level = 0);

/// Inverted dropout; identity when rate is 0 or rng is null.
Tensor dropout(const Tensor& x, double rate, Rng* rng);

/// Multi-head scaled dot-product attention with learned Q/K/V/output maps.
struct GlobalAttention {
    AttentionConfig cfg;
    Linear query, key, value, output;
    Rng* dropout_rng = nullptr;

    GlobalAttention() = default;
    GlobalAttention(const AttentionConfig& cfg, Rng& rng);

    /// queries[Nq x d] attend to context[Nk x d]. When `weights_out` is set it
    /// receives the [heads x Nq x Nk] attention weights (still on the tape).
    Tensor forward(const Tensor& queries, const Tensor& context, Tensor* weights_out = nullptr) const;
    Tensor operator()(const Tensor& z) const { return forward(z, z); }
    void collect(const std::string& prefix, ParamList& out) const;
    void zero();
};

Tensor global_attention(const Tensor& z, const GlobalAttention& attn);

/// Per-call record of predicted offsets and normalized weights.
struct DeformableTrace {
    Tensor offsets;  // [N x heads*L*K*2], pixel units of the sampled level
    Tensor weights;  // [N x heads*L*K]
};

/// Deformable attention: each query samples K points per head per level around
/// its reference point. Offsets and attention logits are one linear map each
/// over the query feature; values are projected without bias before sampling.
struct DeformableAttention {
    AttentionConfig cfg;
    std::size_t levels = 1;
    Linear offsets;  // d -> heads*L*K*2
    Linear logits;   // d -> heads*L*K
    Linear value;    // d -> d, no bias
    Linear output;   // d -> d
    Rng* dropout_rng = nullptr;

    DeformableAttention() = default;
    DeformableAttention(const AttentionConfig& cfg, std::size_t levels, Rng& rng);

    /// query[N x d]; value_tokens[sum(H_l W_l) x d] laid out per `spans`.
    Tensor forward(const Tensor& query, const ReferencePoints& ref, const Tensor& value_tokens,
                   const std::vector<LevelSpan>& spans, DeformableTrace* trace = nullptr) const;
    /// Same, with the value levels given as C x H_l x W_l maps.
    Tensor forward(const Tensor& query, const ReferencePoints& ref, const std::vector<Tensor>& feat_levels,
                   DeformableTrace* trace = nullptr) const;

    void collect(const std::string& prefix, ParamList& out) const;
    /// Resets offsets to the default direction pattern and logits to zero.
    void reset_sampling(bool zero_offsets = false);
    void zero();
};

Tensor deformable_attention(const Tensor& z, const ReferencePoints& points, const std::vector<Tensor>& feat_levels,
                            const DeformableAttention& attn);

/// x + depthwise3x3(x), stride 1, shape preserving.
struct ConvPositionalEncoding {
    Conv2d conv;

    ConvPositionalEncoding() = default;
    ConvPositionalEncoding(std::size_t channels, Rng& rng);

    Tensor operator()(const Tensor& x) const { return add(x, conv(x)); }
    void collect(const std::string& prefix, ParamList& out) const { conv.collect(prefix, out); }
    void zero() { conv.zero(); }
};

SAANET_END_NAMESPACE
