#pragma once

#include <vector>

#include "saanet/fusion.hpp"

SAANET_BEGIN_NAMESPACE

/// Per-head attention of the count query over every pyramid token.
struct RecalibrationMap {
    Tensor weights;  // [heads x N]; each row sums to 1

    std::size_t heads() const { return weights.size(0); }
    std::size_t tokens() const { return weights.size(1); }
};

struct CountPrediction {
    Tensor count;  // [1], nonnegative
    RecalibrationMap recal;
};

/// Pre-norm transformer decoder layer for a single query token.
struct DecoderLayer {
    LayerNorm norm1, norm2, norm3;
    GlobalAttention self_attn;
    GlobalAttention cross_attn;
    Mlp mlp;

    DecoderLayer() = default;
    DecoderLayer(const AttentionConfig& cfg, std::size_t mlp_ratio, Rng& rng);

    /// Returns the updated query; `cross_weights` receives [heads x 1 x N].
    Tensor forward(const Tensor& query, const Tensor& memory, Tensor* cross_weights) const;
    void collect(const std::string& prefix, ParamList& out) const;
    void zero();
};

struct CafeConfig {
    std::size_t width = 32;
    std::size_t heads = 4;
    std::size_t layers = 4;
    std::size_t mlp_ratio = 4;
};

/// Count-attentive feature enhancement: a learned count query decodes the
/// pyramid, regresses the scene count, and its last cross-attention maps
/// re-calibrate the feature tokens.
class CafeDecoder {
   public:
    CafeDecoder() = default;
    CafeDecoder(const CafeConfig& cfg, Rng& rng);

    const CafeConfig& config() const { return cfg_; }
    CountPrediction decode_count(const FeaturePyramid& pyr) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor& count_query() { return count_query_; }
    std::vector<DecoderLayer>& layers() { return layers_; }
    Linear& count_head() { return count_head_; }
    /// Zeroes every weight and bias of the decoder layers and count head.
    void zero();

   private:
    CafeConfig cfg_;
    Tensor count_query_;  // [1 x width]
    std::vector<DecoderLayer> layers_;
    LayerNorm final_norm_;
    Linear count_head_;
};

/// Channel group h of token n is multiplied by N * recal[h, n]; a uniform
/// attention row therefore leaves the features unchanged.
FeaturePyramid recalibrate(const FeaturePyramid& pyr, const RecalibrationMap& recal);

SAANET_END_NAMESPACE
