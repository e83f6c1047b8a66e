#include "saanet/cafe.hpp"

SAANET_BEGIN_NAMESPACE

DecoderLayer::DecoderLayer(const AttentionConfig& cfg, std::size_t mlp_ratio, Rng& rng)
    : norm1(cfg.d_model),
      norm2(cfg.d_model),
      norm3(cfg.d_model),
      self_attn(cfg, rng),
      cross_attn(cfg, rng),
      mlp(cfg.d_model, cfg.d_model * mlp_ratio, rng) {}

Tensor DecoderLayer::forward(const Tensor& query, const Tensor& memory, Tensor* cross_weights) const {
    Tensor q = add(query, self_attn(norm1(query)));
    q = add(q, cross_attn.forward(norm2(q), memory, cross_weights));
    return add(q, mlp(norm3(q)));
}

void DecoderLayer::collect(const std::string& prefix, ParamList& out) const {
    norm1.collect(prefix + ".norm1", out);
    self_attn.collect(prefix + ".self_attn", out);
    norm2.collect(prefix + ".norm2", out);
    cross_attn.collect(prefix + ".cross_attn", out);
    norm3.collect(prefix + ".norm3", out);
    mlp.collect(prefix + ".mlp", out);
}

void DecoderLayer::zero() {
    self_attn.zero();
    cross_attn.zero();
    mlp.zero();
}

CafeDecoder::CafeDecoder(const CafeConfig& cfg, Rng& rng)
    : cfg_(cfg), count_query_(make_param({1, cfg.width})), final_norm_(cfg.width), count_head_(cfg.width, 1, rng) {
    const AttentionConfig acfg{cfg.width, cfg.heads, 1, 0.0};
    acfg.validate();
    if (cfg.layers == 0) throw ConfigError("CAFE decoder needs at least one layer");
    fill_normal(count_query_, rng, 1.0);
    for (std::size_t i = 0; i < cfg.layers; ++i) layers_.emplace_back(acfg, cfg.mlp_ratio, rng);
}

CountPrediction CafeDecoder::decode_count(const FeaturePyramid& pyr) const {
    pyr.validate();
    if (pyr.width() != cfg_.width) {
        throw DimensionError("CAFE width " + std::to_string(cfg_.width) + " does not match pyramid width " +
                             std::to_string(pyr.width()));
    }
    Tensor q = count_query_;
    Tensor cross;
    for (const auto& layer : layers_) q = layer.forward(q, pyr.tokens, &cross);
    CountPrediction out;
    out.count = reshape(softplus(count_head_(final_norm_(q))), {1});
    out.recal.weights = reshape(cross, {cfg_.heads, pyr.token_count()});
    return out;
}

void CafeDecoder::collect(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".count_query", count_query_);
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
    final_norm_.collect(prefix + ".final_norm", out);
    count_head_.collect(prefix + ".count_head", out);
}

void CafeDecoder::zero() {
    for (auto& l : layers_) l.zero();
    count_head_.zero();
}

FeaturePyramid recalibrate(const FeaturePyramid& pyr, const RecalibrationMap& recal) {
    pyr.validate();
    if (recal.weights.dim() != 2 || recal.tokens() != pyr.token_count()) {
        throw DimensionError("recalibration map " + to_string(recal.weights.shape()) + " does not cover " +
                             std::to_string(pyr.token_count()) + " tokens");
    }
    if (pyr.width() % recal.heads() != 0) {
        throw ConfigError("recalibration: " + std::to_string(recal.heads()) + " heads do not divide width " +
                          std::to_string(pyr.width()));
    }
    const Tensor per_token = scale(transpose(recal.weights), static_cast<Real>(pyr.token_count()));
    return {group_scale(pyr.tokens, per_token), pyr.spans};
}

SAANET_END_NAMESPACE
