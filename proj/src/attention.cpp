#include "saanet/attention.hpp"

#include <cmath>
#include <numbers>

SAANET_BEGIN_NAMESPACE

void AttentionConfig::validate() const {
    if (heads == 0 || d_model == 0 || d_model % heads != 0) {
        throw ConfigError("attention: d_model " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (points == 0) throw ConfigError("attention: need at least one sampling point");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("attention: dropout rate must be in [0, 1)");
}

void ReferencePoints::validate() const {
    if (xy.size() % 2 != 0) throw ContractError("reference points: odd coordinate count");
    for (Real v : xy) {
        if (!(v >= 0 && v <= 1)) throw ContractError("reference points must lie in [0, 1]");
    }
    if (!level.empty() && level.size() != size()) throw ContractError("reference points: level ids do not match points");
}

ReferencePoints grid_reference_points(std::size_t height, std::size_t width, std::size_t level) {
    ReferencePoints ref;
    ref.xy.reserve(2 * height * width);
    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            ref.xy.push_back((static_cast<Real>(j) + Real(0.5)) / static_cast<Real>(width));
            ref.xy.push_back((static_cast<Real>(i) + Real(0.5)) / static_cast<Real>(height));
        }
    }
    ref.level.assign(height * width, level);
    return ref;
}

Tensor dropout(const Tensor& x, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    Tensor mask(x.shape());
    const Real keep = static_cast<Real>(1.0 / (1.0 - rate));
    for (auto& m : mask.data()) m = rng->uniform() < rate ? Real(0) : keep;
    return mul(x, mask);
}

GlobalAttention::GlobalAttention(const AttentionConfig& c, Rng& rng)
    : cfg(c),
      query(c.d_model, c.d_model, rng),
      key(c.d_model, c.d_model, rng),
      value(c.d_model, c.d_model, rng),
      output(c.d_model, c.d_model, rng) {
    cfg.validate();
}

Tensor GlobalAttention::forward(const Tensor& queries, const Tensor& context, Tensor* weights_out) const {
    cfg.validate();
    const Tensor a = attention_weights(query(queries), key(context), cfg.heads);
    if (weights_out) *weights_out = a;
    const Tensor mixed = attention_apply(a, value(context), cfg.heads);
    return dropout(output(mixed), cfg.dropout_rate, dropout_rng);
}

void GlobalAttention::collect(const std::string& prefix, ParamList& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
}

void GlobalAttention::zero() {
    query.zero();
    key.zero();
    value.zero();
    output.zero();
}

Tensor global_attention(const Tensor& z, const GlobalAttention& attn) { return attn(z); }

DeformableAttention::DeformableAttention(const AttentionConfig& c, std::size_t lv, Rng& rng)
    : cfg(c),
      levels(lv),
      offsets(c.d_model, c.heads * lv * c.points * 2, rng),
      logits(c.d_model, c.heads * lv * c.points, rng),
      value(c.d_model, c.d_model, rng, /*with_bias=*/false),
      output(c.d_model, c.d_model, rng) {
    cfg.validate();
    if (levels == 0) throw ConfigError("deformable attention: need at least one level");
    reset_sampling();
}

void DeformableAttention::reset_sampling(bool zero_offsets) {
    offsets.zero();
    logits.zero();
    if (zero_offsets) return;
    // Head h starts on a ray at angle 2*pi*h/heads, point k at distance k+1
    // (chebyshev-normalized direction), identically on every level.
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(cfg.heads);
        double dx = std::cos(theta), dy = std::sin(theta);
        const double norm = std::max(std::abs(dx), std::abs(dy));
        dx /= norm;
        dy /= norm;
        for (std::size_t l = 0; l < levels; ++l) {
            for (std::size_t k = 0; k < cfg.points; ++k) {
                const std::size_t s = (h * levels + l) * cfg.points + k;
                offsets.bias[2 * s] = static_cast<Real>(dx * static_cast<double>(k + 1));
                offsets.bias[2 * s + 1] = static_cast<Real>(dy * static_cast<double>(k + 1));
            }
        }
    }
}

Tensor DeformableAttention::forward(const Tensor& query, const ReferencePoints& ref, const Tensor& value_tokens,
                                    const std::vector<LevelSpan>& spans, DeformableTrace* trace) const {
    cfg.validate();
    if (query.dim() != 2 || query.size(1) != cfg.d_model) {
        throw DimensionError("deformable attention: query must be N x " + std::to_string(cfg.d_model) + ", got " +
                             to_string(query.shape()));
    }
    if (ref.size() != query.size(0)) {
        throw ContractError("deformable attention: " + std::to_string(ref.size()) + " reference points for " +
                            std::to_string(query.size(0)) + " queries");
    }
    if (spans.size() != levels) {
        throw ContractError("deformable attention: configured for " + std::to_string(levels) + " levels, got " +
                            std::to_string(spans.size()));
    }
    const std::size_t n = query.size(0);
    const std::size_t per_q = cfg.heads * levels * cfg.points;
    const Tensor off = offsets(query);
    const Tensor w = reshape(softmax(reshape(logits(query), {n * cfg.heads, levels * cfg.points}), 1), {n, per_q});
    if (trace) {
        trace->offsets = off.detach();
        trace->weights = w.detach();
    }
    DeformableSampleLayout layout{cfg.heads, cfg.points, spans};
    const Tensor sampled = deformable_sample(value(value_tokens), ref.xy, off, w, layout);
    return dropout(output(sampled), cfg.dropout_rate, dropout_rng);
}

Tensor DeformableAttention::forward(const Tensor& query, const ReferencePoints& ref, const std::vector<Tensor>& feat_levels,
                                    DeformableTrace* trace) const {
    if (feat_levels.empty()) throw ContractError("deformable attention: no feature levels");
    std::vector<Tensor> tokens;
    std::vector<LevelSpan> spans;
    std::size_t start = 0;
    for (const auto& f : feat_levels) {
        if (f.dim() != 3) throw DimensionError("deformable attention: level must be C x H x W, got " + to_string(f.shape()));
        tokens.push_back(map_to_tokens(f));
        spans.push_back({start, f.size(1), f.size(2)});
        start += f.size(1) * f.size(2);
    }
    const Tensor values = tokens.size() == 1 ? tokens[0] : concat(tokens, 0);
    return forward(query, ref, values, spans, trace);
}

void DeformableAttention::collect(const std::string& prefix, ParamList& out) const {
    offsets.collect(prefix + ".offsets", out);
    logits.collect(prefix + ".logits", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
}

void DeformableAttention::zero() {
    offsets.zero();
    logits.zero();
    value.zero();
    output.zero();
}

Tensor deformable_attention(const Tensor& z, const ReferencePoints& points, const std::vector<Tensor>& feat_levels,
                            const DeformableAttention& attn) {
    return attn.forward(z, points, feat_levels);
}

ConvPositionalEncoding::ConvPositionalEncoding(std::size_t channels, Rng& rng)
    : conv(channels, channels, 3, Conv2dParams{1, 1, channels}, rng) {}

SAANET_END_NAMESPACE
