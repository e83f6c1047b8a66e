#include "saanet/fusion.hpp"

SAANET_BEGIN_NAMESPACE

void FeaturePyramid::validate() const {
    if (!tokens.defined() || tokens.dim() != 2) throw ContractError("pyramid tokens must be N x d");
    if (spans.empty()) throw ContractError("pyramid has no levels");
    std::size_t next = 0;
    for (const auto& s : spans) {
        if (s.start != next || s.tokens() == 0) throw ContractError("pyramid spans do not tile the token axis");
        next += s.tokens();
    }
    if (next != tokens.size(0)) {
        throw ContractError("pyramid spans cover " + std::to_string(next) + " of " + std::to_string(tokens.size(0)) + " tokens");
    }
}

Tensor FeaturePyramid::level_tokens(std::size_t level) const {
    const auto& s = spans.at(level);
    return spans.size() == 1 ? tokens : slice(tokens, 0, s.start, s.tokens());
}

Tensor FeaturePyramid::level_map(std::size_t level) const {
    const auto& s = spans.at(level);
    return tokens_to_map(level_tokens(level), s.height, s.width);
}

FeaturePyramid FeaturePyramid::flatten(const std::vector<Tensor>& maps) {
    if (maps.empty()) throw ContractError("pyramid needs at least one level");
    FeaturePyramid pyr;
    std::vector<Tensor> parts;
    std::size_t start = 0;
    for (const auto& m : maps) {
        if (m.dim() != 3 || m.size(0) != maps[0].size(0)) {
            throw DimensionError("pyramid levels must be C x H x W with a common C, got " + to_string(m.shape()));
        }
        parts.push_back(map_to_tokens(m));
        pyr.spans.push_back({start, m.size(1), m.size(2)});
        start += m.size(1) * m.size(2);
    }
    pyr.tokens = parts.size() == 1 ? parts[0] : concat(parts, 0);
    return pyr;
}

std::vector<Tensor> FeaturePyramid::unflatten() const {
    std::vector<Tensor> maps;
    for (std::size_t l = 0; l < spans.size(); ++l) maps.push_back(level_map(l));
    return maps;
}

ReferencePoints FeaturePyramid::reference_points() const {
    ReferencePoints ref;
    for (std::size_t l = 0; l < spans.size(); ++l) {
        const auto g = grid_reference_points(spans[l].height, spans[l].width, l);
        ref.xy.insert(ref.xy.end(), g.xy.begin(), g.xy.end());
        ref.level.insert(ref.level.end(), g.level.begin(), g.level.end());
    }
    return ref;
}

FusionLayer::FusionLayer(const AttentionConfig& cfg, std::size_t levels, std::size_t mlp_ratio, Rng& rng)
    : norm1(cfg.d_model), norm2(cfg.d_model), attn(cfg, levels, rng), mlp(cfg.d_model, cfg.d_model * mlp_ratio, rng) {}

Tensor FusionLayer::forward(const Tensor& tokens, const ReferencePoints& ref, const std::vector<LevelSpan>& spans,
                            DeformableTrace* trace) const {
    const Tensor normed = norm1(tokens);
    Tensor t = add(tokens, attn.forward(normed, ref, normed, spans, trace));
    return add(t, mlp(norm2(t)));
}

void FusionLayer::collect(const std::string& prefix, ParamList& out) const {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
}

void FusionLayer::zero_branches() {
    attn.zero();
    mlp.zero();
}

FeatureFusion::FeatureFusion(const FusionConfig& cfg, const std::vector<std::size_t>& in_channels, Rng& rng)
    : cfg_(cfg), level_embedding_(make_param({in_channels.size(), cfg.width})) {
    if (in_channels.empty()) throw ConfigError("fusion needs at least one input level");
    const AttentionConfig acfg{cfg.width, cfg.heads, cfg.points, 0.0};
    acfg.validate();
    for (auto c : in_channels) {
        projections_.emplace_back(c, cfg.width, rng);
        positional_.emplace_back(cfg.width, rng);
    }
    fill_normal(level_embedding_, rng, 0.02);
    for (std::size_t i = 0; i < cfg.layers; ++i) layers_.emplace_back(acfg, in_channels.size(), cfg.mlp_ratio, rng);
}

FeaturePyramid FeatureFusion::project_and_flatten(const std::vector<Tensor>& maps) const {
    if (maps.size() != projections_.size()) {
        throw ContractError("fusion expects " + std::to_string(projections_.size()) + " levels, got " + std::to_string(maps.size()));
    }
    FeaturePyramid pyr;
    std::vector<Tensor> parts;
    std::size_t start = 0;
    for (std::size_t l = 0; l < maps.size(); ++l) {
        const Tensor& m = maps[l];
        if (m.dim() != 3 || m.size(0) != projections_[l].in_features()) {
            throw DimensionError("fusion level " + std::to_string(l) + ": expected " +
                                 std::to_string(projections_[l].in_features()) + " channels, got " + to_string(m.shape()));
        }
        parts.push_back(projections_[l](map_to_tokens(m)));
        pyr.spans.push_back({start, m.size(1), m.size(2)});
        start += m.size(1) * m.size(2);
    }
    pyr.tokens = parts.size() == 1 ? parts[0] : concat(parts, 0);
    return pyr;
}

FeaturePyramid FeatureFusion::add_level_embedding(const FeaturePyramid& pyr) const {
    pyr.validate();
    std::vector<std::size_t> ids;
    ids.reserve(pyr.token_count());
    for (std::size_t l = 0; l < pyr.levels(); ++l) ids.insert(ids.end(), pyr.spans[l].tokens(), l);
    return {add(pyr.tokens, embedding(level_embedding_, ids)), pyr.spans};
}

FeaturePyramid FeatureFusion::embed(const FeaturePyramid& pyr) const {
    pyr.validate();
    if (pyr.levels() != levels()) throw ContractError("pyramid level count does not match fusion");
    std::vector<Tensor> maps;
    for (std::size_t l = 0; l < pyr.levels(); ++l) maps.push_back(positional_[l](pyr.level_map(l)));
    return add_level_embedding(FeaturePyramid::flatten(maps));
}

FeaturePyramid FeatureFusion::fuse(const FeaturePyramid& pyr, std::vector<DeformableTrace>* traces) const {
    FeaturePyramid out = embed(pyr);
    const ReferencePoints ref = out.reference_points();
    for (const auto& layer : layers_) {
        DeformableTrace* tr = traces ? &traces->emplace_back() : nullptr;
        out.tokens = layer.forward(out.tokens, ref, out.spans, tr);
    }
    return out;
}

void FeatureFusion::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t l = 0; l < projections_.size(); ++l) {
        projections_[l].collect(prefix + ".proj" + std::to_string(l), out);
        positional_[l].collect(prefix + ".pos" + std::to_string(l), out);
    }
    add_param(out, prefix + ".level_embedding", level_embedding_);
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
}

SAANET_END_NAMESPACE
