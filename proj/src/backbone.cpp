#include "saanet/backbone.hpp"

SAANET_BEGIN_NAMESPACE

const char* to_string(BlockKind kind) { return kind == BlockKind::Deformable ? "DA" : "GSA"; }

namespace {

constexpr std::array<std::size_t, 4> kStageHeads = {2, 4, 8, 16};

DeformerConfig make_config(std::string name, std::array<std::size_t, 4> widths, std::size_t stage3_pairs, std::size_t divisor) {
    if (divisor == 0) throw ConfigError("width divisor must be positive");
    DeformerConfig cfg;
    cfg.name = std::move(name);
    for (std::size_t i = 0; i < 4; ++i) {
        auto& s = cfg.stages[i];
        s.patch = i == 0 ? 7 : 3;
        s.stride = i == 0 ? 4 : 2;
        if (widths[i] % divisor != 0) throw ConfigError("width divisor must divide every stage width");
        s.channels = widths[i] / divisor;
        s.heads = kStageHeads[i];
    }
    cfg.stages[0].deformable_blocks = 2;
    cfg.stages[1].deformable_blocks = 2;
    cfg.stages[2].paired_blocks = stage3_pairs;
    cfg.stages[3].paired_blocks = 1;
    cfg.validate();
    return cfg;
}

}  // namespace

DeformerConfig DeformerConfig::tiny(std::size_t d) { return make_config("tiny", {96, 192, 384, 768}, 3, d); }
DeformerConfig DeformerConfig::small(std::size_t d) { return make_config("small", {96, 192, 384, 768}, 9, d); }
DeformerConfig DeformerConfig::base(std::size_t d) { return make_config("base", {128, 256, 512, 1024}, 9, d); }

DeformerConfig DeformerConfig::named(const std::string& name, std::size_t d) {
    if (name == "tiny") return tiny(d);
    if (name == "small") return small(d);
    if (name == "base") return base(d);
    throw ConfigError("unknown Deformer variant '" + name + "'");
}

std::vector<BlockKind> DeformerConfig::block_kinds(std::size_t stage) const {
    const auto& s = stages.at(stage);
    std::vector<BlockKind> kinds(s.deformable_blocks, BlockKind::Deformable);
    for (std::size_t i = 0; i < s.paired_blocks; ++i) {
        kinds.push_back(BlockKind::Deformable);
        kinds.push_back(BlockKind::Global);
    }
    return kinds;
}

void DeformerConfig::validate() const {
    constexpr std::array<std::size_t, 4> strides = {4, 2, 2, 2};
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& s = stages[i];
        if (s.stride != strides[i]) throw ConfigError("stage strides are fixed at 4, 2, 2, 2");
        if (s.patch < s.stride) throw ConfigError("patch size must be at least the stride");
        if (s.channels == 0 || s.heads == 0 || s.channels % s.heads != 0) {
            throw ConfigError("stage " + std::to_string(i + 1) + ": channels " + std::to_string(s.channels) +
                              " not divisible by " + std::to_string(s.heads) + " heads");
        }
        if (i < 2 && s.paired_blocks != 0) throw ConfigError("stages 1-2 contain only DA blocks");
        if (i >= 2 && s.deformable_blocks != 0) throw ConfigError("stages 3-4 contain only DA/GSA pairs");
    }
    if (points == 0 || mlp_ratio == 0) throw ConfigError("points and mlp_ratio must be positive");
}

PatchEmbed::PatchEmbed(std::size_t in, std::size_t out, std::size_t p, std::size_t stride, Rng& rng)
    : proj(in, out, p, Conv2dParams{stride, p / 2, 1}, rng), norm(out), patch(p) {}

StageOutput PatchEmbed::forward(const Tensor& x, std::size_t stage) const {
    if (x.dim() != 3) throw DimensionError("patch embedding: expected C x H x W, got " + to_string(x.shape()));
    if (x.size(1) + 2 * (patch / 2) < patch || x.size(2) + 2 * (patch / 2) < patch) {
        throw ConfigError("patch embedding: input " + to_string(x.shape()) + " smaller than padded kernel " + std::to_string(patch));
    }
    const Tensor y = proj(x);
    const std::size_t h = y.size(1), w = y.size(2);
    return {tokens_to_map(norm(map_to_tokens(y)), h, w), stage};
}

void PatchEmbed::collect(const std::string& prefix, ParamList& out) const {
    proj.collect(prefix + ".proj", out);
    norm.collect(prefix + ".norm", out);
}

StageOutput patch_embed(const Tensor& img, const PatchEmbed& embed) { return embed.forward(img, 1); }

EncoderBlock::EncoderBlock(BlockKind k, std::size_t channels, std::size_t heads, std::size_t points, std::size_t mlp_ratio, Rng& rng)
    : kind(k), pos(channels, rng), norm1(channels), norm2(channels), mlp(channels, channels * mlp_ratio, rng) {
    const AttentionConfig acfg{channels, heads, points, 0.0};
    if (kind == BlockKind::Deformable) {
        deformable = DeformableAttention(acfg, 1, rng);
    } else {
        global = GlobalAttention(acfg, rng);
    }
}

StageOutput EncoderBlock::forward(const StageOutput& x, DeformableTrace* trace) const {
    const std::size_t h = x.height(), w = x.width();
    Tensor t = map_to_tokens(pos(x.map));
    const Tensor normed = norm1(t);
    Tensor attended;
    if (kind == BlockKind::Deformable) {
        const ReferencePoints ref = grid_reference_points(h, w);
        attended = deformable.forward(normed, ref, normed, {LevelSpan{0, h, w}}, trace);
    } else {
        attended = global(normed);
    }
    t = add(t, attended);
    t = add(t, mlp(norm2(t)));
    return {tokens_to_map(t, h, w), x.stage};
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out) const {
    pos.collect(prefix + ".pos", out);
    norm1.collect(prefix + ".norm1", out);
    if (kind == BlockKind::Deformable) {
        deformable.collect(prefix + ".attn", out);
    } else {
        global.collect(prefix + ".attn", out);
    }
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
}

void EncoderBlock::zero_branches() {
    pos.zero();
    if (kind == BlockKind::Deformable) {
        deformable.zero();
    } else {
        global.zero();
    }
    mlp.zero();
}

StageOutput encoder_block(const StageOutput& x, const EncoderBlock& block) { return block.forward(x); }

Deformer::Deformer(const DeformerConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = 3;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& sc = cfg_.stages[i];
        Stage& st = stages_[i];
        st.embed = PatchEmbed(in, sc.channels, sc.patch, sc.stride, rng);
        for (BlockKind kind : cfg_.block_kinds(i)) {
            st.blocks.emplace_back(kind, sc.channels, sc.heads, cfg_.points, cfg_.mlp_ratio, rng);
        }
        st.norm = LayerNorm(sc.channels);
        in = sc.channels;
    }
}

void check_backbone_input(const Shape& s) {
    if (s.size() != 3 || s[0] != 3) throw DimensionError("backbone input must be 3 x H x W, got " + to_string(s));
    if (s[1] % 32 != 0 || s[2] % 32 != 0) {
        throw ConfigError("backbone input " + to_string(s) + " must have H and W divisible by 32; pad the image first");
    }
}

BackboneFeatures Deformer::forward(const Tensor& img, BackboneTrace* trace) const {
    check_backbone_input(img.shape());
    BackboneFeatures out;
    Tensor x = img;
    for (std::size_t i = 0; i < 4; ++i) {
        const Stage& st = stages_[i];
        StageOutput s = st.embed.forward(x, i + 1);
        for (const auto& block : st.blocks) {
            DeformableTrace* tr = nullptr;
            if (trace && block.kind == BlockKind::Deformable) tr = &trace->stages[i].emplace_back();
            s = block.forward(s, tr);
        }
        s.map = tokens_to_map(st.norm(map_to_tokens(s.map)), s.height(), s.width());
        out.stages[i] = s;
        x = s.map;
    }
    return out;
}

void Deformer::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string sp = prefix + ".stage" + std::to_string(i + 1);
        stages_[i].embed.collect(sp + ".embed", out);
        for (std::size_t b = 0; b < stages_[i].blocks.size(); ++b) {
            stages_[i].blocks[b].collect(sp + ".block" + std::to_string(b), out);
        }
        stages_[i].norm.collect(sp + ".norm", out);
    }
}

BackboneFeatures forward_backbone(const Tensor& img, const Deformer& model) { return model.forward(img); }

SAANET_END_NAMESPACE
