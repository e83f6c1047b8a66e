#include "saanet/model.hpp"

#include <fstream>

#include "saanet/tensor_io.hpp"

SAANET_BEGIN_NAMESPACE

DeformerConfig ModelConfig::backbone() const {
    DeformerConfig cfg = DeformerConfig::named(variant, width_divisor);
    cfg.points = points;
    cfg.mlp_ratio = mlp_ratio;
    cfg.validate();
    return cfg;
}

void ModelConfig::validate() const {
    (void)backbone();
    AttentionConfig{fuse_width, fuse_heads, points, 0.0}.validate();
    AttentionConfig{fuse_width, decoder_heads, 1, 0.0}.validate();
    if (fuse_width % 4 != 0) throw ConfigError("fuse_width must be a multiple of 4 for the density head");
    if (decoder_layers == 0) throw ConfigError("decoder_layers must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"variant", c.variant},         {"width_divisor", c.width_divisor}, {"points", c.points},
                       {"mlp_ratio", c.mlp_ratio},     {"fuse_width", c.fuse_width},       {"fuse_heads", c.fuse_heads},
                       {"fuse_layers", c.fuse_layers}, {"decoder_heads", c.decoder_heads}, {"decoder_layers", c.decoder_layers},
                       {"use_mff", c.use_mff},         {"use_cafe", c.use_cafe},           {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.variant = j.value("variant", d.variant);
    c.width_divisor = j.value("width_divisor", d.width_divisor);
    c.points = j.value("points", d.points);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    c.fuse_width = j.value("fuse_width", d.fuse_width);
    c.fuse_heads = j.value("fuse_heads", d.fuse_heads);
    c.fuse_layers = j.value("fuse_layers", d.fuse_layers);
    c.decoder_heads = j.value("decoder_heads", d.decoder_heads);
    c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
    c.use_mff = j.value("use_mff", d.use_mff);
    c.use_cafe = j.value("use_cafe", d.use_cafe);
    c.seed = j.value("seed", d.seed);
}

SaaNet::SaaNet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    Rng backbone_rng = rng.fork(), fusion_rng = rng.fork(), cafe_rng = rng.fork(), head_rng = rng.fork();
    const DeformerConfig bcfg = cfg_.backbone();
    backbone_ = Deformer(bcfg, backbone_rng);
    fusion_ = FeatureFusion(FusionConfig{cfg_.fuse_width, cfg_.fuse_heads, cfg_.points, cfg_.fuse_layers, cfg_.mlp_ratio},
                            {bcfg.stages[1].channels, bcfg.stages[2].channels, bcfg.stages[3].channels}, fusion_rng);
    cafe_ = CafeDecoder(CafeConfig{cfg_.fuse_width, cfg_.decoder_heads, cfg_.decoder_layers, cfg_.mlp_ratio}, cafe_rng);
    head_ = DensityHead(cfg_.fuse_width, head_rng);
}

ModelOutput SaaNet::forward(const Tensor& img, ModelTrace* trace) const {
    const BackboneFeatures feats = backbone_.forward(img, trace ? &trace->backbone : nullptr);
    ModelOutput out;
    out.pyramid = fusion_.project_and_flatten({feats.f2().map, feats.f3().map, feats.f4().map});
    if (cfg_.use_mff) out.pyramid = fusion_.fuse(out.pyramid, trace ? &trace->fusion : nullptr);
    if (cfg_.use_cafe) {
        CountPrediction cp = cafe_.decode_count(out.pyramid);
        out.count_pred = cp.count;
        out.recal = cp.recal;
        out.pyramid = recalibrate(out.pyramid, cp.recal);
    }
    out.density = head_.forward(out.pyramid.level_map(0));
    return out;
}

ParamList SaaNet::parameters() const {
    ParamList out;
    backbone_.collect("backbone", out);
    fusion_.collect("fusion", out);
    cafe_.collect("cafe", out);
    head_.collect("head", out);
    return out;
}

std::size_t SaaNet::parameter_count() const { return saanet::parameter_count(parameters()); }

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& path) {
    auto m = path;
    m += ".json";
    return m;
}

}  // namespace

void save_checkpoint(const SaaNet& model, const std::filesystem::path& path) {
    const ParamList params = model.parameters();
    NamedTensors named(params.begin(), params.end());
    save_tensors(path, named);
    nlohmann::ordered_json manifest;
    manifest["format"] = "saanet-checkpoint";
    manifest["version"] = 1;
    manifest["config"] = nlohmann::json(model.config());
    auto& list = manifest["tensors"] = nlohmann::ordered_json::array();
    for (const auto& [name, t] : params) list.push_back({{"name", name}, {"shape", t.shape()}});
    std::ofstream os(manifest_path(path));
    if (!os) throw FormatError("cannot write checkpoint manifest for " + path.string());
    os << manifest.dump(2) << '\n';
}

void load_parameters(SaaNet& model, const std::filesystem::path& path) {
    std::ifstream is(manifest_path(path));
    if (!is) throw FormatError("missing checkpoint manifest " + manifest_path(path).string());
    const auto manifest = nlohmann::json::parse(is);
    const auto tensors = load_tensors(path);
    ParamList params = model.parameters();
    const auto& list = manifest.at("tensors");
    if (list.size() != params.size() || tensors.size() != params.size()) {
        throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        if (list[i].at("name").get<std::string>() != name || tensors[i].shape() != t.shape()) {
            throw FormatError("checkpoint entry " + std::to_string(i) + " (" + list[i].at("name").get<std::string>() +
                              ") does not match parameter " + name + " " + to_string(t.shape()));
        }
        std::copy(tensors[i].data().begin(), tensors[i].data().end(), t.data().begin());
    }
}

SaaNet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(manifest_path(path));
    if (!is) throw FormatError("missing checkpoint manifest " + manifest_path(path).string());
    const auto manifest = nlohmann::json::parse(is);
    SaaNet model(manifest.at("config").get<ModelConfig>());
    load_parameters(model, path);
    return model;
}

SAANET_END_NAMESPACE
