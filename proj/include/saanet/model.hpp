#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "saanet/backbone.hpp"
#include "saanet/cafe.hpp"
#include "saanet/fusion.hpp"
#include "saanet/head.hpp"

SAANET_BEGIN_NAMESPACE

struct ModelConfig {
    std::string variant = "tiny";
    std::size_t width_divisor = 8;  // 1 = full reference widths
    std::size_t points = 4;
    std::size_t mlp_ratio = 4;
    std::size_t fuse_width = 32;
    std::size_t fuse_heads = 4;
    std::size_t fuse_layers = 4;
    std::size_t decoder_heads = 4;
    std::size_t decoder_layers = 4;
    bool use_mff = true;
    bool use_cafe = true;
    std::uint64_t seed = 0;

    DeformerConfig backbone() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ModelTrace {
    BackboneTrace backbone;
    std::vector<DeformableTrace> fusion;
};

struct ModelOutput {
    DensityMap density;
    Tensor count_pred;  // undefined without CAFE
    RecalibrationMap recal;
    FeaturePyramid pyramid;  // tokens fed to the head (level 0 is used)
};

/// Backbone -> multi-level fusion -> count-attentive enhancement -> density head.
/// Fusion and enhancement can each be bypassed.
class SaaNet {
   public:
    SaaNet() = default;
    explicit SaaNet(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ModelOutput forward(const Tensor& img, ModelTrace* trace = nullptr) const;
    ParamList parameters() const;
    std::size_t parameter_count() const;

    Deformer& backbone() { return backbone_; }
    const Deformer& backbone() const { return backbone_; }
    FeatureFusion& fusion() { return fusion_; }
    CafeDecoder& cafe() { return cafe_; }
    DensityHead& head() { return head_; }

   private:
    ModelConfig cfg_;
    Deformer backbone_;
    FeatureFusion fusion_;
    CafeDecoder cafe_;
    DensityHead head_;
};

/// Writes `path` (SAAT records in parameter order) and `path`.json (manifest
/// listing names, shapes and the model config).
void save_checkpoint(const SaaNet& model, const std::filesystem::path& path);
SaaNet load_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint values into an existing model of identical layout.
void load_parameters(SaaNet& model, const std::filesystem::path& path);

SAANET_END_NAMESPACE
