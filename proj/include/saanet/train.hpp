#pragma once

#include <functional>
#include <string>
#include <vector>

#include "saanet/data.hpp"
#include "saanet/model.hpp"

SAANET_BEGIN_NAMESPACE

struct OptimizerConfig {
    double lr = 1e-3;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 8;
    OptimizerConfig optimizer;
    double sigma = 1.0;           // annotation kernel width on the 1/8 grid
    double density_lambda = 1.0;  // weight of the count term inside the density loss
    std::uint64_t seed = 0;       // shuffling
};

struct DataConfig {
    SceneSpec scene;
    std::size_t train_size = 64;
    std::size_t eval_size = 32;
    double negative_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Everything a run needs; loaded from one JSON file.
struct RunConfig {
    ModelConfig model;
    DataConfig data;
    TrainConfig train;

    /// Re-seeds model, data and shuffling from one value.
    void reseed(std::uint64_t seed);
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Decoupled-weight-decay Adam. Decay applies to parameters of rank >= 2.
class AdamW {
   public:
    AdamW(ParamList params, const OptimizerConfig& cfg);

    void step();
    void zero_grad();
    std::size_t steps() const { return t_; }

   private:
    ParamList params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

struct Sample {
    Scene scene;
    GroundTruth gt;
};

std::vector<Sample> make_samples(const std::vector<Scene>& scenes, double sigma);

struct TrainResult {
    std::vector<double> step_losses;   // mean loss of each optimizer step
    std::vector<double> epoch_losses;  // mean loss of each epoch
    std::size_t steps = 0;
    bool diverged = false;
    std::string message;
};

using ProgressFn = std::function<void(std::size_t epoch, double loss)>;

/// Mini-batch AdamW on the composite loss. On a non-finite loss or parameter
/// the model is restored to the last finite state and training stops.
TrainResult train(SaaNet& model, const std::vector<Sample>& data, const TrainConfig& cfg, const ProgressFn& progress = {});

struct EvalResult {
    Metrics metrics;
    std::vector<double> preds;
    std::vector<double> gts;
    std::vector<DensityMap> density;
};

/// Count of each scene is the sum of its predicted density.
EvalResult evaluate(const SaaNet& model, const std::vector<Sample>& data);

SAANET_END_NAMESPACE
