#pragma once

#include <chrono>
#include <filesystem>

#include "saanet/train.hpp"

namespace acceptance {

inline std::filesystem::path toy_config_path() { return std::filesystem::path(SAANET_SOURCE_DIR) / "configs" / "toy.json"; }

struct Splits {
    std::vector<saanet::Scene> train_scenes, eval_scenes;
    std::vector<saanet::Sample> train, eval;
};

// Train scenes use data.seed, eval scenes data.seed + 1.
inline Splits make_splits(const saanet::RunConfig& rc) {
    using namespace saanet;
    Splits s;
    s.train_scenes = generate_dataset(DatasetSpec{rc.data.scene, rc.data.train_size, rc.data.negative_fraction, rc.data.seed});
    s.eval_scenes = generate_dataset(DatasetSpec{rc.data.scene, rc.data.eval_size, rc.data.negative_fraction, rc.data.seed + 1});
    s.train = make_samples(s.train_scenes, rc.train.sigma);
    s.eval = make_samples(s.eval_scenes, rc.train.sigma);
    return s;
}

struct Run {
    saanet::TrainResult train;
    saanet::EvalResult eval;
    double seconds = 0;
};

inline Run train_and_evaluate(saanet::SaaNet& model, const Splits& s, const saanet::TrainConfig& cfg) {
    Run r;
    const auto t0 = std::chrono::steady_clock::now();
    r.train = saanet::train(model, s.train, cfg);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.eval = saanet::evaluate(model, s.eval);
    return r;
}

}  // namespace acceptance
