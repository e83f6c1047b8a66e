#include "saanet/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

SAANET_BEGIN_NAMESPACE

void RunConfig::reseed(std::uint64_t seed) {
    model.seed = scene_seed(seed, 1);
    data.seed = scene_seed(seed, 2);
    train.seed = scene_seed(seed, 3);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    const auto& s = c.data.scene;
    const auto& o = c.train.optimizer;
    j = nlohmann::json{
        {"model", c.model},
        {"data",
         {{"height", s.height},
          {"width", s.width},
          {"count_min", s.count_min},
          {"count_max", s.count_max},
          {"base_size", s.base_size},
          {"perspective_gradient", s.perspective_gradient},
          {"clutter", s.clutter},
          {"min_separation", s.min_separation},
          {"max_attempts", s.max_attempts},
          {"train_size", c.data.train_size},
          {"eval_size", c.data.eval_size},
          {"negative_fraction", c.data.negative_fraction},
          {"seed", c.data.seed}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"lr", o.lr},
          {"weight_decay", o.weight_decay},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"sigma", c.train.sigma},
          {"density_lambda", c.train.density_lambda},
          {"seed", c.train.seed}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    c = RunConfig{};
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("data")) {
        const auto& d = j.at("data");
        auto& s = c.data.scene;
        s.height = d.value("height", s.height);
        s.width = d.value("width", s.width);
        s.count_min = d.value("count_min", s.count_min);
        s.count_max = d.value("count_max", s.count_max);
        s.base_size = d.value("base_size", s.base_size);
        s.perspective_gradient = d.value("perspective_gradient", s.perspective_gradient);
        s.clutter = d.value("clutter", s.clutter);
        s.min_separation = d.value("min_separation", s.min_separation);
        s.max_attempts = d.value("max_attempts", s.max_attempts);
        c.data.train_size = d.value("train_size", c.data.train_size);
        c.data.eval_size = d.value("eval_size", c.data.eval_size);
        c.data.negative_fraction = d.value("negative_fraction", c.data.negative_fraction);
        c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        auto& o = c.train.optimizer;
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        o.lr = t.value("lr", o.lr);
        o.weight_decay = t.value("weight_decay", o.weight_decay);
        o.beta1 = t.value("beta1", o.beta1);
        o.beta2 = t.value("beta2", o.beta2);
        o.eps = t.value("eps", o.eps);
        c.train.sigma = t.value("sigma", c.train.sigma);
        c.train.density_lambda = t.value("density_lambda", c.train.density_lambda);
        c.train.seed = t.value("seed", c.train.seed);
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open config " + path.string());
    return nlohmann::json::parse(is).get<RunConfig>();
}

AdamW::AdamW(ParamList params, const OptimizerConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        if (!p.has_grad()) continue;
        const auto g = p.grad_data();
        auto w = p.data();
        const bool decay = p.dim() >= 2;
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k];
            m_[i][k] = cfg_.beta1 * m_[i][k] + (1 - cfg_.beta1) * gk;
            v_[i][k] = cfg_.beta2 * v_[i][k] + (1 - cfg_.beta2) * gk * gk;
            double wk = w[k];
            if (decay) wk -= cfg_.lr * cfg_.weight_decay * wk;
            wk -= cfg_.lr * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + cfg_.eps);
            w[k] = static_cast<Real>(wk);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

std::vector<Sample> make_samples(const std::vector<Scene>& scenes, double sigma) {
    std::vector<Sample> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) {
        s.validate();
        out.push_back({s, render_annotation_map(s.points, s.height(), s.width(), sigma)});
    }
    return out;
}

namespace {

bool all_finite(const ParamList& params) {
    for (const auto& [name, t] : params)
        for (Real v : t.data())
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

TrainResult train(SaaNet& model, const std::vector<Sample>& data, const TrainConfig& cfg, const ProgressFn& progress) {
    if (data.empty()) throw ContractError("train: empty dataset");
    if (cfg.batch_size == 0) throw ConfigError("train: batch size must be positive");
    ParamList params = model.parameters();
    AdamW opt(params, cfg.optimizer);
    const DefaultDensityLoss density_loss(cfg.density_lambda);
    Rng shuffle_rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::vector<std::vector<Real>> snapshot(params.size());
    TrainResult result;
    Tape::current().clear();

    for (std::size_t epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double epoch_sum = 0;
        std::size_t epoch_n = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const Real inv = Real(1) / static_cast<Real>(end - start);
            opt.zero_grad();
            double batch_sum = 0;
            bool finite = true;
            for (std::size_t b = start; b < end; ++b) {
                const Sample& s = data[order[b]];
                const ModelOutput out = model.forward(s.scene.image);
                const LossTerms terms = loss(out.density, s.gt, out.count_pred, density_loss);
                const double value = terms.total.item();
                if (!std::isfinite(value)) {
                    finite = false;
                    Tape::current().clear();
                    break;
                }
                batch_sum += value;
                backward(scale(terms.total, inv));
            }
            if (finite) {
                for (std::size_t i = 0; i < params.size(); ++i) {
                    auto d = params[i].second.data();
                    snapshot[i].assign(d.begin(), d.end());
                }
                opt.step();
                finite = all_finite(params);
                if (!finite) {
                    for (std::size_t i = 0; i < params.size(); ++i) {
                        std::copy(snapshot[i].begin(), snapshot[i].end(), params[i].second.data().begin());
                    }
                }
            }
            if (!finite) {
                result.diverged = true;
                result.message = "non-finite loss or parameters at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(result.steps) + "; parameters restored to the last finite state";
                break;
            }
            ++result.steps;
            result.step_losses.push_back(batch_sum / static_cast<double>(end - start));
            epoch_sum += batch_sum;
            epoch_n += end - start;
        }
        if (result.diverged) break;
        result.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_n));
        if (progress) progress(epoch, result.epoch_losses.back());
    }
    opt.zero_grad();
    return result;
}

EvalResult evaluate(const SaaNet& model, const std::vector<Sample>& data) {
    NoGradGuard guard;
    EvalResult r;
    for (const auto& s : data) {
        const ModelOutput out = model.forward(s.scene.image);
        r.preds.push_back(out.density.count());
        r.gts.push_back(s.gt.count);
        r.density.push_back(out.density);
    }
    r.metrics = compute_metrics(r.preds, r.gts);
    return r;
}

SAANET_END_NAMESPACE
