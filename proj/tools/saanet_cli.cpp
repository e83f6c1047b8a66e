// saanet command line: generate / train / eval / analyze-offsets / dump-attn.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "saanet/analysis.hpp"
#include "saanet/errors.hpp"
#include "saanet/tensor_io.hpp"
#include "saanet/train.hpp"

namespace fs = std::filesystem;
using namespace saanet;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool full = false;
    std::string out = "out";
    std::string checkpoint;
    std::string data;  // dataset directory; generated from the config when empty
};

RunConfig run_config(const Common& c) {
    RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) rc.reseed(*c.seed);
    if (c.full) rc.model.width_divisor = 1;
    return rc;
}

std::vector<Scene> dataset(const RunConfig& rc, bool eval_split) {
    const std::size_t size = eval_split ? rc.data.eval_size : rc.data.train_size;
    return generate_dataset(DatasetSpec{rc.data.scene, size, rc.data.negative_fraction, rc.data.seed + (eval_split ? 1 : 0)});
}

std::vector<Scene> eval_scenes(const Common& c, const RunConfig& rc) {
    return c.data.empty() ? dataset(rc, true) : load_dataset(c.data);
}

SaaNet load_model(const Common& c) {
    if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    return load_checkpoint(c.checkpoint);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    os << text;
}

int cmd_generate(const Common& c) {
    const RunConfig rc = run_config(c);
    save_dataset(fs::path(c.out) / "train", dataset(rc, false));
    save_dataset(fs::path(c.out) / "eval", dataset(rc, true));
    std::cout << "wrote " << rc.data.train_size << " train and " << rc.data.eval_size << " eval scenes to " << c.out << '\n';
    return 0;
}

int cmd_train(const Common& c) {
    const RunConfig rc = run_config(c);
    fs::create_directories(c.out);
    const auto train_scenes = c.data.empty() ? dataset(rc, false) : load_dataset(fs::path(c.data) / "train");
    const auto eval_set = c.data.empty() ? dataset(rc, true) : load_dataset(fs::path(c.data) / "eval");

    SaaNet model(rc.model);
    std::cout << "parameters: " << model.parameter_count() << '\n';
    const auto result = train(model, make_samples(train_scenes, rc.train.sigma), rc.train, [](std::size_t epoch, double loss) {
        if (epoch % 10 == 0) std::cout << "epoch " << epoch << " loss " << loss << std::endl;
    });
    if (result.diverged) std::cerr << "training diverged: " << result.message << '\n';

    std::ofstream curve(fs::path(c.out) / "loss_curve.csv");
    curve << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) curve << e << ',' << result.epoch_losses[e] << '\n';
    write_text(fs::path(c.out) / "run_config.json", nlohmann::json(rc).dump(2) + "\n");
    save_checkpoint(model, fs::path(c.out) / "model.saat");

    const auto ev = evaluate(model, make_samples(eval_set, rc.train.sigma));
    write_text(fs::path(c.out) / "metrics.json", ev.metrics.to_json());
    std::cout << ev.metrics.to_json();
    return result.diverged ? 3 : 0;
}

int cmd_eval(const Common& c) {
    const RunConfig rc = run_config(c);
    const SaaNet model = load_model(c);
    const auto scenes = eval_scenes(c, rc);
    const auto ev = evaluate(model, make_samples(scenes, rc.train.sigma));
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "metrics.json", ev.metrics.to_json());
    NamedTensors maps;
    for (std::size_t i = 0; i < ev.density.size(); ++i) maps.emplace_back("scene" + std::to_string(i), ev.density[i].values);
    save_tensors(fs::path(c.out) / "density.saat", maps);
    std::cout << ev.metrics.to_json();
    return 0;
}

int cmd_offsets(const Common& c, const OffsetScaleOptions& opt) {
    const RunConfig rc = run_config(c);
    const SaaNet model = load_model(c);
    const auto rows = offset_scale_analysis(model.backbone(), eval_scenes(c, rc), opt);
    fs::create_directories(c.out);
    write_offset_scale_csv(fs::path(c.out) / "offset_scale.csv", rows);
    const auto fit = fit_offset_scale(rows);
    nlohmann::ordered_json j{{"n", fit.n}, {"slope", fit.slope}, {"intercept", fit.intercept}, {"r", fit.r}, {"p_value", fit.p_value}};
    write_text(fs::path(c.out) / "offset_fit.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
    return 0;
}

// Count-query attention of the last decoder layer, one [heads x H_l x W_l]
// tensor per pyramid level.
int cmd_dump_attn(const Common& c, std::size_t scene_index) {
    const RunConfig rc = run_config(c);
    const SaaNet model = load_model(c);
    if (!model.config().use_cafe) throw ConfigError("model was built without the count decoder");
    const auto scenes = eval_scenes(c, rc);
    if (scene_index >= scenes.size()) throw ConfigError("scene index out of range");
    const Scene& scene = scenes[scene_index];

    NoGradGuard guard;
    const auto out = model.forward(scene.image);
    const Tensor& w = out.recal.weights;
    const std::size_t heads = w.size(0), n = w.size(1);
    NamedTensors dump;
    for (std::size_t l = 0; l < out.pyramid.levels(); ++l) {
        const auto& span = out.pyramid.spans[l];
        Tensor grid({heads, span.height, span.width});
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < span.tokens(); ++t) grid[h * span.tokens() + t] = w[h * n + span.start + t];
        dump.emplace_back("level" + std::to_string(l), grid);
    }
    fs::create_directories(c.out);
    save_tensors(fs::path(c.out) / "attention.saat", dump);
    write_ppm(fs::path(c.out) / "scene.ppm", scene.image);
    write_annotations(fs::path(c.out) / "scene.csv", scene);
    std::cout << "scene " << scene_index << ": " << scene.points.size() << " heads, predicted "
              << out.density.count() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAANet toy-scale crowd counting"};
    app.require_subcommand(1);
    Common c;
    auto common = [&c](CLI::App* sub) {
        sub->add_option("--config", c.config, "Run configuration JSON")->check(CLI::ExistingFile);
        sub->add_option("--seed", c.seed, "Reseed model, data and training");
        auto* full = sub->add_flag("--full", c.full, "Full reference widths (width divisor 1)");
        sub->add_flag("--toy", [&c](std::int64_t) { c.full = false; }, "Reduced widths from the config (default)")->excludes(full);
        sub->add_option("--out", c.out, "Output directory");
    };
    auto* gen = app.add_subcommand("generate", "Write synthetic train/eval scenes as PPM + CSV");
    common(gen);
    auto* tr = app.add_subcommand("train", "Train, then write checkpoint, loss curve and eval metrics");
    common(tr);
    tr->add_option("--data", c.data, "Directory with train/ and eval/ scenes");
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    common(ev);
    ev->add_option("--checkpoint", c.checkpoint)->required();
    ev->add_option("--data", c.data, "Directory of scenes");
    auto* off = app.add_subcommand("analyze-offsets", "Sampling-offset magnitude against head size");
    common(off);
    OffsetScaleOptions opt;
    off->add_option("--checkpoint", c.checkpoint)->required();
    off->add_option("--data", c.data, "Directory of scenes");
    off->add_option("--stage", opt.stage, "Backbone stage, 1-based");
    off->add_option("--block", opt.block, "DA block within the stage, negative counts from the end");
    auto* dump = app.add_subcommand("dump-attn", "Dump count-query attention maps per level");
    common(dump);
    std::size_t scene_index = 0;
    dump->add_option("--checkpoint", c.checkpoint)->required();
    dump->add_option("--data", c.data, "Directory of scenes");
    dump->add_option("--scene", scene_index, "Scene index");
    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_generate(c);
        if (*tr) return cmd_train(c);
        if (*ev) return cmd_eval(c);
        if (*off) return cmd_offsets(c, opt);
        if (*dump) return cmd_dump_attn(c, scene_index);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
