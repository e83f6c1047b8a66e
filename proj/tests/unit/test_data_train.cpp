#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "saanet/analysis.hpp"
#include "saanet/train.hpp"

using namespace saanet;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("saanet_unit_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

ModelConfig small_model() {
    ModelConfig m;
    m.width_divisor = 8;
    m.fuse_width = 16;
    m.fuse_layers = 1;
    m.decoder_layers = 1;
    m.seed = 3;
    return m;
}

}  // namespace

TEST_CASE("scene generation") {
    SceneSpec spec;
    spec.seed = 42;
    const Scene a = generate_scene(spec), b = generate_scene(spec);
    REQUIRE(a.image.shape() == Shape{3, 32, 32});
    for (std::size_t i = 0; i < a.image.numel(); ++i) REQUIRE(a.image[i] == b.image[i]);
    CHECK(a.points.size() == b.points.size());
    CHECK(a.box_sizes.size() == a.points.size());
    CHECK_NOTHROW(a.validate());

    spec.count_min = spec.count_max = 0;
    const Scene neg = generate_scene(spec);
    CHECK(neg.points.empty());

    SceneSpec crowded;
    crowded.count_min = crowded.count_max = 200;
    crowded.min_separation = 2.0;
    crowded.max_attempts = 500;
    try {
        generate_scene(crowded);
        FAIL("expected placement failure");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("attempts") != std::string::npos);
    }

    SceneSpec bad;
    bad.height = 40;
    CHECK_THROWS_AS(generate_scene(bad), ConfigError);
}

TEST_CASE("head size follows the perspective gradient") {
    SceneSpec spec;
    spec.height = spec.width = 64;
    spec.count_min = spec.count_max = 10;
    spec.perspective_gradient = 0.1;
    std::vector<double> y, s;
    for (std::uint64_t i = 0; y.size() < 200; ++i) {
        spec.seed = scene_seed(7, i);
        const Scene sc = generate_scene(spec);
        for (std::size_t k = 0; k < sc.points.size() && y.size() < 200; ++k) {
            y.push_back(sc.points[k].y);
            s.push_back(sc.box_sizes[k]);
        }
    }
    CHECK(fit_line(y, s).r > 0.9);
}

TEST_CASE("dataset negative fraction") {
    DatasetSpec ds;
    ds.size = 40;
    ds.negative_fraction = 0.5;
    ds.seed = 9;
    const auto scenes = generate_dataset(ds);
    std::size_t empty = 0;
    for (const auto& s : scenes) empty += s.points.empty();
    CHECK(empty >= 10);
    CHECK(empty < 40);
}

TEST_CASE("PPM and annotation round trip") {
    const auto dir = temp_dir("io");
    SceneSpec spec;
    spec.seed = 5;
    spec.count_min = 3;
    const Scene s = generate_scene(spec);
    save_dataset(dir, {s, s});
    const auto loaded = load_dataset(dir);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].points.size() == s.points.size());
    for (std::size_t i = 0; i < s.points.size(); ++i) {
        CHECK(loaded[0].points[i].x == s.points[i].x);
        CHECK(loaded[0].box_sizes[i] == s.box_sizes[i]);
    }
    for (std::size_t i = 0; i < s.image.numel(); ++i) CHECK(std::abs(loaded[0].image[i] - s.image[i]) <= 0.5 / 255 + 1e-6);

    std::ofstream(dir / "hdr.csv") << "x,y\n1.5,2\n3,4\n";
    Scene h;
    read_annotations(dir / "hdr.csv", h);
    CHECK(h.points.size() == 2);
    CHECK(h.box_sizes.empty());
    std::ofstream(dir / "bad.csv") << "1,2\nfoo,3\n";
    CHECK_THROWS_AS(read_annotations(dir / "bad.csv", h), FormatError);
    std::ofstream(dir / "bad.ppm") << "P5\n1 1\n255\n";
    CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("model forward shapes and ablation switches") {
    const Tensor img({3, 64, 64}, Real(0.4));
    for (int v = 0; v < 4; ++v) {
        ModelConfig m = small_model();
        m.use_mff = v & 1;
        m.use_cafe = v & 2;
        const SaaNet net(m);
        const auto out = net.forward(img);
        CHECK(out.density.values.shape() == Shape{1, 8, 8});
        CHECK(out.count_pred.defined() == m.use_cafe);
        CHECK(out.pyramid.token_count() == 64 + 16 + 4);
    }
}

TEST_CASE("full forward and backward reach every parameter") {
    SaaNet net(small_model());
    SceneSpec spec;
    spec.height = spec.width = 64;
    spec.seed = 1;
    spec.count_min = 4;
    const Scene s = generate_scene(spec);
    const auto gt = render_annotation_map(s.points, 64, 64, 1.0);
    const auto out = net.forward(s.image);
    backward(loss(out.density, gt, out.count_pred, DefaultDensityLoss()).total);
    for (auto& [name, t] : net.parameters()) {
        INFO(name);
        REQUIRE(t.has_grad());
        bool finite = true;
        for (Real g : t.grad_data()) finite = finite && std::isfinite(g);
        CHECK(finite);
    }
    for (auto& [name, t] : net.parameters()) t.zero_grad();
}

TEST_CASE("checkpoint round trip") {
    const auto dir = temp_dir("ckpt");
    const SaaNet net(small_model());
    save_checkpoint(net, dir / "model.saat");
    const auto manifest = nlohmann::json::parse(std::ifstream(dir / "model.saat.json"));
    CHECK(manifest["format"] == "saanet-checkpoint");
    CHECK(manifest["tensors"].size() == net.parameters().size());
    const SaaNet back = load_checkpoint(dir / "model.saat");
    const auto a = net.parameters(), b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        const auto da = a[i].second.data(), db = b[i].second.data();
        CHECK(std::equal(da.begin(), da.end(), db.begin(), db.end()));
    }
    ModelConfig other = small_model();
    other.fuse_layers = 2;
    SaaNet mismatch(other);
    CHECK_THROWS_AS(load_parameters(mismatch, dir / "model.saat"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("run config json round trip") {
    RunConfig rc;
    rc.train.epochs = 7;
    rc.data.scene.clutter = 0.05;
    rc.model.use_cafe = false;
    const nlohmann::json j = rc;
    const RunConfig back = j.get<RunConfig>();
    CHECK(back.train.epochs == 7);
    CHECK(back.data.scene.clutter == 0.05);
    CHECK_FALSE(back.model.use_cafe);
    CHECK(nlohmann::json(back) == j);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    SaaNet net(small_model());
    DatasetSpec ds;
    ds.size = 2;
    ds.seed = 4;
    const auto samples = make_samples(generate_dataset(ds), 1.0);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 2;
    tc.optimizer.lr = 0;
    std::vector<std::vector<Real>> before;
    for (auto& [n, t] : net.parameters()) before.emplace_back(t.data().begin(), t.data().end());
    const auto r = train(net, samples, tc);
    CHECK(r.steps == 1);
    std::size_t i = 0;
    for (auto& [n, t] : net.parameters()) CHECK(std::vector<Real>(t.data().begin(), t.data().end()) == before[i++]);
}

TEST_CASE("divergence restores the last finite state") {
    SaaNet net(small_model());
    DatasetSpec ds;
    ds.size = 2;
    ds.seed = 4;
    ds.scene.count_min = 2;
    const auto samples = make_samples(generate_dataset(ds), 1.0);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 1;
    tc.optimizer.lr = 1e30;
    const auto r = train(net, samples, tc);
    CHECK(r.diverged);
    CHECK_FALSE(r.message.empty());
    bool finite = true;
    for (auto& [n, t] : net.parameters())
        for (Real v : t.data()) finite = finite && std::isfinite(v);
    CHECK(finite);
}

TEST_CASE("training on a fixed 8-scene set halves the loss and is repeatable") {
    RunConfig rc = load_run_config(SAANET_SOURCE_DIR "/configs/toy.json");
    rc.reseed(17);
    DatasetSpec ds{rc.data.scene, 8, 0.0, 123};
    const auto samples = make_samples(generate_dataset(ds), rc.train.sigma);
    rc.train.epochs = 200;  // one step per epoch with batch 8

    SaaNet a(rc.model);
    const auto before = evaluate(a, samples);
    const auto ra = train(a, samples, rc.train);
    REQUIRE(ra.steps == 200);
    CHECK_FALSE(ra.diverged);
    CHECK(ra.step_losses.back() < 0.5 * ra.step_losses.front());
    const auto after = evaluate(a, samples);
    CHECK(after.metrics.mae < before.metrics.mae);

    rc.train.epochs = 20;
    SaaNet b(rc.model), c(rc.model);
    const auto rb = train(b, samples, rc.train);
    const auto rcv = train(c, samples, rc.train);
    CHECK(rb.step_losses == rcv.step_losses);
    CHECK(evaluate(b, samples).metrics.to_json() == evaluate(c, samples).metrics.to_json());
}

TEST_CASE("evaluate counts density sums and excludes negatives from NAE") {
    ModelConfig m = small_model();
    SaaNet net(m);
    net.head().zero();
    DatasetSpec ds;
    ds.size = 6;
    ds.seed = 2;
    ds.negative_fraction = 0.5;
    const auto samples = make_samples(generate_dataset(ds), 1.0);
    const auto r = evaluate(net, samples);
    double negatives = 0, total = 0;
    for (const auto& s : samples) {
        negatives += s.gt.count == 0;
        total += s.gt.count;
    }
    for (double p : r.preds) CHECK(p == 0);
    CHECK(r.metrics.mae == doctest::Approx(total / 6));
    CHECK(r.metrics.n_excluded == static_cast<std::size_t>(negatives));

    // zero predictions on counts [2, 3] give MAE 2.5
    const std::vector<double> zero{0, 0}, gts{2, 3};
    CHECK(compute_metrics(zero, gts).mae == doctest::Approx(2.5));
}

TEST_CASE("line fit") {
    const std::vector<double> x{1, 2, 3, 4, 5}, y{2.1, 3.9, 6.2, 7.8, 10.1};
    const auto f = fit_line(x, y);
    CHECK(f.slope == doctest::Approx(1.99).epsilon(1e-9));
    CHECK(f.intercept == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(f.r > 0.99);
    // scipy.stats.linregress on the same data: p = 5.94153911e-05
    CHECK(f.p_value == doctest::Approx(5.94153911e-05).epsilon(1e-6));
    const std::vector<double> flat{1, 1, 1, 1, 1};
    CHECK(fit_line(x, flat).slope == 0);
    CHECK_THROWS_AS(fit_line(x, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("offset analysis rows and zero offsets") {
    Rng rng(3);
    Deformer net(DeformerConfig::tiny(8), rng);
    DatasetSpec ds;
    ds.size = 3;
    ds.seed = 8;
    ds.scene.count_min = 2;
    const auto scenes = generate_dataset(ds);
    std::size_t points = 0;
    for (const auto& s : scenes) points += s.points.size();
    const auto rows = offset_scale_analysis(net, scenes);
    CHECK(rows.size() == points);
    for (auto& st : net.stages())
        for (auto& b : st.blocks)
            if (b.kind == BlockKind::Deformable) b.deformable.reset_sampling(true);
    for (const auto& r : offset_scale_analysis(net, scenes)) CHECK(r.mean_offset == 0);
}
