#include <cmath>
#include <sstream>

#include "registry.hpp"
#include "saanet/data.hpp"
#include "saanet/model.hpp"

using namespace saanet;

namespace {

constexpr double kRowTol = 1e-6;
constexpr double kMassTol = 1e-3;
constexpr double kMetricTol = 1e-12;

Tensor rand(Shape shape, Rng& rng, double scale) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-scale, scale));
    return t;
}

struct RowCheck {
    double worst = 0;
    std::size_t rows = 0;
    bool negative = false;

    // Rows of `group` consecutive entries.
    void add(const Tensor& w, std::size_t group) {
        for (std::size_t r = 0; r < w.numel() / group; ++r) {
            double s = 0;
            for (std::size_t i = 0; i < group; ++i) {
                const double v = w[r * group + i];
                negative = negative || v < 0;
                s += v;
            }
            worst = std::max(worst, std::abs(s - 1));
            ++rows;
        }
    }
    bool ok() const { return rows > 0 && !negative && worst <= kRowTol; }
};

bool near(double a, double b) { return std::abs(a - b) <= kMetricTol; }

acceptance::Outcome run() {
    NoGradGuard guard;
    Rng rng(77);
    RowCheck global, deform, recal, model_rows;

    // Random layers, including logits large enough to saturate a naive softmax.
    for (double scale : {0.1, 1.0, 30.0, 1e3}) {
        for (int i = 0; i < 5; ++i) {
            const std::size_t heads = std::size_t{1} << rng.below(3);
            const std::size_t d = heads * (1 + rng.below(4));
            const std::size_t n = 1 + rng.below(40);
            GlobalAttention ga(AttentionConfig{d, heads, 1, 0.0}, rng);
            Tensor w;
            ga.forward(rand({n, d}, rng, scale), rand({n + 3, d}, rng, scale), &w);
            global.add(w, n + 3);

            const std::size_t levels = 1 + rng.below(3), k = 1 + rng.below(4);
            DeformableAttention da(AttentionConfig{d, heads, k, 0.0}, levels, rng);
            ParamList p;
            da.collect("d", p);
            for (auto [name, t] : p)
                for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-1, 1) * std::min(scale, 30.0));
            std::vector<Tensor> maps;
            for (std::size_t l = 0; l < levels; ++l) maps.push_back(rand({d, 2 + rng.below(4), 2 + rng.below(4)}, rng, 1));
            DeformableTrace tr;
            da.forward(rand({n, d}, rng, scale), grid_reference_points(1, n), maps, &tr);
            deform.add(tr.weights, levels * k);

            CafeDecoder dec(CafeConfig{8, 4, 2, 4}, rng);
            const auto pyr = FeaturePyramid::flatten({rand({8, 1 + rng.below(6), 1 + rng.below(6)}, rng, scale)});
            recal.add(dec.decode_count(pyr).recal.weights, pyr.token_count());
        }
    }

    // Every attention in a forward pass of the toy model.
    ModelConfig mc;
    SaaNet model(mc);
    SceneSpec spec;
    spec.seed = 5;
    ModelTrace trace;
    const auto out = model.forward(generate_scene(spec).image, &trace);
    const std::size_t k = mc.points;
    for (const auto& stage : trace.backbone.stages)
        for (const auto& t : stage) model_rows.add(t.weights, k);
    for (const auto& t : trace.fusion) model_rows.add(t.weights, 3 * k);
    model_rows.add(out.recal.weights, out.recal.tokens());

    // Annotation maps: random scenes plus heads on the border and corners.
    double worst_mass = 0;
    std::size_t maps = 0;
    DatasetSpec ds;
    ds.size = 100;
    ds.seed = 13;
    ds.scene.count_max = 20;
    ds.scene.clutter = 0;
    for (double sigma : {0.5, 1.0, 2.0}) {
        for (const auto& s : generate_dataset(ds)) {
            const auto gt = render_annotation_map(s.points, s.height(), s.width(), sigma);
            worst_mass = std::max(worst_mass, std::abs(sum_all(gt.map).item() - static_cast<double>(s.points.size())));
            ++maps;
        }
        const std::vector<Point2> edge{{0, 0}, {31.999, 0}, {0, 31.999}, {31.999, 31.999}, {16, 0}, {0.2, 17.5}};
        const auto gt = render_annotation_map(edge, 32, 32, sigma);
        worst_mass = std::max(worst_mass, std::abs(sum_all(gt.map).item() - static_cast<double>(edge.size())));
        ++maps;
    }

    // Hand-computed metrics.
    bool metrics_ok = true;
    {
        const std::vector<double> pred{3, 5, 0, 2}, gt{2, 5, 0, 4};
        const auto m = compute_metrics(pred, gt);
        // |e| = 1, 0, 0, 2; NAE over the three nonzero ground truths
        metrics_ok = metrics_ok && near(m.mae, 0.75) && near(m.mse, std::sqrt(1.25)) && m.nae &&
                     near(*m.nae, (0.5 + 0.0 + 0.5) / 3) && m.n_samples == 4 && m.n_excluded == 1;
        const std::vector<double> pz{1.5, 0.0}, gz{0, 0};
        const auto z = compute_metrics(pz, gz);
        metrics_ok = metrics_ok && near(z.mae, 0.75) && near(z.mse, std::sqrt(1.125)) && !z.nae && z.n_excluded == 2;
        const std::vector<double> p1{10}, g1{8};
        const auto o = compute_metrics(p1, g1);
        metrics_ok = metrics_ok && near(o.mae, 2) && near(o.mse, 2) && o.nae && near(*o.nae, 0.25);
    }

    std::ostringstream os;
    os << "max |row sum - 1|: global " << global.worst << " (" << global.rows << " rows), deformable " << deform.worst
       << " (" << deform.rows << "), count query " << recal.worst << " (" << recal.rows << "), model forward "
       << model_rows.worst << " (" << model_rows.rows << ") tol " << kRowTol << "; annotation mass err " << worst_mass
       << " over " << maps << " maps tol " << kMassTol << "; metrics hand cases " << (metrics_ok ? "ok" : "MISMATCH");
    const bool ok = global.ok() && deform.ok() && recal.ok() && model_rows.ok() && worst_mass <= kMassTol && metrics_ok;
    return {ok, os.str()};
}

const acceptance::Register reg("normalization", "attention rows, annotation mass, metric definitions", run);

}  // namespace
