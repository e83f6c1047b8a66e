#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "saanet/analysis.hpp"
#include "saanet/train.hpp"

namespace py = pybind11;
using namespace saanet;

namespace {

using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array a(shape);
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

Tensor from_numpy(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<Real>(a.data(), a.data() + a.size()));
}

py::dict scene_dict(const Scene& s) {
    py::dict d;
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : s.points) pts.emplace_back(p.x, p.y);
    d["image"] = to_numpy(s.image);
    d["points"] = pts;
    d["box_sizes"] = s.box_sizes;
    d["seed"] = s.seed;
    return d;
}

}  // namespace

PYBIND11_MODULE(_saanet, m) {
    m.doc() = "SAANet toy-scale crowd counting";
    m.attr("real_bytes") = sizeof(Real);

    py::class_<SceneSpec>(m, "SceneSpec")
        .def(py::init<>())
        .def_readwrite("height", &SceneSpec::height)
        .def_readwrite("width", &SceneSpec::width)
        .def_readwrite("count_min", &SceneSpec::count_min)
        .def_readwrite("count_max", &SceneSpec::count_max)
        .def_readwrite("base_size", &SceneSpec::base_size)
        .def_readwrite("perspective_gradient", &SceneSpec::perspective_gradient)
        .def_readwrite("clutter", &SceneSpec::clutter)
        .def_readwrite("seed", &SceneSpec::seed);

    m.def("generate_scene", [](const SceneSpec& spec) { return scene_dict(generate_scene(spec)); }, py::arg("spec"));

    m.def(
        "annotation_map",
        [](const std::vector<std::pair<double, double>>& pts, std::size_t h, std::size_t w, double sigma) {
            std::vector<Point2> p;
            for (auto [x, y] : pts) p.push_back({x, y});
            return to_numpy(render_annotation_map(p, h, w, sigma).map);
        },
        py::arg("points"), py::arg("height"), py::arg("width"), py::arg("sigma") = 1.0);

    py::class_<Metrics>(m, "Metrics")
        .def_readonly("mae", &Metrics::mae)
        .def_readonly("mse", &Metrics::mse)
        .def_readonly("nae", &Metrics::nae)
        .def_readonly("n_samples", &Metrics::n_samples)
        .def_readonly("n_excluded", &Metrics::n_excluded)
        .def("to_json", &Metrics::to_json);
    m.def("compute_metrics", [](const std::vector<double>& pred, const std::vector<double>& gt) { return compute_metrics(pred, gt); },
          py::arg("preds"), py::arg("gts"));

    m.def(
        "fit_line",
        [](const std::vector<double>& x, const std::vector<double>& y) {
            const auto f = fit_line(x, y);
            return py::dict(py::arg("slope") = f.slope, py::arg("intercept") = f.intercept, py::arg("r") = f.r,
                            py::arg("p_value") = f.p_value, py::arg("n") = f.n);
        },
        py::arg("x"), py::arg("y"));

    m.def(
        "backbone_shapes",
        [](const std::string& variant, std::size_t size, std::size_t width_divisor) {
            Rng rng(0);
            const Deformer net(DeformerConfig::named(variant, width_divisor), rng);
            NoGradGuard guard;
            const auto f = net.forward(Tensor({3, size, size}));
            std::vector<Shape> out;
            for (const auto& s : f.stages) out.push_back(s.map.shape());
            return out;
        },
        py::arg("variant") = "tiny", py::arg("size") = 224, py::arg("width_divisor") = 1);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("variant", &ModelConfig::variant)
        .def_readwrite("width_divisor", &ModelConfig::width_divisor)
        .def_readwrite("use_mff", &ModelConfig::use_mff)
        .def_readwrite("use_cafe", &ModelConfig::use_cafe)
        .def_readwrite("seed", &ModelConfig::seed);

    py::class_<SaaNet>(m, "SaaNet")
        .def(py::init<const ModelConfig&>(), py::arg("config") = ModelConfig{})
        .def_property_readonly("parameter_count", &SaaNet::parameter_count)
        .def(
            "forward",
            [](const SaaNet& net, const Array& image) {
                NoGradGuard guard;
                const auto out = net.forward(from_numpy(image));
                py::dict d;
                d["density"] = to_numpy(out.density.values);
                d["count"] = out.density.count();
                d["count_pred"] = out.count_pred.defined() ? py::object(py::float_(out.count_pred.item())) : py::none();
                d["recal"] = out.recal.weights.defined() ? py::object(to_numpy(out.recal.weights)) : py::none();
                return d;
            },
            py::arg("image"))
        .def("save", [](const SaaNet& net, const std::string& path) { save_checkpoint(net, path); })
        .def_static("load", [](const std::string& path) { return load_checkpoint(path); });

    // Runs the whole pipeline from a run-config JSON string and returns the
    // metrics JSON of the evaluation split.
    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            const RunConfig rc = nlohmann::json::parse(config_json).get<RunConfig>();
            py::gil_scoped_release release;
            const auto tr = generate_dataset(DatasetSpec{rc.data.scene, rc.data.train_size, rc.data.negative_fraction, rc.data.seed});
            const auto ev = generate_dataset(DatasetSpec{rc.data.scene, rc.data.eval_size, rc.data.negative_fraction, rc.data.seed + 1});
            SaaNet model(rc.model);
            train(model, make_samples(tr, rc.train.sigma), rc.train);
            return evaluate(model, make_samples(ev, rc.train.sigma)).metrics.to_json();
        },
        py::arg("config_json"));

    m.def("load_run_config", [](const std::string& path) { return nlohmann::json(load_run_config(path)).dump(); }, py::arg("path"),
          "Run configuration as a JSON string with defaults filled in");

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
}
