#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "tscuap/artifact.hpp"
#include "tscuap/attack.hpp"
#include "tscuap/datasets.hpp"
#include "tscuap/evaluation.hpp"
#include "tscuap/modelzoo.hpp"
#include "tscuap/runner.hpp"
#include "tscuap/tiling.hpp"

namespace py = pybind11;
using namespace tscuap;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Array3 to_array3(const FloatArray& a) {
    if (a.ndim() != 3) throw ShapeError("expected an (h, w, c) array, got ndim " + std::to_string(a.ndim()));
    Array3 out(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), out.data.begin());
    return out;
}

ImageBatch to_batch(const FloatArray& a) {
    if (a.ndim() != 4) throw ShapeError("expected an (n, h, w, c) array, got ndim " + std::to_string(a.ndim()));
    ImageBatch out(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                   static_cast<int>(a.shape(3)));
    std::copy(a.data(), a.data() + a.size(), out.data.begin());
    return out;
}

py::array_t<float> from_array3(const Array3& a) {
    py::array_t<float> out({a.h, a.w, a.c});
    std::copy(a.data.begin(), a.data.end(), out.mutable_data());
    return out;
}

py::array_t<float> from_batch(const ImageBatch& b) {
    py::array_t<float> out({b.n, b.h, b.w, b.c});
    std::copy(b.data.begin(), b.data.end(), out.mutable_data());
    return out;
}

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_py(const py::object& o) {
    if (o.is_none()) return Json::object();
    return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

NormBudget budget_of(const std::string& norm, const py::object& epsilon) {
    const double eps = py::isinstance<py::str>(epsilon) ? parse_epsilon(epsilon.cast<std::string>())
                                                       : epsilon.cast<double>();
    return NormBudget(parse_norm_kind(norm), eps);
}

class Model {
public:
    explicit Model(std::shared_ptr<const ClassifierAdapter> m) : m_(std::move(m)) {}
    const ClassifierAdapter& get() const { return *m_; }

private:
    std::shared_ptr<const ClassifierAdapter> m_;
};

py::dict report_dict(const EvalReport& r) { return to_py(to_json(r)).cast<py::dict>(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Tiled universal adversarial perturbations";
    m.attr("__version__") = toolkit_version();

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<RegistryError>(m, "RegistryError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());

    m.def("parse_epsilon", &parse_epsilon, py::arg("text"));

    m.def(
        "tile",
        [](const FloatArray& patch, int alpha, int image_h, int image_w) {
            return from_array3(tile(Patch(to_array3(patch)), TileSpec(alpha, image_h, image_w)).values());
        },
        py::arg("patch"), py::arg("alpha"), py::arg("image_h"), py::arg("image_w"));

    m.def(
        "tile_adjoint",
        [](const FloatArray& grad, int alpha) {
            const Array3 g = to_array3(grad);
            return from_array3(tile_adjoint(g, TileSpec(alpha, g.h, g.w)));
        },
        py::arg("grad"), py::arg("alpha"));

    m.def(
        "project",
        [](const FloatArray& patch, int alpha, int image_h, int image_w, const std::string& norm,
           const py::object& epsilon) {
            const TileSpec spec(alpha, image_h, image_w);
            return from_array3(project(Patch(to_array3(patch)), spec, budget_of(norm, epsilon)).values());
        },
        py::arg("patch"), py::arg("alpha"), py::arg("image_h"), py::arg("image_w"), py::arg("norm") = "inf",
        py::arg("epsilon") = "10/255");

    m.def(
        "norm",
        [](const FloatArray& values, const std::string& norm) {
            return measure_norm(to_array3(values), parse_norm_kind(norm));
        },
        py::arg("values"), py::arg("norm") = "inf");

    m.def(
        "mask",
        [](const FloatArray& delta, int alpha, const std::string& region) {
            const Array3 d = to_array3(delta);
            const MaskRegion r(parse_mask_kind(region), TileSpec(alpha, d.h, d.w));
            return from_array3(mask_blocks(Perturbation(d, PerturbationOrigin::Tiled), r).values());
        },
        py::arg("delta"), py::arg("alpha"), py::arg("region"));

    m.def(
        "sample_dataset",
        [](const std::string& source, int classes, int per_class, const std::string& split, std::uint64_t seed,
           std::optional<std::pair<int, int>> shape) {
            const SampledDataset d = sample_dataset(source, classes, per_class, parse_split(split), seed, shape);
            py::dict out;
            out["images"] = from_batch(d.images);
            out["labels"] = d.labels;
            out["ids"] = d.ids;
            return out;
        },
        py::arg("source") = "desk10", py::arg("classes") = 10, py::arg("per_class") = 10,
        py::arg("split") = "train", py::arg("seed") = 0, py::arg("shape") = std::nullopt);

    m.def("list_models", [] {
        std::vector<py::dict> out;
        for (const auto& e : registry_entries()) {
            py::dict d;
            d["model_id"] = e.model_id;
            d["input"] = py::make_tuple(e.input_h, e.input_w, e.channels);
            d["classes"] = e.class_count;
            d["available"] = e.loader != "unavailable";
            d["description"] = e.description;
            out.push_back(d);
        }
        return out;
    });

    py::class_<Model>(m, "Model")
        .def_property_readonly("info", [](const Model& self) { return to_py(to_json(self.get().info())); })
        .def("logits",
             [](const Model& self, const FloatArray& images) {
                 const Logits l = self.get().logits(to_batch(images));
                 py::array_t<double> out({static_cast<py::ssize_t>(l.rows()), static_cast<py::ssize_t>(l.cols())});
                 for (Eigen::Index i = 0; i < l.rows(); ++i)
                     for (Eigen::Index j = 0; j < l.cols(); ++j) out.mutable_at(i, j) = l(i, j);
                 return out;
             })
        .def("predict",
             [](const Model& self, const FloatArray& images) { return predict(self.get(), to_batch(images)); });

    m.def(
        "load_model", [](const std::string& id) { return Model(load_classifier(id)); }, py::arg("model_id"));

    m.def(
        "craft",
        [](const Model& model, const FloatArray& images, std::vector<int> labels, int alpha, const std::string& norm,
           const py::object& epsilon, int epochs, int batch_size, const std::string& loss, double kappa,
           std::optional<int> target, const std::string& optimizer, double step_size, std::uint64_t seed) {
            SampledDataset data;
            data.images = to_batch(images);
            data.labels = std::move(labels);
            for (int i = 0; i < data.images.n; ++i) data.ids.push_back("array/" + std::to_string(i));
            const TileSpec spec(alpha, data.images.h, data.images.w);
            AttackConfigFields f;
            f.epochs = epochs;
            f.batch_size = batch_size;
            f.loss = parse_loss_id(loss);
            f.kappa = kappa;
            f.target_label = target;
            f.step_rule = parse_step_rule(optimizer);
            f.step_size = step_size;
            f.seed = seed;
            const AttackConfig config(f);
            const NormBudget budget = budget_of(norm, epsilon);
            CraftResult r = [&] {
                py::gil_scoped_release release;
                return craft(data, model.get(), spec, budget, config);
            }();
            py::list log;
            for (const auto& rec : r.log) log.append(to_py(to_json(rec)));
            py::dict out;
            out["patch"] = from_array3(r.patch.values());
            out["perturbation"] = from_array3(r.perturbation.values());
            out["log"] = log;
            out["completed"] = r.completed;
            return out;
        },
        py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("alpha"), py::arg("norm") = "inf",
        py::arg("epsilon") = "10/255", py::arg("epochs") = 20, py::arg("batch_size") = 100, py::arg("loss") = "ce",
        py::arg("kappa") = 0.0, py::arg("target") = std::nullopt, py::arg("optimizer") = "adam",
        py::arg("step_size") = 0.01, py::arg("seed") = 0);

    m.def(
        "evaluate",
        [](const FloatArray& delta, const Model& model, const FloatArray& images, std::optional<int> target) {
            const ImageBatch batch = to_batch(images);
            std::vector<std::string> ids;
            for (int i = 0; i < batch.n; ++i) ids.push_back("array/" + std::to_string(i));
            const Perturbation p(to_array3(delta), PerturbationOrigin::Loaded);
            const EvalReport r = [&] {
                py::gil_scoped_release release;
                return evaluate_perturbation(p, model.get(), batch, ids, target, Json::object());
            }();
            return report_dict(r);
        },
        py::arg("delta"), py::arg("model"), py::arg("images"), py::arg("target") = std::nullopt);

    m.def(
        "save_artifact",
        [](const std::string& path, const FloatArray& patch, int alpha, int image_h, int image_w,
           const std::string& norm, const py::object& epsilon, const py::object& metadata) {
            save_artifact(path, Patch(to_array3(patch)), TileSpec(alpha, image_h, image_w), budget_of(norm, epsilon),
                          from_py(metadata));
        },
        py::arg("path"), py::arg("patch"), py::arg("alpha"), py::arg("image_h"), py::arg("image_w"),
        py::arg("norm") = "inf", py::arg("epsilon") = "10/255", py::arg("metadata") = py::none());

    m.def(
        "load_artifact",
        [](const std::string& path) {
            const UapArtifact a = load_artifact(path);
            py::dict out;
            out["patch"] = from_array3(a.patch.values());
            out["perturbation"] = from_array3(a.perturbation().values());
            out["alpha"] = a.spec.alpha();
            out["norm"] = to_string(a.budget.p());
            out["epsilon"] = a.budget.epsilon();
            out["metadata"] = to_py(a.metadata);
            return out;
        },
        py::arg("path"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
