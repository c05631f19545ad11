#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "volseg/experiment.hpp"
#include "volseg/metrics.hpp"
#include "volseg/model.hpp"
#include "volseg/nifti.hpp"
#include "volseg/ops.hpp"
#include "volseg/runtime.hpp"
#include "volseg/volume.hpp"

namespace py = pybind11;
using namespace volseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::span<const std::uint8_t> mask_span(const MaskArray& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Padding padding_of(const py::object& p) {
  if (py::isinstance<py::str>(p)) {
    if (p.cast<std::string>() != "same") throw ValueError("padding must be 'same' or an integer");
    return Padding::Same();
  }
  return Padding::Explicit(p.cast<std::int64_t>());
}

Tensor<float> bias_or_zero(const std::optional<FloatArray>& bias, std::int64_t channels) {
  return bias ? to_tensor(*bias) : Tensor<float>(Shape{channels});
}

ModelConfig model_config(const std::string& arch, std::int64_t in_channels, std::int64_t num_classes,
                         std::int64_t base_filters, std::int64_t depth, std::int64_t cardinality, std::int64_t kernel,
                         std::int64_t se_reduction, std::uint64_t seed) {
  ModelConfig c;
  c.arch = parse_arch(arch);
  c.in_channels = in_channels;
  c.num_classes = num_classes;
  c.base_filters = base_filters;
  c.depth = depth;
  c.cardinality = cardinality;
  c.kernel = kernel;
  c.se_reduction = se_reduction;
  c.seed = seed;
  return c;
}

class PyModel {
 public:
  explicit PyModel(const ModelConfig& c) : model_(build_model<float>(c)) {}

  py::array_t<float> forward(const FloatArray& x, bool train) {
    NoGradGuard guard;
    return to_array(model_->forward(to_tensor(x), train ? Mode::train : Mode::eval));
  }
  py::array_t<std::uint8_t> predict(const FloatArray& x) {
    NoGradGuard guard;
    const auto labels = argmax_labels(model_->forward(to_tensor(x), Mode::eval));
    std::vector<py::ssize_t> shape{x.shape(0)};
    for (py::ssize_t a = 2; a < x.ndim(); ++a) shape.push_back(x.shape(a));
    py::array_t<std::uint8_t> out(shape);
    std::copy(labels.begin(), labels.end(), out.mutable_data());
    return out;
  }
  std::int64_t param_count() const { return model_->param_count(); }
  py::object summary() const { return to_python(summarize(*model_).to_json()); }
  std::string table() const { return summarize(*model_).to_table(); }
  py::dict parameters() const {
    py::dict out;
    for (auto& [name, t] : model_->named_parameters()) out[py::str(name)] = to_array(t);
    return out;
  }

 private:
  std::unique_ptr<Model<float>> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "3D segmentation networks, volumes and experiment harness";

  auto base = py::register_exception<Error>(m, "VolsegError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ValueError>(m, "ArgumentError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());

  m.attr("ARCHS") = [] {
    py::list l;
    for (auto a : kAllArchs) l.append(to_string(a));
    return l;
  }();

  m.def("set_deterministic", &set_deterministic, py::arg("on"));
  m.def("deterministic", &volseg::deterministic);

  // ops, forward only
  m.def(
      "conv3d",
      [](const FloatArray& x, const FloatArray& w, const std::optional<FloatArray>& b, std::int64_t stride,
         const py::object& padding) {
        NoGradGuard guard;
        const auto wt = to_tensor(w);
        return to_array(conv3d(to_tensor(x), ConvParams<float>{wt, bias_or_zero(b, wt.dim(0)), stride, padding_of(padding)}));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = 1,
      py::arg("padding") = "same");
  m.def(
      "transposed_conv3d",
      [](const FloatArray& x, const FloatArray& w, const std::optional<FloatArray>& b, std::int64_t stride,
         std::int64_t padding) {
        NoGradGuard guard;
        const auto wt = to_tensor(w);
        return to_array(
            transposed_conv3d(to_tensor(x), ConvParams<float>{wt, bias_or_zero(b, wt.dim(1)), stride, Padding::Explicit(padding)}));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = 2, py::arg("padding") = 0);
  m.def(
      "maxpool3d",
      [](const FloatArray& x, std::int64_t window, std::int64_t stride, std::int64_t padding) {
        NoGradGuard guard;
        const auto r = maxpool3d(to_tensor(x), window, stride, padding);
        py::array_t<std::int64_t> idx(static_cast<py::ssize_t>(r.argmax->size()));
        std::copy(r.argmax->begin(), r.argmax->end(), idx.mutable_data());
        return py::make_tuple(to_array(r.output), idx.reshape(std::vector<py::ssize_t>(r.output.shape().begin(), r.output.shape().end())));
      },
      py::arg("x"), py::arg("window") = 2, py::arg("stride") = 2, py::arg("padding") = 0,
      "Returns (output, argmax) where argmax holds flat input offsets.");
  m.def("global_avg_pool", [](const FloatArray& x) {
    NoGradGuard guard;
    return to_array(global_avg_pool(to_tensor(x)));
  });
  m.def(
      "dense",
      [](const FloatArray& x, const FloatArray& w, const FloatArray& b) {
        NoGradGuard guard;
        return to_array(dense(to_tensor(x), to_tensor(w), to_tensor(b)));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias"));

  // metrics
  m.def("dice_score", [](const MaskArray& p, const MaskArray& t) { return dice_score(mask_span(p), mask_span(t)); });
  m.def("pixel_accuracy",
        [](const MaskArray& p, const MaskArray& t) { return pixel_accuracy(mask_span(p), mask_span(t)); });
  m.def(
      "f1_score",
      [](const MaskArray& p, const MaskArray& t, std::int64_t classes) {
        return f1_score(mask_span(p), mask_span(t), classes);
      },
      py::arg("pred"), py::arg("truth"), py::arg("num_classes") = 2);

  // models
  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& arch, std::int64_t in_channels, std::int64_t num_classes,
                       std::int64_t base_filters, std::int64_t depth, std::int64_t cardinality, std::int64_t kernel,
                       std::int64_t se_reduction, std::uint64_t seed) {
             return PyModel(model_config(arch, in_channels, num_classes, base_filters, depth, cardinality, kernel,
                                         se_reduction, seed));
           }),
           py::arg("arch"), py::arg("in_channels") = 4, py::arg("num_classes") = 2, py::arg("base_filters") = 8,
           py::arg("depth") = 4, py::arg("cardinality") = 2, py::arg("kernel") = 3, py::arg("se_reduction") = 4,
           py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("x"), py::arg("train") = false, "Logits [N, classes, D, H, W].")
      .def("predict", &PyModel::predict, py::arg("x"), "Argmax labels [N, D, H, W].")
      .def_property_readonly("param_count", &PyModel::param_count)
      .def("summary", &PyModel::summary)
      .def("table", &PyModel::table)
      .def("parameters", &PyModel::parameters);

  // volumes
  m.def(
      "generate_phantom",
      [](std::array<std::int64_t, 3> extents, std::int64_t num_modalities, std::int64_t num_classes,
         std::pair<std::int64_t, std::int64_t> tumor_count, std::pair<double, double> radius, double noise_sigma,
         std::uint64_t seed) {
        PhantomSpec s;
        s.extents = extents;
        s.num_modalities = num_modalities;
        s.num_classes = num_classes;
        s.tumor_count = tumor_count;
        s.radius = radius;
        s.noise_sigma = noise_sigma;
        s.seed = seed;
        const auto sample = generate_phantom(s);
        py::array_t<std::uint8_t> label({extents[0], extents[1], extents[2]});
        std::copy(sample.label.begin(), sample.label.end(), label.mutable_data());
        return py::make_tuple(to_array(sample.image), label);
      },
      py::arg("extents") = std::array<std::int64_t, 3>{32, 32, 32}, py::arg("num_modalities") = 4,
      py::arg("num_classes") = 2, py::arg("tumor_count") = std::pair<std::int64_t, std::int64_t>{1, 3},
      py::arg("radius") = std::pair<double, double>{2.0, 5.0}, py::arg("noise_sigma") = 0.1, py::arg("seed") = 0,
      "Returns (image [C, D, H, W] float32, label [D, H, W] uint8).");
  m.def(
      "normalize",
      [](const FloatArray& image, const std::string& method) {
        if (method != "zscore" && method != "minmax") throw ValueError("method must be zscore or minmax");
        return to_array(normalize(to_tensor(image), method == "zscore" ? NormMethod::zscore : NormMethod::minmax));
      },
      py::arg("image"), py::arg("method") = "zscore");

  m.def(
      "read_nifti",
      [](const std::filesystem::path& path) {
        const auto img = read_nifti(path);
        std::vector<py::ssize_t> shape(img.shape.begin(), img.shape.end());
        py::array_t<float> data(shape);
        std::copy(img.data.begin(), img.data.end(), data.mutable_data());
        py::dict info;
        info["datatype"] = static_cast<int>(img.datatype);
        info["spacing"] = img.spacing;
        return py::make_tuple(data, info);
      },
      py::arg("path"), "Returns (data float32, {'datatype', 'spacing'}).");
  m.def(
      "write_nifti",
      [](const std::filesystem::path& path, const FloatArray& data, const std::string& datatype,
         std::array<double, 3> spacing) {
        NiftiImage img;
        img.shape.assign(data.shape(), data.shape() + data.ndim());
        img.data.assign(data.data(), data.data() + data.size());
        img.spacing = spacing;
        if (datatype == "uint8") {
          img.datatype = NiftiDatatype::uint8;
        } else if (datatype == "int16") {
          img.datatype = NiftiDatatype::int16;
        } else if (datatype == "float32") {
          img.datatype = NiftiDatatype::float32;
        } else {
          throw ValueError("datatype must be uint8, int16 or float32");
        }
        write_nifti(img, path);
      },
      py::arg("path"), py::arg("data"), py::arg("datatype") = "float32",
      py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0});

  // experiments
  m.def(
      "load_config", [](const std::filesystem::path& path) { return to_python(to_json(load_config(path))); },
      py::arg("path"), "Validated config in canonical form.");
  m.def(
      "fingerprint", [](const py::object& config) { return fingerprint_hex(parse_config(from_python(config))); },
      py::arg("config"));
  m.def(
      "run_experiment",
      [](const std::filesystem::path& config_path, std::optional<std::filesystem::path> output, bool resume,
         bool quiet, std::optional<std::vector<std::uint64_t>> seeds) {
        auto c = load_config(config_path);
        if (output) c.output_dir = *output;
        if (seeds) c.seeds = *seeds;
        py::gil_scoped_release release;
        return run_experiment(c, {resume, quiet});
      },
      py::arg("config"), py::arg("output") = py::none(), py::arg("resume") = false, py::arg("quiet") = true,
      py::arg("seeds") = py::none(), "Trains every seed; returns the run directory.");
  m.def(
      "compare_runs",
      [](const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& csv) {
        const auto c = compare_runs(dirs, csv);
        py::list rows;
        for (const auto& r : c.rows) {
          py::dict d;
          d["model"] = r.model;
          d["epoch_seconds"] = r.epoch_seconds;
          d["params"] = r.params;
          d["final_val_accuracy"] = r.final_val_accuracy;
          d["best_train_f1"] = r.best_train_f1;
          d["best_val_f1"] = r.best_val_f1;
          d["best_val_f1_sd"] = r.best_val_f1_sd;
          d["seeds"] = r.seeds;
          rows.append(d);
        }
        return py::make_tuple(rows, c.incomplete);
      },
      py::arg("run_dirs"), py::arg("csv_path"), "Returns (rows, incomplete).");
  m.def("emit_plot_data", &emit_plot_data, py::arg("dir"));
  m.def(
      "summarize_config",
      [](const std::filesystem::path& path) { return to_python(summarize_config(load_config(path)).to_json()); },
      py::arg("path"));
}
