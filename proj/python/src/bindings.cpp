#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"

#include "codedlf/coding.hpp"
#include "codedlf/error.hpp"
#include "codedlf/eval.hpp"
#include "codedlf/gradcheck.hpp"
#include "codedlf/lightfield.hpp"
#include "codedlf/training.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace codedlf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Image& img) {
  Array a({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Image img(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array to_array(const LightField& lf) {
  Array a({lf.grid_u, lf.grid_v, lf.height, lf.width});
  std::copy(lf.samples.begin(), lf.samples.end(), a.mutable_data());
  return a;
}

LightField to_lightfield(const Array& a) {
  if (a.ndim() != 4) throw py::value_error("expected a 4-D array [U, V, H, W]");
  LightField lf(a.shape(0), a.shape(1), a.shape(2), a.shape(3));
  std::copy(a.data(), a.data() + a.size(), lf.samples.begin());
  lf.validate();
  return lf;
}

const CodingPattern* pattern_of(const train::Checkpoint& ck) { return ck.pattern ? &*ck.pattern : nullptr; }

// Checkpoint plus one observation, with the feature volume computed once.
class Reconstruction {
 public:
  Reconstruction(const std::filesystem::path& ckpt, const Array& field)
      : ckpt_(train::load_checkpoint(ckpt)) {
    LightField lf = to_lightfield(field);
    featvol_ = train::feature_volume(ckpt_, train::observe(lf, ckpt_.mode, pattern_of(ckpt_)));
  }

  py::tuple render(double u, double v) const {
    render::RenderedView view;
    {
      py::gil_scoped_release release;
      view = train::render_view(ckpt_, featvol_, {u, v});
    }
    return py::make_tuple(to_array(view.image), to_array(view.depth));
  }

  std::string mode() const { return to_string(ckpt_.mode); }

 private:
  train::Checkpoint ckpt_;
  ad::Value featvol_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Coded light-field reconstruction core";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("random_scene", [](std::uint64_t seed) { return scene_to_json(random_scene(seed)).dump(); },
        py::arg("seed"));
  m.def(
      "synth_lightfield",
      [](const std::string& scene, std::size_t grid_u, std::size_t grid_v, std::size_t h, std::size_t w,
         std::uint64_t seed) { return to_array(synth_lightfield(scene_from_json(json::parse(scene)), grid_u, grid_v, h, w, seed)); },
      py::arg("scene"), py::arg("grid_u"), py::arg("grid_v"), py::arg("height"), py::arg("width"), py::arg("seed"));
  m.def(
      "synth_view",
      [](const std::string& scene, double u, double v, std::size_t h, std::size_t w, std::uint64_t seed) {
        return to_array(synth_view(scene_from_json(json::parse(scene)), {u, v}, h, w, seed));
      },
      py::arg("scene"), py::arg("u"), py::arg("v"), py::arg("height"), py::arg("width"), py::arg("seed"));
  m.def("load_lightfield", [](const std::filesystem::path& dir) { return to_array(load_lightfield(dir)); });
  m.def("save_lightfield", [](const Array& a, const std::filesystem::path& dir) { save_lightfield(to_lightfield(a), dir); });

  m.def(
      "make_default_pattern",
      [](std::size_t k, std::size_t gu, std::size_t gv, std::size_t h, std::size_t w, std::size_t tile,
         std::uint64_t seed) { return pattern_to_json(make_default_pattern(k, gu, gv, h, w, tile, seed)).dump(); },
      py::arg("k"), py::arg("grid_u"), py::arg("grid_v"), py::arg("height"), py::arg("width"), py::arg("tile"),
      py::arg("seed"));
  m.def(
      "encode",
      [](const Array& field, const std::string& mode, std::optional<std::string> pattern) {
        LightField lf = to_lightfield(field);
        std::optional<CodingPattern> p;
        if (pattern) p = pattern_from_json(json::parse(*pattern));
        CodedImage c = encode(lf, parse_input_mode(mode), p ? &*p : nullptr);
        return py::make_tuple(to_array(c.pixels), c.gain);
      },
      py::arg("field"), py::arg("mode"), py::arg("pattern") = py::none());

  m.def(
      "psnr", [](const Array& a, const Array& b, double peak) { return eval::psnr(to_image(a), to_image(b), peak); },
      py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def(
      "ssim", [](const Array& a, const Array& b, std::size_t window) { return eval::ssim(to_image(a), to_image(b), window); },
      py::arg("a"), py::arg("b"), py::arg("window") = 8);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double eps) {
        gradcheck::SuiteOptions o;
        o.seed = seed;
        o.eps = eps;
        return gradcheck::to_json(gradcheck::run_suite(o)).dump();
      },
      py::arg("seed") = 0, py::arg("eps") = 1e-5);

  m.def(
      "train",
      [](const std::string& config, const std::string& base_dir) {
        auto cfg = train::train_config_from_json(json::parse(config), base_dir);
        if (cfg.checkpoint_path.empty()) throw Error(ErrorKind::InvalidConfig, "checkpoint_path is required");
        train::Checkpoint ck;
        {
          py::gil_scoped_release release;
          ck = train::train(cfg);
        }
        py::list losses;
        for (const auto& r : ck.history) losses.append(r.loss);
        return losses;
      },
      py::arg("config"), py::arg("base_dir") = "");
  m.def("default_train_config", [] { return train::to_json(train::TrainConfig{}).dump(); });

  m.def(
      "eval_grid",
      [](const std::filesystem::path& ckpt, const std::string& scene, std::size_t m_, double step) {
        eval::EvalOptions o;
        o.m = m_;
        o.step = step;
        auto ck = train::load_checkpoint(ckpt);
        eval::EvalReport r;
        {
          py::gil_scoped_release release;
          r = eval::eval_grid(ck, scene_from_json(json::parse(scene)), o, ckpt.string());
        }
        return eval::to_json(r).dump();
      },
      py::arg("checkpoint"), py::arg("scene"), py::arg("m") = 13, py::arg("step") = 0.5);

  py::class_<Reconstruction>(m, "Reconstruction")
      .def(py::init<const std::filesystem::path&, const Array&>(), py::arg("checkpoint"), py::arg("field"))
      .def("render", &Reconstruction::render, py::arg("u"), py::arg("v"))
      .def_property_readonly("mode", &Reconstruction::mode);
}
