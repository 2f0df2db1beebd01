#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mobs/channels.hpp"
#include "mobs/cnn_post.hpp"
#include "mobs/error.hpp"
#include "mobs/gaze.hpp"
#include "mobs/observer.hpp"
#include "mobs/phantom.hpp"
#include "mobs/pipeline.hpp"
#include "mobs/search.hpp"
#include "mobs/stats.hpp"

namespace py = pybind11;
using namespace mobs;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using BArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

// numpy arrays are (ny, nx) or (nz, ny, nx), matching x-fastest storage.
Dims dims_of(const py::array& a) {
  if (a.ndim() == 2) return {a.shape(1), a.shape(0), 1};
  if (a.ndim() == 3) return {a.shape(2), a.shape(1), a.shape(0)};
  throw InputError("expected a 2D or 3D array");
}

std::vector<py::ssize_t> shape_of(const Dims& d) {
  if (d.nz == 1) return {d.ny, d.nx};
  return {d.nz, d.ny, d.nx};
}

Volume to_volume(const DArray& a) {
  const Dims d = dims_of(a);
  return Volume(d, {}, std::vector<double>(a.data(), a.data() + a.size()));
}

BinaryMask to_mask(const BArray& a) {
  const Dims d = dims_of(a);
  std::vector<std::uint8_t> v(a.data(), a.data() + a.size());
  return BinaryMask(d, std::move(v));
}

DArray to_array(const Volume& v) {
  DArray out(shape_of(v.dims()));
  std::copy(v.values().begin(), v.values().end(), out.mutable_data());
  return out;
}

BArray to_array(const BinaryMask& m) {
  BArray out(shape_of(m.dims()));
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

std::vector<Volume> to_volumes(const std::vector<DArray>& v) {
  std::vector<Volume> out;
  out.reserve(v.size());
  for (const auto& a : v) out.push_back(to_volume(a));
  return out;
}

Voxel to_voxel(const std::vector<std::int64_t>& c) {
  if (c.size() == 2) return {c[0], c[1], 0};
  if (c.size() == 3) return {c[0], c[1], c[2]};
  throw InputError("a voxel is (x, y) or (x, y, z)");
}

}  // namespace

PYBIND11_MODULE(_mobs, m) {
  m.doc() = "Model-observer evaluation core";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def(
      "power_law_background",
      [](std::vector<std::int64_t> shape, double beta, std::uint64_t seed) {
        BackgroundSpec s;
        s.dims = shape.size() == 2 ? Dims{shape[1], shape[0], 1} : Dims{shape.at(2), shape.at(1), shape.at(0)};
        s.spacing = {1.0, 1.0, 1.0};
        s.power_law_beta = beta;
        s.seed = seed;
        return to_array(synthesize_background(s));
      },
      py::arg("shape"), py::arg("beta") = 3.0, py::arg("seed") = 0);

  m.def(
      "gabor_bank",
      [](int n_orientations, std::vector<double> phases, std::vector<double> pixels_per_cycle, int kernel_extent) {
        std::vector<DArray> out;
        for (const auto& k : gabor_bank(GaborParams::make(n_orientations, phases, pixels_per_cycle, kernel_extent)).kernels) {
          out.push_back(to_array(k));
        }
        return out;
      },
      py::arg("n_orientations") = 8, py::arg("phases") = std::vector<double>{0.0, 1.5707963267948966},
      py::arg("pixels_per_cycle") = std::vector<double>{4, 8, 16, 32, 64}, py::arg("kernel_extent") = 101);

  py::class_<LinearTemplate>(m, "LinearTemplate")
      .def_readonly("dprime", &LinearTemplate::dprime)
      .def_readonly("rank", &LinearTemplate::rank)
      .def_property_readonly("weights", [](const LinearTemplate& t) { return std::vector<double>(t.weights.begin(), t.weights.end()); })
      .def_property_readonly("kernel", [](const LinearTemplate& t) { return to_array(t.spatial_kernel); })
      .def("score", [](const LinearTemplate& t, const DArray& crop) { return score(t, to_volume(crop)); });

  m.def(
      "train_cho",
      [](const std::vector<DArray>& sp, const std::vector<DArray>& sa, int n_orientations,
         std::vector<double> pixels_per_cycle, double ridge) {
        const Dims d = dims_of(sp.at(0));
        const auto bank = gabor_bank(GaborParams::make(n_orientations, {0.0, 1.5707963267948966}, pixels_per_cycle,
                                                       static_cast<int>(d.nx)));
        return train_template(bank, to_volumes(sp), to_volumes(sa), ridge);
      },
      py::arg("sp_crops"), py::arg("sa_crops"), py::arg("n_orientations") = 8,
      py::arg("pixels_per_cycle") = std::vector<double>{4, 8, 16, 32, 64}, py::arg("ridge") = 0.0,
      "Channelized Hotelling template on square odd-sized crops");

  m.def(
      "response_map", [](const DArray& phantom, const DArray& kernel) {
        return to_array(response_map(to_volume(phantom), to_volume(kernel)));
      },
      py::arg("phantom"), py::arg("kernel"));

  m.def(
      "search_score",
      [](const DArray& map, const BArray& mask) {
        const SearchResult r = search_score(to_volume(map), to_mask(mask));
        return py::make_tuple(r.score, std::vector<std::int64_t>{r.location.x, r.location.y, r.location.z});
      },
      py::arg("map"), py::arg("mask"));

  m.def("auc_empirical", [](std::vector<double> sp, std::vector<double> sa) { return auc_empirical(sp, sa); });
  m.def("auc_parametric", [](std::vector<double> sp, std::vector<double> sa) { return auc_parametric(sp, sa, true); });

  m.def(
      "connected_components",
      [](const BArray& mask, int connectivity) {
        const ComponentLabeling l = connected_components(to_mask(mask), connectivity);
        py::array_t<std::int32_t> labels(shape_of(l.dims));
        std::copy(l.labels.begin(), l.labels.end(), labels.mutable_data());
        return py::make_tuple(labels, l.sizes);
      },
      py::arg("mask"), py::arg("connectivity"));

  m.def(
      "cnn_score", [](const DArray& prob, double threshold) { return cnn_score(ProbabilityMap(to_volume(prob)), threshold); },
      py::arg("prob"), py::arg("threshold"));

  m.def(
      "calibrate_threshold",
      [](const std::vector<DArray>& maps, const std::vector<int>& labels) {
        if (maps.size() != labels.size()) throw InputError("maps and labels differ in length");
        std::vector<ProbabilityMap> pm;
        for (const auto& a : maps) pm.emplace_back(to_volume(a));
        std::vector<LabeledMap> lm;
        for (std::size_t i = 0; i < pm.size(); ++i) lm.push_back({&pm[i], labels[i]});
        const ThresholdCalibration c = calibrate_threshold(lm);
        return py::make_tuple(c.threshold, c.thresholds, c.auc_by_threshold);
      },
      py::arg("maps"), py::arg("labels"));

  m.def(
      "gaussian_smooth",
      [](const DArray& v, std::vector<std::int64_t> support) {
        const Voxel s = to_voxel(support);
        return to_array(gaussian_smooth(to_volume(v), Dims{s.x, s.y, support.size() == 2 ? 1 : s.z}));
      },
      py::arg("volume"), py::arg("support") = std::vector<std::int64_t>{45, 45, 3});

  m.def(
      "top_fraction_mask",
      [](const DArray& map, double fraction, const BArray& interior) {
        return to_array(top_fraction_mask(to_volume(map), fraction, to_mask(interior)));
      },
      py::arg("map"), py::arg("fraction"), py::arg("interior"));

  m.def(
      "overlap_percentage",
      [](const DArray& t, const BArray& mask, const BArray& interior) {
        return overlap_percentage(to_volume(t), to_mask(mask), to_mask(interior));
      },
      py::arg("time_map"), py::arg("mask"), py::arg("interior"));

  m.def(
      "run",
      [](const std::string& config, std::optional<std::string> out, std::optional<std::uint64_t> seed) {
        RunOverrides ov;
        if (out) ov.output_dir = *out;
        ov.seed = seed;
        const RunConfig cfg = load_run_config(config, ov);
        {
          py::gil_scoped_release release;
          run_all(cfg);
        }
        return write_summary(cfg).dump();
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
      "Runs every pipeline stage and returns summary.json as a string");
}
