// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/cli.hpp"
#include "occfield/errors.hpp"
#include "occfield/evaluation.hpp"
#include "occfield/experiment.hpp"
#include "occfield/runtime.hpp"
#include "occfield/simulator.hpp"
#include "occfield/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace occ;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Points& a) {
    if (a.ndim() != 2 || a.shape(1) != 3) {
        throw DimensionError("expected an (N, 3) array of points");
    }
    const auto r = a.unchecked<2>();
    std::vector<Vec3> out(static_cast<std::size_t>(r.shape(0)));
    for (py::ssize_t i = 0; i < r.shape(0); ++i) {
        out[static_cast<std::size_t>(i)] = Vec3(r(i, 0), r(i, 1), r(i, 2));
    }
    return out;
}

py::array_t<double> from_points(const std::vector<Vec3>& pts) {
    py::array_t<double> a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
    auto w = a.mutable_unchecked<2>();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            w(static_cast<py::ssize_t>(i), k) = pts[i][k];
        }
    }
    return a;
}

// A checkpointed model frozen on one scene's camera views.
class Field {
public:
    Field(std::shared_ptr<const OccupancyModel> model, const SceneSpec& scene)
        : handle_(freeze(model, render_views(scene))) {}

    py::array_t<double> query(const Points& points) const {
        const auto pts = to_points(points);
        std::vector<double> p;
        {
            py::gil_scoped_release release;
            p = handle_.query(pts);
        }
        return py::array_t<double>(static_cast<py::ssize_t>(p.size()), p.data());
    }

private:
    OccupancyFieldHandle handle_;
};

py::dict scores_dict(const SceneScores& s) {
    py::dict d;
    d["absrel"] = s.absrel;
    d["chamfer"] = s.chamfer;
    d["f1"] = s.f1;
    d["iou"] = s.iou;
    return d;
}

} // namespace

PYBIND11_MODULE(_occfield, m) {
    m.doc() = "Bindings for the occfield C++ core";
    configure_allocator();

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<RuntimeFailure>(m, "RuntimeFailure", base.ptr());

    py::class_<SceneSpec>(m, "Scene")
        .def_static("generate", [](std::uint64_t seed) { return generate_scene(seed); }, py::arg("seed"))
        .def_static("load", &load_scene, py::arg("path"))
        .def_static("from_json", [](const std::string& s) { return scene_from_json(nlohmann::json::parse(s)); })
        .def("save", [](const SceneSpec& s, const std::filesystem::path& p) { save_scene(p, s); }, py::arg("path"))
        .def("to_json", [](const SceneSpec& s) { return scene_to_json(s).dump(); })
        .def_property_readonly("camera_count", [](const SceneSpec& s) { return s.rig.cameras.size(); })
        .def("cast",
             [](const SceneSpec& s, const std::array<double, 3>& o, const std::array<double, 3>& d) {
                 return cast(s, Ray::make(Vec3(o[0], o[1], o[2]), Vec3(d[0], d[1], d[2])));
             },
             py::arg("origin"), py::arg("direction"), "Distance to the first surface, or None.")
        .def("occupied",
             [](const SceneSpec& s, const Points& points) {
                 const auto pts = to_points(points);
                 py::array_t<bool> out(static_cast<py::ssize_t>(pts.size()));
                 auto w = out.mutable_unchecked<1>();
                 for (std::size_t i = 0; i < pts.size(); ++i) {
                     w(static_cast<py::ssize_t>(i)) = occupied(s, pts[i]);
                 }
                 return out;
             },
             py::arg("points"))
        .def("lidar", [](const SceneSpec& s) { return from_points(simulate_lidar(s).points); },
             "Simulated LiDAR returns as an (N, 3) array.");

    py::class_<OccupancyModel, std::shared_ptr<OccupancyModel>>(m, "Model")
        .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<OccupancyModel>(load_checkpoint(p)); },
                    py::arg("path"))
        .def("save", [](const OccupancyModel& mdl, const std::filesystem::path& p) { save_checkpoint(p, mdl); },
             py::arg("path"))
        .def("config", [](const OccupancyModel& mdl) { return mdl.config().to_json().dump(); })
        .def("field", [](std::shared_ptr<OccupancyModel> mdl, const SceneSpec& s) { return Field(mdl, s); },
             py::arg("scene"), "Freeze the model on the scene's rendered views.")
        .def("evaluate",
             [](std::shared_ptr<OccupancyModel> mdl, const SceneSpec& s) {
                 SceneScores r;
                 {
                     py::gil_scoped_release release;
                     r = evaluate_scene(mdl, s);
                 }
                 return scores_dict(r);
             },
             py::arg("scene"));

    py::class_<Field>(m, "Field").def("query", &Field::query, py::arg("points"),
                                      "Occupancy probability per (N, 3) point.");

    m.def("chamfer", [](const Points& a, const Points& b) { return chamfer(to_points(a), to_points(b)); },
          py::arg("a"), py::arg("b"));
    m.def("average_rank",
          [](const std::filesystem::path& path) {
              const auto table = read_rank_table(path);
              const auto avg = average_rank(table);
              py::dict d;
              for (std::size_t i = 0; i < avg.size(); ++i) {
                  d[py::str(table.methods[i])] = avg[i];
              }
              return d;
          },
          py::arg("path"));
    m.def("run",
          [](const std::vector<std::string>& args) {
              std::ostringstream out, err;
              int code = 0;
              {
                  py::gil_scoped_release release;
                  code = cli::run(args, out, err);
              }
              return py::make_tuple(code, out.str(), err.str());
          },
          py::arg("args"), "Run a command-line invocation; returns (exit_code, stdout, stderr).");
}
