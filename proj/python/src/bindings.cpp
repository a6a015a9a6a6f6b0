#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "vlltr/cvlp.hpp"
#include "vlltr/error.hpp"
#include "vlltr/evalkit.hpp"
#include "vlltr/parallel.hpp"
#include "vlltr/pipeline.hpp"

namespace py = pybind11;
using namespace vlltr;
using Path = std::filesystem::path;

namespace {

py::object report_dict(const EvalReport& r) {
  return py::module_::import("json").attr("loads")(r.to_json());
}

Tensor matrix_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

RunConfig config_from(const py::dict& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) cfg.set(py::str(k), py::str(v));
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_vlltr, m) {
  m.doc() = "Long-tail recognition with language guidance: native core.";

  auto base = py::register_exception<Error>(m, "VlltrError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def("set", &RunConfig::set)
      .def("get", &RunConfig::get)
      .def("load", &RunConfig::load)
      .def("apply_text", &RunConfig::apply_text)
      .def("validate", &RunConfig::validate)
      .def("to_text", &RunConfig::to_text)
      .def("fingerprint", &RunConfig::fingerprint)
      .def_static("keys", [] {
        std::vector<std::string> out;
        for (const auto& k : RunConfig::keys()) out.push_back(k.key);
        return out;
      })
      .def("__repr__", [](const RunConfig& c) { return "<RunConfig " + c.fingerprint() + ">"; });

  m.def("config", &config_from, py::arg("overrides") = py::dict(),
        "Default configuration with key=value overrides applied and validated.");

  const auto threads = [] { return thread_budget(); };
  m.def("gen_data", &cmd_gen_data, py::arg("cfg"), py::arg("out"));
  m.def("make_teacher", &cmd_make_teacher, py::arg("cfg"), py::arg("out"));
  m.def("pretrain", &cmd_pretrain, py::arg("cfg"), py::arg("out"),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "select_anchors",
      [threads](const RunConfig& c, const Path& out) { cmd_select_anchors(c, out, threads()); },
      py::arg("cfg"), py::arg("out"), py::call_guard<py::gil_scoped_release>());
  m.def("finetune", &cmd_finetune, py::arg("cfg"), py::arg("out"),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "evaluate_run",
      [threads](const RunConfig& c, const Path& out, bool zero_shot) {
        EvalReport r;
        {
          py::gil_scoped_release nogil;
          r = zero_shot ? cmd_eval_zero_shot(c, out) : cmd_eval(c, out, threads());
        }
        return report_dict(r);
      },
      py::arg("cfg"), py::arg("out"), py::arg("zero_shot") = false);
  m.def(
      "run_pipeline",
      [threads](const RunConfig& c, const Path& out) {
        EvalReport r;
        {
          py::gil_scoped_release nogil;
          r = run_pipeline(c, out, threads());
        }
        return report_dict(r);
      },
      py::arg("cfg"), py::arg("out"));
  m.def(
      "ablate",
      [threads](const RunConfig& c, const Path& out) {
        AblationResult res;
        {
          py::gil_scoped_release nogil;
          res = cmd_ablate(c, out, threads());
        }
        py::dict pooled;
        for (std::size_t i = 0; i < res.labels.size(); ++i) pooled[py::str(res.labels[i])] = report_dict(res.pooled[i]);
        py::list runs;
        for (const auto& e : res.runs)
          runs.append(py::dict(py::arg("label") = e.label, py::arg("seed") = e.seed,
                               py::arg("report") = report_dict(e.report)));
        return py::dict(py::arg("pooled") = pooled, py::arg("runs") = runs, py::arg("table") = res.table);
      },
      py::arg("cfg"), py::arg("out"));
  m.def(
      "retrieve",
      [](const RunConfig& c, const Path& out, std::size_t sentence, std::size_t k) {
        py::list hits;
        for (const auto& h : cmd_retrieve(c, out, sentence, k))
          hits.append(py::make_tuple(h.sample_id, h.label, h.cosine));
        return hits;
      },
      py::arg("cfg"), py::arg("out"), py::arg("sentence"), py::arg("k") = 5);
  m.def(
      "gradcheck",
      [](std::size_t instances, std::uint64_t seed, bool inject_fault) {
        py::list rows;
        for (const auto& r : cmd_gradcheck(instances, seed, inject_fault))
          rows.append(py::dict(py::arg("name") = r.name, py::arg("instances") = r.instances,
                               py::arg("failures") = r.failures,
                               py::arg("max_rel_error") = r.max_rel_error));
        return rows;
      },
      py::arg("instances") = 20, py::arg("seed") = 0, py::arg("inject_fault") = false);

  m.def("pareto_counts", &gen_pareto_counts, py::arg("classes"), py::arg("n_max"), py::arg("n_min"),
        py::arg("alpha"));
  m.def("sqrt_weights", &sqrt_weights, py::arg("counts"));
  m.def(
      "evaluate",
      [](const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
         const Counts& train_counts) { return report_dict(evaluate(preds, labels, split_shots(train_counts))); },
      py::arg("predictions"), py::arg("labels"), py::arg("train_counts"));
  m.def(
      "ccl_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& sim,
         const std::vector<std::size_t>& labels, double tau) {
        return ccl_loss(Var::constant(matrix_from(sim)), labels, Var::constant(Tensor::scalar(tau))).total.item();
      },
      py::arg("sim"), py::arg("labels"), py::arg("tau"));
  m.def(
      "distill_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& sim,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& teacher, double tau,
         double teacher_tau) {
        return distill_loss(Var::constant(matrix_from(sim)), matrix_from(teacher),
                            Var::constant(Tensor::scalar(tau)), teacher_tau)
            .item();
      },
      py::arg("sim"), py::arg("teacher_sim"), py::arg("tau"), py::arg("teacher_tau"));
}
