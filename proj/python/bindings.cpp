#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "npo/config.hpp"
#include "npo/controller.hpp"
#include "npo/error.hpp"
#include "npo/grpo.hpp"
#include "npo/metrics.hpp"
#include "npo/plot.hpp"
#include "npo/sources.hpp"
#include "npo/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

py::dict record_dict(const npo::MetricsRecord& r) {
  py::dict d;
  d["step"] = r.step;
  d["model_step"] = r.model_step;
  d["reward_mean"] = r.reward_mean;
  d["reward_ema"] = r.reward_ema;
  d["entropy_mean"] = r.entropy_mean;
  d["groups_replaced"] = r.groups_replaced;
  d["gradient_norm"] = r.gradient_norm;
  d["pool_size"] = r.pool_size;
  d["loss"] = r.loss;
  return d;
}

py::dict event_dict(const npo::ControllerEvent& e) {
  py::dict d;
  d["event"] = npo::to_string(e.kind);
  d["t"] = e.step;
  d["p_hat"] = e.p_hat;
  d["q"] = e.q_table;
  d["v"] = e.v_table;
  d["delta"] = e.delta;
  d["target_step"] = e.target_step;
  d["note"] = e.note;
  return d;
}

}  // namespace

PYBIND11_MODULE(_npo, m) {
  m.doc() = "toy near-future policy optimization trainer";

  auto base = py::register_exception<npo::Error>(m, "NpoError", PyExc_RuntimeError);
  py::register_exception<npo::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<npo::NotFoundError>(m, "NotFoundError", base.ptr());
  py::register_exception<npo::ChecksumError>(m, "ChecksumError", base.ptr());
  py::register_exception<npo::ParseError>(m, "ParseError", base.ptr());
  py::register_exception<npo::SelectionError>(m, "SelectionError", base.ptr());
  py::register_exception<npo::ContractError>(m, "ContractError", base.ptr());

  m.def("default_config", [] { return npo::config_to_json(npo::RunConfig{}); },
        "Canonical JSON of the default run config.");
  m.def("resolve_config", [](const std::string& text) {
    const auto c = npo::config_from_json(text);
    c.validate();
    return npo::config_to_json(c);
  }, py::arg("json"));

  m.def("train", [](const std::string& config_json) {
    const auto cfg = npo::config_from_json(config_json);
    py::gil_scoped_release nogil;
    return npo::cmd_train(cfg);
  }, py::arg("config_json"), "Runs the configured mode; returns the run directory.");

  m.def("replay", [](const fs::path& run, std::int64_t from, std::int64_t to) {
    npo::ReplayReport r;
    {
      py::gil_scoped_release nogil;
      r = npo::cmd_replay(run, from, to);
    }
    py::dict d;
    d["ok"] = r.ok;
    d["first_divergence"] = r.first_divergence;
    d["field"] = r.field;
    d["compared"] = r.compared;
    return d;
  }, py::arg("run"), py::arg("from_step"), py::arg("to_step"));

  m.def("measure_qv", [](const fs::path& run, std::int64_t anchor, std::vector<std::int64_t> deltas, int probes,
                         int n, int kl_samples, double c, std::uint64_t seed) {
    npo::QvOptions o;
    o.anchor = anchor;
    o.deltas = std::move(deltas);
    o.probe_count = probes;
    o.n = n;
    o.kl_samples = kl_samples;
    o.v_proxy_c = c;
    o.seed = seed;
    std::vector<npo::QvRow> rows;
    {
      py::gil_scoped_release nogil;
      rows = npo::measure_qv_run(run, o);
    }
    py::list out;
    for (const auto& r : rows) {
      py::dict d;
      d["delta"] = r.delta;
      d["q"] = r.q;
      d["q_std_err"] = r.q_std_err;
      d["failed"] = r.failed;
      d["kl"] = r.kl;
      d["kl_std_err"] = r.kl_std_err;
      d["v"] = r.v;
      d["s"] = r.s;
      out.append(d);
    }
    return out;
  }, py::arg("run"), py::arg("anchor") = 0, py::arg("deltas") = std::vector<std::int64_t>{}, py::arg("probes") = 0,
     py::arg("n") = 8, py::arg("kl_samples") = 256, py::arg("c") = 1.0, py::arg("seed") = 0);

  m.def("plot", [](const std::vector<fs::path>& inputs, const fs::path& output, const std::string& field) {
    npo::cmd_plot(inputs, output, field);
  }, py::arg("inputs"), py::arg("output"), py::arg("field") = "reward_mean");

  m.def("read_metrics", [](const fs::path& path) {
    py::list records, events;
    for (const auto& l : npo::read_metrics_file(path)) {
      if (l.record) records.append(record_dict(*l.record));
      if (l.event) events.append(event_dict(*l.event));
    }
    return py::make_tuple(records, events);
  }, py::arg("path"), "Returns (records, events) from a metrics stream.");

  m.def("group_advantages", [](const std::vector<double>& r) { return npo::group_advantages(r); }, py::arg("rewards"));
  m.def("estimate_v", &npo::estimate_V, py::arg("kl"), py::arg("c") = 1.0);
  m.def("select_rollback", [](const std::vector<std::tuple<std::int64_t, std::optional<double>, double>>& rows) {
    std::vector<npo::RollbackCandidate> c;
    for (const auto& [d, q, v] : rows) c.push_back({d, q, v});
    return npo::select_rollback(c);
  }, py::arg("candidates"), "candidates: (delta, q or None, v) triples");
}
