// Python surface for the gradient engines. Matrices cross the boundary as
// nested lists keyed by group id; opaque handles keep Model/ParamSet cheap.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "deep_eprop/eprop.hpp"
#include "deep_eprop/oracles.hpp"
#include "deep_eprop/trainer.hpp"
#include "deep_eprop/verify.hpp"

namespace py = pybind11;
using namespace deep_eprop;

namespace {

std::vector<std::vector<double>> matrix_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    rows[i].assign(m.data.begin() + i * m.cols, m.data.begin() + (i + 1) * m.cols);
  }
  return rows;
}

py::dict grads_to_dict(const Model& model, const GradSet& g) {
  py::dict out;
  for (std::size_t i = 0; i < model.groups.size(); ++i) {
    out[py::str(model.groups[i].id)] = matrix_rows(g.mats[i]);
  }
  return out;
}

UpdateTiming timing_from_string(const std::string& name) {
  if (name == "episode_end") return UpdateTiming::EpisodeEnd;
  if (name == "online") return UpdateTiming::Online;
  throw std::invalid_argument("unknown update_timing '" + name +
                              "' (expected episode_end|online)");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gradient engines for deep recurrent networks: reverse mode, dense "
            "forward sensitivities, per-synapse eligibility traces, plus oracles.";

  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<ResourceError>(m, "ResourceError", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  py::class_<Model>(m, "Model")
      .def_readonly("input_dim", &Model::input_dim)
      .def_readonly("readout_dim", &Model::readout_dim)
      .def_readonly("seed", &Model::seed)
      .def_property_readonly("group_ids",
                             [](const Model& model) {
                               std::vector<std::string> ids;
                               for (const auto& g : model.groups) ids.push_back(g.id);
                               return ids;
                             })
      .def_property_readonly("tracked_groups",
                             [](const Model& model) {
                               std::vector<std::string> ids;
                               for (int g : model.tracked) ids.push_back(model.groups[g].id);
                               return ids;
                             })
      .def("param_count",
           [](const Model& model, const std::string& group_id) {
             const int g = model.group_index(group_id);
             if (g < 0) throw std::invalid_argument("unknown group '" + group_id + "'");
             return model.group_param_count(g);
           },
           py::arg("group_id"))
      .def("__repr__", [](const Model& model) {
        std::ostringstream s;
        s << "<Model nodes=" << model.nodes.size() << " groups=" << model.groups.size()
          << " input_dim=" << model.input_dim << " readout_dim=" << model.readout_dim << ">";
        return s.str();
      });

  py::class_<ParamSet>(m, "ParamSet")
      .def("__repr__", [](const ParamSet& p) {
        std::ostringstream s;
        s << "<ParamSet groups=" << p.mats.size() << ">";
        return s.str();
      });

  m.def("parse_model", &parse_model, py::arg("text"),
        "Parse a JSON network document and compile it to an executable model.");

  m.def("init_params", &init_params, py::arg("model"), py::arg("seed"),
        "Deterministic parameter init, biases zero.");

  m.def("checkpoint_text",
        [](const Model& model, const ParamSet& params) {
          std::ostringstream out;
          save_checkpoint(out, model, params);
          return out.str();
        },
        py::arg("model"), py::arg("params"));

  m.def("load_checkpoint_text",
        [](const Model& model, const std::string& text) {
          std::istringstream in(text);
          return load_checkpoint(in, model);
        },
        py::arg("model"), py::arg("text"));

  m.def("run_episode",
        [](const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
           const std::vector<Vec>& targets) {
          const RolloutRecord record = rollout(model, params, inputs, targets);
          py::dict out;
          out["outputs"] = record.outputs;
          out["step_losses"] = record.step_losses;
          out["loss"] = record.total_loss;
          return out;
        },
        py::arg("model"), py::arg("params"), py::arg("inputs"), py::arg("targets"));

  m.def("bptt_gradient",
        [](const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
           const std::vector<Vec>& targets) {
          return grads_to_dict(model, bptt_gradient(model, params, inputs, targets));
        },
        py::arg("model"), py::arg("params"), py::arg("inputs"), py::arg("targets"),
        "Exact reverse-mode gradient; fills every group.");

  m.def("deep_rtrl_gradient",
        [](const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
           const std::vector<Vec>& targets) {
          return grads_to_dict(model, deep_rtrl_episode(model, params, inputs, targets));
        },
        py::arg("model"), py::arg("params"), py::arg("inputs"), py::arg("targets"),
        "Forward-mode gradient over tracked groups; exact, no stored history.");

  m.def("eprop_gradient",
        [](const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
           const std::vector<Vec>& targets) {
          return grads_to_dict(model, eprop_episode(model, params, inputs, targets));
        },
        py::arg("model"), py::arg("params"), py::arg("inputs"), py::arg("targets"),
        "Eligibility-trace gradient over tracked groups, per model.trace_mode.");

  m.def("finite_diff_gradient",
        [](const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
           const std::vector<Vec>& targets, double step) {
          return grads_to_dict(model, finite_diff_gradient(model, params, inputs, targets, step));
        },
        py::arg("model"), py::arg("params"), py::arg("inputs"), py::arg("targets"),
        py::arg("step") = 1e-5);

  m.def("gradient_paths",
        [](const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
           const std::vector<Vec>& targets, std::size_t cap) {
          const auto paths = enumerate_gradient_paths(model, params, inputs, targets, cap);
          std::vector<std::pair<std::string, std::vector<std::string>>> out;
          out.reserve(paths.size());
          for (const auto& p : paths) out.emplace_back(p.group_id, p.nodes);
          return out;
        },
        py::arg("model"), py::arg("params"), py::arg("inputs"), py::arg("targets"),
        py::arg("cap") = 200000,
        "Every influence chain from a tracked group to the loss, as (group, labels).");

  m.def("train_on_task",
        [](const Model& model, const std::string& algorithm, const std::string& task,
           double learning_rate, std::size_t episodes, std::uint64_t seed, std::size_t horizon,
           const std::string& update_timing, std::optional<std::size_t> mark_first,
           std::optional<std::size_t> mark_second, bool align_vs_bptt) {
          TrainConfig config;
          config.algorithm = algorithm_from_string(algorithm);
          config.task = task_kind_from_string(task);
          config.learning_rate = learning_rate;
          config.episodes = episodes;
          config.seed = seed;
          config.task_params.horizon = horizon;
          config.task_params.input_dim = model.input_dim;
          if (mark_first) config.task_params.mark_first = *mark_first;
          if (mark_second) config.task_params.mark_second = *mark_second;
          config.update_timing = timing_from_string(update_timing);
          config.align_vs_bptt = align_vs_bptt;
          const TrainResult result = train(model, config);
          std::vector<double> losses;
          std::vector<double> cosines;
          losses.reserve(result.series.size());
          for (const auto& e : result.series) {
            losses.push_back(e.loss);
            if (e.cosine_vs_bptt) cosines.push_back(*e.cosine_vs_bptt);
          }
          py::dict out;
          out["losses"] = losses;
          if (!cosines.empty()) out["cosines"] = cosines;
          std::ostringstream checkpoint;
          save_checkpoint(checkpoint, model, result.final_params);
          out["checkpoint"] = checkpoint.str();
          return out;
        },
        py::arg("model"), py::arg("algorithm") = "deep_eprop",
        py::arg("task") = "temporal_xor", py::arg("learning_rate") = 0.1,
        py::arg("episodes") = 100, py::arg("seed") = 0, py::arg("horizon") = 10,
        py::arg("update_timing") = "episode_end", py::arg("mark_first") = py::none(),
        py::arg("mark_second") = py::none(), py::arg("align_vs_bptt") = false);

  m.def("verify",
        [](int threads, std::optional<Model> user_model) {
          VerifyOptions options;
          options.threads = threads;
          options.user_model = std::move(user_model);
          const VerifyReport report = run_verify(options);
          py::list checks;
          for (const CheckResult& c : report.checks) {
            py::dict row;
            row["name"] = c.name;
            row["passed"] = c.passed;
            row["worst"] = c.worst;
            row["tolerance"] = c.tolerance;
            row["detail"] = c.detail;
            checks.append(row);
          }
          py::dict out;
          out["all_passed"] = report.all_passed;
          out["checks"] = checks;
          return out;
        },
        py::arg("threads") = 0, py::arg("user_model") = py::none(),
        "Full self-verification battery; heavyweight (seconds, not milliseconds).");
}
