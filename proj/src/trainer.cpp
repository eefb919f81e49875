#include "deep_eprop/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "deep_eprop/eprop.hpp"
#include "deep_eprop/oracles.hpp"

namespace deep_eprop {

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "delayed_copy") return TaskKind::DelayedCopy;
  if (name == "temporal_xor") return TaskKind::TemporalXor;
  if (name == "pattern_sum") return TaskKind::PatternSum;
  throw std::invalid_argument("unknown task '" + name +
                              "' (expected delayed_copy|temporal_xor|pattern_sum)");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::DelayedCopy: return "delayed_copy";
    case TaskKind::TemporalXor: return "temporal_xor";
    case TaskKind::PatternSum: return "pattern_sum";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "bptt") return Algorithm::Bptt;
  if (name == "rtrl") return Algorithm::Rtrl;
  if (name == "deep_rtrl") return Algorithm::DeepRtrl;
  if (name == "eprop") return Algorithm::Eprop;
  if (name == "deep_eprop") return Algorithm::DeepEprop;
  throw std::invalid_argument("unknown algorithm '" + name +
                              "' (expected bptt|rtrl|deep_rtrl|eprop|deep_eprop)");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Bptt: return "bptt";
    case Algorithm::Rtrl: return "rtrl";
    case Algorithm::DeepRtrl: return "deep_rtrl";
    case Algorithm::Eprop: return "eprop";
    case Algorithm::DeepEprop: return "deep_eprop";
  }
  return "?";
}

TaskInstance generate_task(TaskKind kind, const TaskParams& params, std::uint64_t seed) {
  const std::size_t T = params.horizon;
  if (T == 0) throw std::invalid_argument("generate_task: horizon must be at least 1");
  std::mt19937_64 rng(derive_seed(seed, to_string(kind)));
  TaskInstance task;
  task.kind = kind;
  task.seed = seed;
  switch (kind) {
    case TaskKind::TemporalXor: {
      if (params.mark_first < 1 || params.mark_first >= params.mark_second ||
          params.mark_second > T) {
        throw std::invalid_argument(
            "generate_task: temporal_xor needs 1 <= mark_first < mark_second <= horizon");
      }
      const bool b1 = uniform01(rng) < 0.5;
      const bool b2 = uniform01(rng) < 0.5;
      task.inputs.assign(T, Vec(2, 0.0));
      task.inputs[params.mark_first - 1] = {b1 ? 1.0 : 0.0, 1.0};
      task.inputs[params.mark_second - 1] = {b2 ? 1.0 : 0.0, 1.0};
      task.targets = {Vec{(b1 != b2) ? 1.0 : 0.0}};
      task.loss_timesteps = LossTimesteps::FinalOnly;
      break;
    }
    case TaskKind::DelayedCopy: {
      if (params.input_dim == 0) throw std::invalid_argument("generate_task: input_dim >= 1");
      if (params.delay + 1 > T) {
        throw std::invalid_argument("generate_task: delayed_copy needs horizon >= delay + 1");
      }
      task.inputs.assign(T, Vec(params.input_dim));
      for (auto& x : task.inputs) {
        for (double& v : x) v = 2.0 * uniform01(rng) - 1.0;
      }
      task.targets = {task.inputs[T - params.delay - 1]};
      task.loss_timesteps = LossTimesteps::FinalOnly;
      break;
    }
    case TaskKind::PatternSum: {
      if (params.input_dim == 0) throw std::invalid_argument("generate_task: input_dim >= 1");
      task.inputs.assign(T, Vec(params.input_dim));
      Vec running(params.input_dim, 0.0);
      task.targets.reserve(T);
      for (auto& x : task.inputs) {
        for (std::size_t i = 0; i < x.size(); ++i) {
          x[i] = uniform01(rng) - 0.5;
          running[i] += x[i];
        }
        task.targets.push_back(running);
      }
      task.loss_timesteps = LossTimesteps::EveryStep;
      break;
    }
  }
  return task;
}

// ---- alignment ---------------------------------------------------------------

namespace {

constexpr double kNormFloor = 1e-12;

struct AlignAccum {
  double dot = 0.0, na = 0.0, nb = 0.0, diff = 0.0;

  void add(const Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      dot += a.data[i] * b.data[i];
      na += a.data[i] * a.data[i];
      nb += b.data[i] * b.data[i];
      const double d = a.data[i] - b.data[i];
      diff += d * d;
    }
  }
  double cosine() const {
    if (na == 0.0 && nb == 0.0) return 1.0;  // both zero: same (null) direction
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  }
  double relative_l2() const { return std::sqrt(diff) / std::max(std::sqrt(nb), kNormFloor); }
};

}  // namespace

GradientReport gradient_alignment(const Model& model, const GradSet& g1, const GradSet& g2) {
  GradientReport report;
  AlignAccum all;
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    const Matrix& a = g1.mats[g];
    const Matrix& b = g2.mats[g];
    if (!a.same_shape(b)) {
      throw ShapeError("gradient_alignment: group '" + model.groups[g].id + "' is " +
                       shape_str(a) + " vs " + shape_str(b));
    }
    AlignAccum one;
    one.add(a, b);
    all.add(a, b);
    report.per_group.push_back({model.groups[g].id, one.cosine(), one.relative_l2()});
  }
  report.cosine = all.cosine();
  report.relative_l2 = all.relative_l2();
  return report;
}

// ---- training loop -----------------------------------------------------------

void apply_update(ParamSet& params, const GradSet& grad, double learning_rate) {
  for (std::size_t g = 0; g < params.mats.size(); ++g) {
    axpy(params.mats[g], -learning_rate, grad.mats[g]);
  }
}

namespace {

void check_task_fits(const Model& model, const TaskInstance& task) {
  if (task.inputs.front().size() != model.input_dim) {
    throw std::invalid_argument("train: task '" + to_string(task.kind) + "' emits " +
                                std::to_string(task.inputs.front().size()) +
                                "-dim inputs, model expects " +
                                std::to_string(model.input_dim));
  }
  if (task.targets.front().size() != model.readout_dim) {
    throw std::invalid_argument("train: task targets are " +
                                std::to_string(task.targets.front().size()) +
                                "-dim, readout is " + std::to_string(model.readout_dim));
  }
  if (task.loss_timesteps != model.loss_timesteps) {
    throw std::invalid_argument("train: task '" + to_string(task.kind) + "' scores " +
                                (task.loss_timesteps == LossTimesteps::EveryStep
                                     ? std::string("every step")
                                     : std::string("the final step only")) +
                                ", the model's loss_timesteps disagrees");
  }
}

struct EpisodeOutcome {
  GradSet grad;
  double loss = 0.0;
};

template <class Run>
EpisodeOutcome run_forward_episode(const Model& model, ParamSet& params,
                                   const TaskInstance& task, UpdateTiming timing,
                                   double learning_rate) {
  Run run(model, params);
  const std::size_t T = task.inputs.size();
  GradSet applied = GradSet::zeros(model);
  for (std::size_t t = 1; t <= T; ++t) {
    run.step(task.inputs[t - 1]);
    if (!loss_enabled_at(model, t, T)) continue;
    run.tap_loss(target_at(model, task.targets, t, T));
    if (timing == UpdateTiming::Online) {
      // apply only this step's fresh contribution, then keep going on the
      // updated parameters (traces become slightly off-policy by design)
      GradSet cur = run.gradient();
      for (std::size_t g = 0; g < cur.mats.size(); ++g) {
        Matrix delta = cur.mats[g];
        axpy(delta, -1.0, applied.mats[g]);
        axpy(params.mats[g], -learning_rate, delta);
      }
      applied = std::move(cur);
    }
  }
  return {run.gradient(), run.loss_so_far()};
}

EpisodeOutcome episode_gradient(const Model& model, ParamSet& params, const TaskInstance& task,
                                const TrainConfig& config) {
  switch (config.algorithm) {
    case Algorithm::Bptt: {
      if (config.update_timing == UpdateTiming::Online) {
        throw std::invalid_argument("train: online updates need a forward-mode algorithm");
      }
      EpisodeOutcome out{GradSet::zeros(model), 0.0};
      out.grad = bptt_gradient(model, params, task.inputs, task.targets, nullptr, &out.loss);
      return out;
    }
    case Algorithm::Rtrl:
      if (model.nodes.size() != 1) {
        throw std::invalid_argument("train: algorithm rtrl needs a single-node model");
      }
      [[fallthrough]];
    case Algorithm::DeepRtrl:
      return run_forward_episode<DenseForwardRun>(model, params, task, config.update_timing,
                                                  config.learning_rate);
    case Algorithm::Eprop:
      if (model.nodes.size() != 1) {
        throw std::invalid_argument("train: algorithm eprop needs a single-node model");
      }
      [[fallthrough]];
    case Algorithm::DeepEprop:
      return run_forward_episode<DiagForwardRun>(model, params, task, config.update_timing,
                                                 config.learning_rate);
  }
  throw std::logic_error("episode_gradient: unhandled algorithm");
}

}  // namespace

TrainResult train(const Model& model_in, const TrainConfig& config) {
  if (config.episodes == 0) throw std::invalid_argument("train: episodes must be at least 1");
  if (!std::isfinite(config.learning_rate) || config.learning_rate < 0.0) {
    throw std::invalid_argument("train: learning_rate must be finite and nonnegative");
  }
  if (config.align_vs_bptt && config.update_timing == UpdateTiming::Online) {
    throw std::invalid_argument(
        "train: alignment needs a fixed parameter point; use episode_end updates");
  }
  Model model = model_in;
  if (config.trace_mode) model.trace_mode = *config.trace_mode;

  TrainResult result;
  result.final_params = init_params(model, model.seed);
  ParamSet& params = result.final_params;

  for (std::size_t e = 1; e <= config.episodes; ++e) {
    const TaskInstance task =
        generate_task(config.task, config.task_params,
                      derive_seed(config.seed, "episode." + std::to_string(e)));
    if (e == 1) check_task_fits(model, task);

    EpisodeMetrics row;
    row.episode = e;
    if (config.align_vs_bptt) {
      const GradSet reference = bptt_gradient(model, params, task.inputs, task.targets);
      const EpisodeOutcome out = episode_gradient(model, params, task, config);
      const GradientReport report = gradient_alignment(model, out.grad, reference);
      row.loss = out.loss;
      row.cosine_vs_bptt = report.cosine;
      row.rel_l2_vs_bptt = report.relative_l2;
      if (!std::isfinite(row.loss)) {
        throw DivergenceError("training diverged at episode " + std::to_string(e));
      }
      apply_update(params, out.grad, config.learning_rate);
    } else {
      const EpisodeOutcome out = episode_gradient(model, params, task, config);
      row.loss = out.loss;
      if (!std::isfinite(row.loss)) {
        throw DivergenceError("training diverged at episode " + std::to_string(e));
      }
      if (config.update_timing == UpdateTiming::EpisodeEnd) {
        apply_update(params, out.grad, config.learning_rate);
      }
    }
    result.series.push_back(row);
  }
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpisodeMetrics>& series) {
  out << "episode,loss,cosine_vs_bptt,rel_l2_vs_bptt\n";
  char buf[32];
  for (const EpisodeMetrics& row : series) {
    out << row.episode << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", row.loss);
    out << buf << ",";
    if (row.cosine_vs_bptt) {
      std::snprintf(buf, sizeof(buf), "%.17g", *row.cosine_vs_bptt);
      out << buf;
    }
    out << ",";
    if (row.rel_l2_vs_bptt) {
      std::snprintf(buf, sizeof(buf), "%.17g", *row.rel_l2_vs_bptt);
      out << buf;
    }
    out << "\n";
  }
}

std::optional<std::size_t> first_episode_below(const std::vector<EpisodeMetrics>& series,
                                               double threshold, std::size_t window) {
  if (window == 0 || series.size() < window) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sum += series[i].loss;
    if (i + 1 > window) sum -= series[i - window].loss;
    if (i + 1 >= window && sum / static_cast<double>(window) < threshold) {
      return series[i].episode;
    }
  }
  return std::nullopt;
}

}  // namespace deep_eprop
