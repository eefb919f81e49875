#include "deep_eprop/rtrl.hpp"

#include <cmath>
#include <stdexcept>

#include "engine_detail.hpp"

namespace deep_eprop {

SensitivityDense rtrl_init(const Model& model, const std::string& group_id) {
  const int g = model.group_index(group_id);
  if (g < 0 || !model.is_tracked(g)) {
    throw std::invalid_argument("rtrl_init: group '" + group_id + "' is not tracked");
  }
  const GroupInfo& info = model.groups[g];
  if (info.kind == GroupKind::ReadoutWeights) {
    throw std::invalid_argument("rtrl_init: the readout taps the loss directly, it has no trace");
  }
  SensitivityDense s;
  s.node_id = model.nodes[info.home_node].id;
  s.group_id = info.id;
  s.group_rows = info.rows;
  s.group_cols = info.cols;
  s.m = Matrix(model.nodes[info.home_node].dim, info.rows * info.cols);
  return s;
}

SensitivityDense rtrl_step(const SensitivityDense& s_prev, const Matrix& j_rec,
                           const SensitivityDense& partial, OpCounter* counter) {
  if (!s_prev.m.same_shape(partial.m)) {
    throw ShapeError("rtrl_step: trace is " + shape_str(s_prev.m) + ", partial is " +
                     shape_str(partial.m));
  }
  SensitivityDense out = partial;
  Matrix carried = contract(j_rec, s_prev.m, counter);
  add_in_place(out.m, carried, counter);
  return out;
}

Matrix rtrl_gradient(const SensitivityDense& s, const Vec& dl_dy, const Matrix& j_out,
                     OpCounter* counter) {
  if (s.group_rows * s.group_cols != s.m.cols) {
    throw ShapeError("rtrl_gradient: trace has " + std::to_string(s.m.cols) +
                     " columns, group wants " + std::to_string(s.group_rows) + "x" +
                     std::to_string(s.group_cols));
  }
  const Vec u = vecmat(dl_dy, j_out, counter);
  const Vec flat = vecmat(u, s.m, counter);
  Matrix out(s.group_rows, s.group_cols);
  out.data = flat;
  return out;
}

// ---- streaming engine --------------------------------------------------------

DenseForwardRun::DenseForwardRun(const Model& model, const ParamSet& params, EngineHooks hooks,
                                 OpCounter* counter)
    : model_(model), params_(params), hooks_(hooks), counter_(counter),
      states_(StateSet::zeros(model)), grad_(GradSet::zeros(model)) {
  derivs_.resize(model.nodes.size());
  for (int g : model.tracked) {
    const GroupInfo& info = model.groups[g];
    if (info.kind == GroupKind::ReadoutWeights) continue;
    GroupRun run;
    run.group = g;
    run.home = info.home_node;
    run.path = detail::influence_path(model, info.home_node);
    run.trace.resize(model.nodes.size());
    const std::size_t p = info.rows * info.cols;
    for (int n : run.path) {
      run.trace[n] = Matrix(model.nodes[n].dim, p);
      live_trace_values_ += static_cast<std::int64_t>(model.nodes[n].dim * p);
    }
    runs_.push_back(std::move(run));
  }
  if (counter_) {
    std::size_t one_step = model.input_dim + model.readout_dim;
    for (const auto& n : model.nodes) one_step += 2 * n.dim;
    counter_->add_activation_storage(static_cast<std::int64_t>(one_step));
    counter_->note_trace_storage(live_trace_values_);
  }
}

void DenseForwardRun::step(const Vec& x) {
  const StateSet prev = states_;
  StepResult r = forward_step(model_, params_, prev, x, counter_);
  states_ = std::move(r.states);
  for (std::size_t n = 0; n < model_.nodes.size(); ++n) {
    derivs_[n] = activation_eval(model_.nodes[n].activation, r.preacts[n]).deriv;
  }
  for (GroupRun& run : runs_) {
    const GroupInfo& info = model_.groups[run.group];
    std::vector<Matrix> next = run.trace;
    for (int n : run.path) {
      const ModelNode& node = model_.nodes[n];
      Matrix acc(node.dim, info.rows * info.cols);
      if (node.rec_group >= 0) {
        acc = contract(params_.mats[node.rec_group], run.trace[n], counter_);
      }
      for (const auto& [p, e] : node.incoming) {
        if (next[p].data.empty()) continue;  // predecessor off the influence path
        const Matrix carried = contract(params_.mats[e], next[p], counter_);
        axpy(acc, hooks_.cross_term_scale, carried, counter_);
      }
      if (n == run.home) {
        const Vec presyn = detail::group_presyn(model_, run.group, prev, states_, x);
        add_in_place(acc, detail::injection_preact(info, presyn), counter_);
      }
      next[n] = row_scale(derivs_[n], acc, counter_);
    }
    run.trace = std::move(next);
  }
  ++t_;
  if (counter_) counter_->note_trace_storage(live_trace_values_);
}

void DenseForwardRun::tap_loss(const Vec& target) {
  if (t_ == 0) throw std::logic_error("tap_loss: no step taken yet");
  if (target.size() != model_.readout_dim) {
    throw ShapeError("tap_loss: target has " + std::to_string(target.size()) +
                     " entries, readout is " + std::to_string(model_.readout_dim));
  }
  Vec ydiff = readout(model_, params_, states_, counter_);
  axpy(ydiff, -1.0, target, counter_);
  loss_ += 0.5 * dot(ydiff, ydiff);
  const Vec u = matvec_transposed(params_.mats.back(), ydiff, counter_);
  for (const GroupRun& run : runs_) {
    const Matrix& top = run.trace[model_.output_node];
    if (top.data.empty()) continue;
    const Vec flat = vecmat(u, top, counter_);
    Matrix& g = grad_.mats[run.group];
    for (std::size_t i = 0; i < flat.size(); ++i) g.data[i] += flat[i];
    if (counter_) counter_->add_flops(static_cast<std::int64_t>(flat.size()));
  }
  detail::tap_readout(model_, states_, ydiff, grad_, counter_);
}

Vec DenseForwardRun::output() const { return readout(model_, params_, states_); }

const std::vector<Matrix>& DenseForwardRun::traces_for(const std::string& group_id) const {
  for (const GroupRun& run : runs_) {
    if (model_.groups[run.group].id == group_id) return run.trace;
  }
  throw std::invalid_argument("traces_for: no trace run for group '" + group_id + "'");
}

GradSet deep_rtrl_episode(const Model& model, const ParamSet& params,
                          const std::vector<Vec>& inputs, const std::vector<Vec>& targets,
                          EngineHooks hooks, OpCounter* counter) {
  validate_episode_args(model, inputs, targets);
  DenseForwardRun run(model, params, hooks, counter);
  const std::size_t T = inputs.size();
  for (std::size_t t = 1; t <= T; ++t) {
    run.step(inputs[t - 1]);
    if (loss_enabled_at(model, t, T)) run.tap_loss(target_at(model, targets, t, T));
  }
  return run.gradient();
}

GradSet rtrl_episode(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                     const std::vector<Vec>& targets, OpCounter* counter) {
  if (model.nodes.size() != 1) {
    throw std::invalid_argument(
        "rtrl_episode: model has " + std::to_string(model.nodes.size()) +
        " nodes; the single-layer form needs exactly one (use deep_rtrl_episode)");
  }
  return deep_rtrl_episode(model, params, inputs, targets, EngineHooks{}, counter);
}

}  // namespace deep_eprop
