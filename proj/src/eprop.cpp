#include "deep_eprop/eprop.hpp"

#include <stdexcept>

#include "engine_detail.hpp"

namespace deep_eprop {

Matrix eprop_step(const Matrix& e_prev, const Vec& j_rec_diag, const Matrix& partial,
                  OpCounter* counter) {
  if (!e_prev.same_shape(partial)) {
    throw ShapeError("eprop_step: trace is " + shape_str(e_prev) + ", partial is " +
                     shape_str(partial));
  }
  if (j_rec_diag.size() != e_prev.rows) {
    throw ShapeError("eprop_step: diagonal has " + std::to_string(j_rec_diag.size()) +
                     " entries, trace has " + std::to_string(e_prev.rows) + " rows");
  }
  Matrix out(e_prev.rows, e_prev.cols);
  for (std::size_t i = 0; i < out.rows; ++i) {
    const double d = j_rec_diag[i];
    for (std::size_t k = 0; k < out.cols; ++k) {
      out(i, k) = partial(i, k) + d * e_prev(i, k);
    }
  }
  if (counter) counter->add_flops(2ll * static_cast<std::int64_t>(out.size()));
  return out;
}

Matrix eprop_gradient(const Vec& learning_signal, const Matrix& trace, OpCounter* counter) {
  return row_scale(learning_signal, trace, counter);
}

// ---- streaming engine --------------------------------------------------------

namespace {

// f'(a_n) * diag(W), the only part of a square Jacobian the approximation keeps
Vec jacobian_diag(const Vec& deriv, const Matrix& w, double scale, OpCounter* counter) {
  Vec d(deriv.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = scale * deriv[i] * w(i, i);
  if (counter) counter->add_flops(2ll * static_cast<std::int64_t>(d.size()));
  return d;
}

// Densify a home trace through a cross Jacobian: the home trace e stands for
// the block-diagonal dense trace E[j, j*C+k] = e[j,k], so (W*E)[r, j*C+k] =
// W[r,j]*e[j,k]. Counted like a contraction of the same output shape.
Matrix densify_through(const Matrix& w, const Matrix& e, OpCounter* counter) {
  if (w.cols != e.rows) {
    throw ShapeError("densify_through: inner dimensions differ, left is " + shape_str(w) +
                     ", right is " + shape_str(e));
  }
  Matrix out(w.rows, e.rows * e.cols);
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t j = 0; j < e.rows; ++j) {
      const double wj = w(r, j);
      for (std::size_t k = 0; k < e.cols; ++k) out(r, j * e.cols + k) = wj * e(j, k);
    }
  }
  if (counter) counter->add_flops(2ll * static_cast<std::int64_t>(w.rows * e.size()));
  return out;
}

}  // namespace

DiagForwardRun::DiagForwardRun(const Model& model, const ParamSet& params, EngineHooks hooks,
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
    for (int n : run.path) {
      const ModelNode& node = model.nodes[n];
      if (n == run.home) {
        run.trace[n] = Matrix(info.rows, info.cols);
      } else if (model.trace_mode == TraceMode::DiagEverywhere) {
        if (node.dim != info.rows) {
          throw SpecError("trace_mode diag_everywhere requires every node on the path from "
                          "group '" + info.id + "' to the output to match its home width " +
                          std::to_string(info.rows) + "; node '" + node.id + "' has width " +
                          std::to_string(node.dim));
        }
        run.trace[n] = Matrix(info.rows, info.cols);
      } else {
        run.trace[n] = Matrix(node.dim, info.rows * info.cols);
      }
      live_trace_values_ += static_cast<std::int64_t>(run.trace[n].size());
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

void DiagForwardRun::update_traces(GroupRun& run, const StateSet& prev, const Vec& x) {
  const GroupInfo& info = model_.groups[run.group];
  const bool diag_everywhere = model_.trace_mode == TraceMode::DiagEverywhere;
  std::vector<Matrix> next = run.trace;
  for (int n : run.path) {
    const ModelNode& node = model_.nodes[n];
    const Vec& deriv = derivs_[n];
    if (n == run.home) {
      // terminal rule: partial[i,k] = f'(a_i) * presyn_k, plus the kept diagonal
      const Vec presyn = detail::group_presyn(model_, run.group, prev, states_, x);
      Matrix partial(info.rows, info.cols);
      add_outer(partial, deriv, presyn, counter_);
      Vec d(node.dim, 0.0);
      if (node.rec_group >= 0) {
        d = jacobian_diag(deriv, params_.mats[node.rec_group], 1.0, counter_);
      }
      next[n] = eprop_step(run.trace[n], d, partial, counter_);
    } else if (diag_everywhere) {
      // nonterminal rule, fully per-synapse: cross terms keep only their diagonal
      Matrix carried(info.rows, info.cols);
      for (const auto& [p, e] : node.incoming) {
        if (next[p].data.empty()) continue;
        const Vec c = jacobian_diag(deriv, params_.mats[e], hooks_.cross_term_scale, counter_);
        for (std::size_t i = 0; i < carried.rows; ++i) {
          for (std::size_t k = 0; k < carried.cols; ++k) {
            carried(i, k) += c[i] * next[p](i, k);
          }
        }
        if (counter_) counter_->add_flops(2ll * static_cast<std::int64_t>(carried.size()));
      }
      Vec d(node.dim, 0.0);
      if (node.rec_group >= 0) {
        d = jacobian_diag(deriv, params_.mats[node.rec_group], 1.0, counter_);
      }
      next[n] = eprop_step(run.trace[n], d, carried, counter_);
    } else {
      // nonterminal rule with dense upper traces and full Jacobians
      Matrix acc(node.dim, info.rows * info.cols);
      if (node.rec_group >= 0) {
        acc = contract(params_.mats[node.rec_group], run.trace[n], counter_);
      }
      for (const auto& [p, e] : node.incoming) {
        if (next[p].data.empty()) continue;
        const Matrix carried = p == run.home
                                   ? densify_through(params_.mats[e], next[p], counter_)
                                   : contract(params_.mats[e], next[p], counter_);
        axpy(acc, hooks_.cross_term_scale, carried, counter_);
      }
      next[n] = row_scale(deriv, acc, counter_);
    }
  }
  run.trace = std::move(next);
}

void DiagForwardRun::step(const Vec& x) {
  const StateSet prev = states_;
  StepResult r = forward_step(model_, params_, prev, x, counter_);
  states_ = std::move(r.states);
  for (std::size_t n = 0; n < model_.nodes.size(); ++n) {
    derivs_[n] = activation_eval(model_.nodes[n].activation, r.preacts[n]).deriv;
  }
  for (GroupRun& run : runs_) update_traces(run, prev, x);
  ++t_;
  if (counter_) counter_->note_trace_storage(live_trace_values_);
}

void DiagForwardRun::tap_loss(const Vec& target) {
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
    Matrix& g = grad_.mats[run.group];
    if (run.home == model_.output_node || model_.trace_mode == TraceMode::DiagEverywhere) {
      const Matrix contrib = eprop_gradient(u, top, counter_);
      add_in_place(g, contrib, counter_);
    } else {
      const Vec flat = vecmat(u, top, counter_);
      for (std::size_t i = 0; i < flat.size(); ++i) g.data[i] += flat[i];
      if (counter_) counter_->add_flops(static_cast<std::int64_t>(flat.size()));
    }
  }
  detail::tap_readout(model_, states_, ydiff, grad_, counter_);
}

Vec DiagForwardRun::output() const { return readout(model_, params_, states_); }

const std::vector<Matrix>& DiagForwardRun::traces_for(const std::string& group_id) const {
  for (const GroupRun& run : runs_) {
    if (model_.groups[run.group].id == group_id) return run.trace;
  }
  throw std::invalid_argument("traces_for: no trace run for group '" + group_id + "'");
}

GradSet eprop_episode(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                      const std::vector<Vec>& targets, EngineHooks hooks, OpCounter* counter) {
  validate_episode_args(model, inputs, targets);
  DiagForwardRun run(model, params, hooks, counter);
  const std::size_t T = inputs.size();
  for (std::size_t t = 1; t <= T; ++t) {
    run.step(inputs[t - 1]);
    if (loss_enabled_at(model, t, T)) run.tap_loss(target_at(model, targets, t, T));
  }
  return run.gradient();
}

}  // namespace deep_eprop
