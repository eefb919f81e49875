#pragma once

#include <string>
#include <vector>

#include "deep_eprop/network.hpp"

namespace deep_eprop {

/// Knobs for fault-injection smoke tests. Production behaviour is the default;
/// cross_term_scale multiplies every cross-node trace propagation term.
struct EngineHooks {
  double cross_term_scale = 1.0;
};

/// Dense sensitivity of one node's state w.r.t. one parameter group:
/// a (state_dim x group_param_count) matrix.
struct SensitivityDense {
  std::string node_id;
  std::string group_id;
  std::size_t group_rows = 0;
  std::size_t group_cols = 0;
  Matrix m;
};

/// Zero base-case trace for a tracked group, shaped (home dim x param count).
SensitivityDense rtrl_init(const Model& model, const std::string& group_id);

/// One forward-sensitivity update: S_t = partial + J_rec * S_prev.
SensitivityDense rtrl_step(const SensitivityDense& s_prev, const Matrix& j_rec,
                           const SensitivityDense& partial, OpCounter* counter = nullptr);

/// Contract a trace with the loss tap: reshape((dl_dy * j_out) * S) to the
/// group's parameter shape.
Matrix rtrl_gradient(const SensitivityDense& s, const Vec& dl_dy, const Matrix& j_out,
                     OpCounter* counter = nullptr);

/// Streaming forward-mode engine with dense traces: exact for every topology.
/// Traces exist per tracked group on each node lying on a directed path from
/// the group's home to the output node. step() consumes one input; tap_loss()
/// folds the current step's loss into the running gradient. Parameters are
/// read through the reference on every step, so a caller may update them
/// between steps.
class DenseForwardRun {
 public:
  DenseForwardRun(const Model& model, const ParamSet& params, EngineHooks hooks = {},
                  OpCounter* counter = nullptr);

  void step(const Vec& x);
  void tap_loss(const Vec& target);

  const StateSet& states() const { return states_; }
  Vec output() const;
  std::size_t steps_taken() const { return t_; }
  double loss_so_far() const { return loss_; }
  GradSet gradient() const { return grad_; }

  /// Live traces for one group, keyed by node index; for prefix equality tests.
  const std::vector<Matrix>& traces_for(const std::string& group_id) const;

 private:
  struct GroupRun {
    int group = -1;
    int home = -1;
    std::vector<int> path;          // node indices on home -> output paths, topo order
    std::vector<Matrix> trace;      // per node index; empty when off-path
  };

  const Model& model_;
  const ParamSet& params_;
  EngineHooks hooks_;
  OpCounter* counter_;
  StateSet states_;
  std::vector<Vec> derivs_;         // activation derivatives at the current step
  std::vector<GroupRun> runs_;
  GradSet grad_;
  std::size_t t_ = 0;
  double loss_ = 0.0;
  std::int64_t live_trace_values_ = 0;
};

/// Whole-episode gradient via DenseForwardRun; matches reverse-mode exactly.
GradSet deep_rtrl_episode(const Model& model, const ParamSet& params,
                          const std::vector<Vec>& inputs, const std::vector<Vec>& targets,
                          EngineHooks hooks = {}, OpCounter* counter = nullptr);

/// Classic single-layer form; rejects models with more than one node.
GradSet rtrl_episode(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                     const std::vector<Vec>& targets, OpCounter* counter = nullptr);

}  // namespace deep_eprop
