#pragma once

#include <string>
#include <vector>

#include "deep_eprop/network.hpp"
#include "deep_eprop/rtrl.hpp"

namespace deep_eprop {

/// Per-synapse trace update. Row i of the result is
/// partial[i,:] + j_rec_diag[i] * e_prev[i,:]; only the diagonal of the
/// recurrent Jacobian enters, which is the whole approximation.
Matrix eprop_step(const Matrix& e_prev, const Vec& j_rec_diag, const Matrix& partial,
                  OpCounter* counter = nullptr);

/// Loss tap for a parameter-shaped trace: out[j,k] = learning_signal[j] * trace[j,k].
Matrix eprop_gradient(const Vec& learning_signal, const Matrix& trace,
                      OpCounter* counter = nullptr);

/// Streaming engine with per-synapse traces at each tracked group's home node.
/// Above the home node, traces propagate toward the output either densely
/// (diag_home_dense_above) or with the same per-synapse shape and diagonal
/// Jacobian restrictions (diag_everywhere; needs equal widths along the path).
/// Same step/tap contract as DenseForwardRun.
class DiagForwardRun {
 public:
  DiagForwardRun(const Model& model, const ParamSet& params, EngineHooks hooks = {},
                 OpCounter* counter = nullptr);

  void step(const Vec& x);
  void tap_loss(const Vec& target);

  const StateSet& states() const { return states_; }
  Vec output() const;
  std::size_t steps_taken() const { return t_; }
  double loss_so_far() const { return loss_; }
  GradSet gradient() const { return grad_; }

  const std::vector<Matrix>& traces_for(const std::string& group_id) const;

 private:
  struct GroupRun {
    int group = -1;
    int home = -1;
    std::vector<int> path;
    std::vector<Matrix> trace;  // home entry group-shaped; above per mode
  };

  void update_traces(GroupRun& run, const StateSet& prev, const Vec& x);

  const Model& model_;
  const ParamSet& params_;
  EngineHooks hooks_;
  OpCounter* counter_;
  StateSet states_;
  std::vector<Vec> derivs_;
  std::vector<GroupRun> runs_;
  GradSet grad_;
  std::size_t t_ = 0;
  double loss_ = 0.0;
  std::int64_t live_trace_values_ = 0;
};

/// Whole-episode gradient with the approximation picked by model.trace_mode.
GradSet eprop_episode(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                      const std::vector<Vec>& targets, EngineHooks hooks = {},
                      OpCounter* counter = nullptr);

}  // namespace deep_eprop
