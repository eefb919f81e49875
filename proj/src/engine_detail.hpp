#pragma once

// Shared scaffolding for the forward-mode trace engines. Internal header.

#include <vector>

#include "deep_eprop/network.hpp"

namespace deep_eprop::detail {

// Node indices lying on a directed path home -> ... -> output (inclusive),
// in topological order. Empty when the home cannot influence the output.
inline std::vector<int> influence_path(const Model& model, int home) {
  const std::size_t n = model.nodes.size();
  std::vector<bool> from_home(n, false), to_output(n, false);
  from_home[home] = true;
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto& [p, e] : model.nodes[k].incoming) {
      if (from_home[p]) from_home[k] = true;
    }
  }
  to_output[model.output_node] = true;
  for (std::size_t k = n; k-- > 0;) {
    for (const auto& [p, e] : model.nodes[k].incoming) {
      if (to_output[k]) to_output[p] = true;
    }
  }
  std::vector<int> path;
  for (std::size_t k = 0; k < n; ++k) {
    if (from_home[k] && to_output[k]) path.push_back(static_cast<int>(k));
  }
  if (path.empty() || !from_home[model.output_node]) return {};
  return path;
}

// Presynaptic vector entering the group's home node at the current step.
// `prev` is the state before the step, `cur` the state after it.
inline Vec group_presyn(const Model& model, int group, const StateSet& prev, const StateSet& cur,
                        const Vec& x) {
  const GroupInfo& info = model.groups[group];
  switch (info.kind) {
    case GroupKind::InputWeights:
      return x;
    case GroupKind::RecurrentWeights:
      return prev.h[info.home_node];
    case GroupKind::CrossLayerWeights:
      for (const auto& [p, e] : model.nodes[info.home_node].incoming) {
        if (e == group) return cur.h[p];
      }
      throw std::logic_error("group_presyn: edge group missing from home node");
    case GroupKind::Bias:
      return Vec{1.0};
    case GroupKind::ReadoutWeights:
      break;
  }
  throw std::logic_error("group_presyn: readout groups have no home presynapse");
}

// Direct pre-activation partial da(home)/dtheta as a dense (dim x P) matrix:
// row j carries presyn in its own column block, zero elsewhere.
inline Matrix injection_preact(const GroupInfo& info, const Vec& presyn) {
  Matrix inj(info.rows, info.rows * info.cols);
  for (std::size_t j = 0; j < info.rows; ++j) {
    for (std::size_t k = 0; k < info.cols; ++k) inj(j, j * info.cols + k) = presyn[k];
  }
  return inj;
}

// Readout gradient at one enabled step: grad_out += ydiff * h_out^T.
inline void tap_readout(const Model& model, const StateSet& states, const Vec& ydiff,
                        GradSet& grad, OpCounter* counter) {
  add_outer(grad.mats.back(), ydiff, states.h[model.output_node], counter);
}

}  // namespace deep_eprop::detail
