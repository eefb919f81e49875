#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deep_eprop/network.hpp"

namespace deep_eprop {

/// Reverse-mode gradient over the fully unrolled episode. Exact for every
/// topology; fills all groups. Memory profile: retains the whole rollout.
/// `total_loss`, when given, receives the episode loss of the forward pass.
GradSet bptt_gradient(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                      const std::vector<Vec>& targets, OpCounter* counter = nullptr,
                      double* total_loss = nullptr);

/// Central differences on tracked groups only, (L(th+s) - L(th-s)) / 2s.
GradSet finite_diff_gradient(const Model& model, const ParamSet& params,
                             const std::vector<Vec>& inputs, const std::vector<Vec>& targets,
                             double step = 1e-5);

/// One unrolled chain of influence from a tracked parameter group to the
/// loss. `nodes` lists the visited states as "<node>@t<k>"; `contribution` is
/// the group-shaped gradient term this single chain carries. Summing
/// contributions over all paths of a group reproduces its exact gradient.
struct GradientPath {
  std::string group_id;
  std::vector<std::string> nodes;
  Matrix contribution;
};

/// Exhaustive enumeration for every tracked group. Throws ResourceError once
/// more than `max_paths` paths exist; meant for small instances.
std::vector<GradientPath> enumerate_gradient_paths(const Model& model, const ParamSet& params,
                                                   const std::vector<Vec>& inputs,
                                                   const std::vector<Vec>& targets,
                                                   std::size_t max_paths = 200000);

/// Per-group sums of path contributions (untracked groups stay zero).
GradSet paths_total(const Model& model, const std::vector<GradientPath>& paths);

/// Exact binomial coefficient; overflow-checked for the small arguments used here.
std::uint64_t binomial(unsigned n, unsigned k);

}  // namespace deep_eprop
