#include "deep_eprop/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deep_eprop {

namespace {

// activation derivatives for every (step, node), recomputed from preactivations
std::vector<std::vector<Vec>> all_derivs(const Model& model, const RolloutRecord& rec) {
  std::vector<std::vector<Vec>> d(rec.steps());
  for (std::size_t t = 0; t < rec.steps(); ++t) {
    d[t].resize(model.nodes.size());
    for (std::size_t n = 0; n < model.nodes.size(); ++n) {
      d[t][n] = activation_eval(model.nodes[n].activation, rec.preacts[t][n]).deriv;
    }
  }
  return d;
}

std::vector<std::vector<std::pair<int, int>>> successor_lists(const Model& model) {
  std::vector<std::vector<std::pair<int, int>>> succs(model.nodes.size());
  for (std::size_t m = 0; m < model.nodes.size(); ++m) {
    for (const auto& [p, e] : model.nodes[m].incoming) {
      succs[p].emplace_back(static_cast<int>(m), e);
    }
  }
  return succs;
}

Vec output_error(const Model& model, const RolloutRecord& rec, const std::vector<Vec>& targets,
                 std::size_t t, OpCounter* counter) {
  Vec ydiff = rec.outputs[t - 1];
  axpy(ydiff, -1.0, target_at(model, targets, t, rec.steps()), counter);
  return ydiff;
}

}  // namespace

GradSet bptt_gradient(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                      const std::vector<Vec>& targets, OpCounter* counter, double* total_loss) {
  const RolloutRecord rec = rollout(model, params, inputs, targets, counter);
  if (total_loss) *total_loss = rec.total_loss;
  const std::size_t T = rec.steps();
  const std::size_t N = model.nodes.size();
  const auto derivs = all_derivs(model, rec);
  const auto succs = successor_lists(model);
  const Matrix& w_out = params.mats.back();

  GradSet grad = GradSet::zeros(model);
  std::vector<Vec> delta_a_next(N);
  for (std::size_t n = 0; n < N; ++n) delta_a_next[n].assign(model.nodes[n].dim, 0.0);

  for (std::size_t t = T; t >= 1; --t) {
    std::vector<Vec> delta_a(N);
    for (std::size_t k = N; k-- > 0;) {  // reverse topological order
      const ModelNode& node = model.nodes[k];
      Vec dh(node.dim, 0.0);
      if (static_cast<int>(k) == model.output_node && loss_enabled_at(model, t, T)) {
        const Vec ydiff = output_error(model, rec, targets, t, counter);
        add_in_place(dh, matvec_transposed(w_out, ydiff, counter), counter);
        add_outer(grad.mats.back(), ydiff, rec.states[t - 1][k], counter);
      }
      if (node.rec_group >= 0) {
        add_in_place(dh, matvec_transposed(params.mats[node.rec_group], delta_a_next[k], counter),
                     counter);
      }
      for (const auto& [m, e] : succs[k]) {
        add_in_place(dh, matvec_transposed(params.mats[e], delta_a[m], counter), counter);
      }
      delta_a[k] = hadamard(dh, derivs[t - 1][k], counter);
    }
    for (std::size_t k = 0; k < N; ++k) {
      const ModelNode& node = model.nodes[k];
      const Vec& da = delta_a[k];
      if (node.rec_group >= 0 && t > 1) {
        add_outer(grad.mats[node.rec_group], da, rec.states[t - 2][k], counter);
      }
      for (const auto& [p, e] : node.incoming) {
        add_outer(grad.mats[e], da, rec.states[t - 1][p], counter);
      }
      if (node.is_input) {
        add_outer(grad.mats[node.input_group], da, rec.inputs[t - 1], counter);
      }
      Matrix& bias = grad.mats[node.bias_group];
      for (std::size_t i = 0; i < node.dim; ++i) bias(i, 0) += da[i];
      if (counter) counter->add_flops(static_cast<std::int64_t>(node.dim));
    }
    delta_a_next = std::move(delta_a);
  }
  return grad;
}

GradSet finite_diff_gradient(const Model& model, const ParamSet& params,
                             const std::vector<Vec>& inputs, const std::vector<Vec>& targets,
                             double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  GradSet grad = GradSet::zeros(model);
  ParamSet probe = params;
  for (int g : model.tracked) {
    Matrix& m = probe.mats[g];
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      const double orig = m.data[i];
      m.data[i] = orig + step;
      const double up = rollout(model, probe, inputs, targets).total_loss;
      m.data[i] = orig - step;
      const double down = rollout(model, probe, inputs, targets).total_loss;
      m.data[i] = orig;
      grad.mats[g].data[i] = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

// ---- path enumeration ------------------------------------------------------

namespace {

struct PathEnumerator {
  const Model& model;
  const ParamSet& params;
  const RolloutRecord& rec;
  const std::vector<Vec>& targets;
  const std::vector<std::vector<Vec>>& derivs;
  const std::vector<std::vector<std::pair<int, int>>>& succs;
  std::size_t max_paths;
  std::vector<GradientPath>& out;

  const GroupInfo* group = nullptr;
  int home = -1;
  std::size_t inject_time = 0;
  std::vector<std::pair<int, std::size_t>> trail = {};  // (node, time), 1-based time

  std::size_t T() const { return rec.steps(); }

  Vec presyn() const {
    switch (group->kind) {
      case GroupKind::InputWeights:
        return rec.inputs[inject_time - 1];
      case GroupKind::RecurrentWeights:
        return inject_time == 1 ? Vec(group->cols, 0.0)
                                : rec.states[inject_time - 2][home];
      case GroupKind::CrossLayerWeights: {
        for (const auto& [p, e] : model.nodes[home].incoming) {
          if (model.group_index(group->id) == e) return rec.states[inject_time - 1][p];
        }
        throw std::logic_error("presyn: edge group not found on its home node");
      }
      case GroupKind::Bias:
        return Vec{1.0};
      case GroupKind::ReadoutWeights:
        break;
    }
    throw std::logic_error("presyn: readout groups have no unrolled paths");
  }

  // backward product of Jacobians along the trail, then the injection term
  void emit() {
    if (out.size() >= max_paths) {
      throw ResourceError("path enumeration exceeded the cap of " + std::to_string(max_paths) +
                          " paths; shrink the instance or raise the cap");
    }
    const std::size_t end_time = trail.back().second;
    Vec ydiff = rec.outputs[end_time - 1];
    axpy(ydiff, -1.0, target_at(model, targets, end_time, T()));
    Vec u = matvec_transposed(params.mats.back(), ydiff);
    for (std::size_t i = trail.size(); i-- > 1;) {
      const auto [node, time] = trail[i];
      const auto [prev_node, prev_time] = trail[i - 1];
      const Vec v = hadamard(u, derivs[time - 1][node]);
      int w = -1;
      if (node == prev_node) {
        w = model.nodes[node].rec_group;
      } else {
        for (const auto& [p, e] : model.nodes[node].incoming) {
          if (p == prev_node) w = e;
        }
      }
      u = matvec_transposed(params.mats[w], v);
    }
    const Vec r = hadamard(u, derivs[inject_time - 1][home]);
    GradientPath path;
    path.group_id = group->id;
    path.nodes.reserve(trail.size());
    for (const auto& [node, time] : trail) {
      path.nodes.push_back(model.nodes[node].id + "@t" + std::to_string(time));
    }
    path.contribution = Matrix(group->rows, group->cols);
    add_outer(path.contribution, r, presyn());
    out.push_back(std::move(path));
  }

  void dfs(int node, std::size_t time) {
    trail.emplace_back(node, time);
    if (node == model.output_node && loss_enabled_at(model, time, T())) emit();
    if (model.nodes[node].rec_group >= 0 && time < T()) dfs(node, time + 1);
    for (const auto& [m, e] : succs[node]) dfs(m, time);
    trail.pop_back();
  }

  void run(const GroupInfo& g) {
    group = &g;
    home = g.home_node;
    for (inject_time = 1; inject_time <= T(); ++inject_time) dfs(home, inject_time);
  }
};

}  // namespace

std::vector<GradientPath> enumerate_gradient_paths(const Model& model, const ParamSet& params,
                                                   const std::vector<Vec>& inputs,
                                                   const std::vector<Vec>& targets,
                                                   std::size_t max_paths) {
  const RolloutRecord rec = rollout(model, params, inputs, targets);
  const auto derivs = all_derivs(model, rec);
  const auto succs = successor_lists(model);
  std::vector<GradientPath> paths;
  PathEnumerator walker{model, params, rec, targets, derivs, succs, max_paths, paths};

  for (int g : model.tracked) {
    const GroupInfo& info = model.groups[g];
    if (info.kind == GroupKind::ReadoutWeights) {
      // readout taps the loss directly, one term per enabled step
      for (std::size_t t = 1; t <= rec.steps(); ++t) {
        if (!loss_enabled_at(model, t, rec.steps())) continue;
        if (paths.size() >= max_paths) {
          throw ResourceError("path enumeration exceeded the cap of " +
                              std::to_string(max_paths) + " paths");
        }
        Vec ydiff = rec.outputs[t - 1];
        axpy(ydiff, -1.0, target_at(model, targets, t, rec.steps()));
        GradientPath path;
        path.group_id = info.id;
        path.nodes = {"y@t" + std::to_string(t)};
        path.contribution = Matrix(info.rows, info.cols);
        add_outer(path.contribution, ydiff, rec.states[t - 1][model.output_node]);
        paths.push_back(std::move(path));
      }
      continue;
    }
    walker.run(info);
  }
  return paths;
}

GradSet paths_total(const Model& model, const std::vector<GradientPath>& paths) {
  GradSet total = GradSet::zeros(model);
  for (const GradientPath& p : paths) {
    const int g = model.group_index(p.group_id);
    if (g < 0) throw std::invalid_argument("paths_total: unknown group '" + p.group_id + "'");
    Matrix& acc = total.mats[g];
    if (!acc.same_shape(p.contribution)) {
      throw ShapeError("paths_total: contribution for '" + p.group_id + "' is " +
                       shape_str(p.contribution) + ", group is " + shape_str(acc));
    }
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += p.contribution.data[i];
  }
  return total;
}

std::uint64_t binomial(unsigned n, unsigned k) {
  if (k > n) return 0;
  if (k > n - k) k = n - k;
  unsigned __int128 r = 1;
  for (unsigned i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;  // exact: numerator runs over i consecutive integers
    if (r > static_cast<unsigned __int128>(UINT64_MAX)) {
      throw std::overflow_error("binomial: value does not fit in 64 bits");
    }
  }
  return static_cast<std::uint64_t>(r);
}

}  // namespace deep_eprop
