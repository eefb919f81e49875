#include "deep_eprop/verify.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <thread>

#include "deep_eprop/bench.hpp"
#include "deep_eprop/eprop.hpp"
#include "deep_eprop/oracles.hpp"
#include "deep_eprop/trainer.hpp"

namespace deep_eprop {

namespace {

int thread_cap(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DEEP_EPROP_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

// index-parallel map with deterministic result placement
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(threads, static_cast<int>(count));
  pool.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

struct Instance {
  Model model;
  ParamSet params;
  std::vector<Vec> inputs;
  std::vector<Vec> targets;
};

ActivationKind pick_activation(std::mt19937_64& rng, bool smooth_only) {
  const double u = uniform01(rng);
  if (smooth_only) return u < 0.5 ? ActivationKind::Tanh : ActivationKind::Sigmoid;
  if (u < 0.4) return ActivationKind::Tanh;
  if (u < 0.7) return ActivationKind::Sigmoid;
  return ActivationKind::Relu;
}

void fill_episode(Instance& inst, std::mt19937_64& rng, std::size_t T) {
  inst.inputs.assign(T, Vec(inst.model.input_dim));
  for (auto& x : inst.inputs) {
    for (double& v : x) v = 2.0 * uniform01(rng) - 1.0;
  }
  const std::size_t n_targets =
      inst.model.loss_timesteps == LossTimesteps::EveryStep ? T : 1u;
  inst.targets.assign(n_targets, Vec(inst.model.readout_dim));
  for (auto& y : inst.targets) {
    for (double& v : y) v = 2.0 * uniform01(rng) - 1.0;
  }
}

struct ChainKnobs {
  std::size_t min_l = 1, max_l = 4, min_h = 2, max_h = 8, min_t = 2, max_t = 12;
  bool smooth_only = false;   // restrict to differentiable activations
  bool equal_widths = false;  // one H for every layer
  TraceMode trace_mode = TraceMode::DiagHomeDenseAbove;
};

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

Instance random_chain(std::uint64_t seed, const ChainKnobs& k) {
  std::mt19937_64 rng(derive_seed(seed, "chain"));
  NetworkSpec spec;
  spec.input_dim = pick(rng, 1, 3);
  spec.readout_dim = pick(rng, 1, 2);
  const std::size_t L = pick(rng, k.min_l, k.max_l);
  const std::size_t shared_h = pick(rng, k.min_h, k.max_h);
  for (std::size_t l = 1; l <= L; ++l) {
    LayerSpec layer;
    layer.layer_id = static_cast<int>(l);
    layer.hidden_dim = k.equal_widths ? shared_h : pick(rng, k.min_h, k.max_h);
    layer.activation = pick_activation(rng, k.smooth_only);
    spec.layers.push_back(layer);
  }
  spec.loss_timesteps =
      uniform01(rng) < 0.5 ? LossTimesteps::FinalOnly : LossTimesteps::EveryStep;
  spec.trace_mode = k.trace_mode;
  Instance inst;
  inst.model = compile(spec);
  inst.model.tracked.clear();
  for (std::size_t g = 0; g < inst.model.groups.size(); ++g) {
    inst.model.tracked.push_back(static_cast<int>(g));
  }
  inst.params = init_params(inst.model, derive_seed(seed, "params"));
  fill_episode(inst, rng, pick(rng, k.min_t, k.max_t));
  return inst;
}

Instance random_dag(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "dag"));
  GraphSpec spec;
  spec.input_dim = pick(rng, 1, 3);
  spec.readout_dim = pick(rng, 1, 2);
  const std::size_t n = pick(rng, 2, 5);
  for (std::size_t i = 1; i <= n; ++i) {
    GraphNodeSpec node;
    node.id = "n" + std::to_string(i);
    node.hidden_dim = pick(rng, 2, 4);
    node.activation = pick_activation(rng, false);
    node.has_recurrence = uniform01(rng) < 0.7;
    spec.nodes.push_back(node);
  }
  for (std::size_t i = 1; i <= n; ++i) {
    bool has_incoming = false;
    for (std::size_t j = 1; j < i; ++j) {
      if (uniform01(rng) < 0.5) {
        spec.edges.push_back({"n" + std::to_string(j), "n" + std::to_string(i)});
        has_incoming = true;
      }
    }
    if (i > 1 && !has_incoming) {
      const std::size_t j = pick(rng, 1, i - 1);
      spec.edges.push_back({"n" + std::to_string(j), "n" + std::to_string(i)});
    }
  }
  spec.input_nodes = {"n1"};
  spec.output_node = "n" + std::to_string(n);
  spec.loss_timesteps =
      uniform01(rng) < 0.5 ? LossTimesteps::FinalOnly : LossTimesteps::EveryStep;
  Instance inst;
  inst.model = compile(spec);
  inst.model.tracked.clear();
  for (std::size_t g = 0; g < inst.model.groups.size(); ++g) {
    inst.model.tracked.push_back(static_cast<int>(g));
  }
  inst.params = init_params(inst.model, derive_seed(seed, "params"));
  fill_episode(inst, rng, pick(rng, 2, 8));
  return inst;
}

void zero_recurrent(Instance& inst) {
  for (std::size_t g = 0; g < inst.model.groups.size(); ++g) {
    if (inst.model.groups[g].kind == GroupKind::RecurrentWeights) {
      std::fill(inst.params.mats[g].data.begin(), inst.params.mats[g].data.end(), 0.0);
    }
  }
}

void diagonalize(Instance& inst, GroupKind kind) {
  for (std::size_t g = 0; g < inst.model.groups.size(); ++g) {
    if (inst.model.groups[g].kind != kind) continue;
    Matrix& m = inst.params.mats[g];
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (std::size_t j = 0; j < m.cols; ++j) {
        if (i != j) m(i, j) = 0.0;
      }
    }
  }
}

// the reverse-mode oracle fills every group, but forward engines, finite
// differences and the path enumerator only fill tracked ones, so comparisons
// flatten the tracked subset
double rel_l2_vs(const Model& model, const GradSet& got, const GradSet& want) {
  const Vec a = flatten_tracked(model, got);
  const Vec b = flatten_tracked(model, want);
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    diff += d * d;
    ref += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

double cosine_vs(const Model& model, const GradSet& got, const GradSet& want) {
  const Vec a = flatten_tracked(model, got);
  const Vec b = flatten_tracked(model, want);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

// ---- individual checks -----------------------------------------------------

struct Battery {
  const VerifyOptions& opt;
  int threads;
  std::vector<CheckResult> checks;

  double tol(double built_in) const {
    return opt.tolerance_override ? *opt.tolerance_override : built_in;
  }

  void push(const std::string& name, bool passed, double worst, double tolerance,
            std::string detail) {
    checks.push_back({name, passed, worst, tolerance, std::move(detail)});
  }

  // worst relative error over indexed instances, computed in parallel
  double worst_rel(std::size_t count, const std::function<double(std::size_t)>& fn) {
    std::vector<double> errs(count, 0.0);
    parallel_for(count, threads, [&](std::size_t i) { errs[i] = fn(i); });
    double worst = 0.0;
    for (double e : errs) worst = std::max(worst, e);
    return worst;
  }

  void check_deep_rtrl_chains() {
    const double tolerance = tol(1e-9);
    const double worst = worst_rel(100, [&](std::size_t i) {
      Instance inst = random_chain(derive_seed(opt.seed, "c1." + std::to_string(i)), {});
      const GradSet want = bptt_gradient(inst.model, inst.params, inst.inputs, inst.targets);
      const GradSet got =
          deep_rtrl_episode(inst.model, inst.params, inst.inputs, inst.targets, opt.hooks);
      return rel_l2_vs(inst.model, got, want);
    });
    push("deep_rtrl_vs_bptt_chains", worst <= tolerance, worst, tolerance,
         "100 random chains, L 1..4, H 2..8, T 2..12, all groups tracked");
  }

  void check_deep_rtrl_dags() {
    const double tolerance = tol(1e-9);
    const double worst = worst_rel(20, [&](std::size_t i) {
      Instance inst = random_dag(derive_seed(opt.seed, "c1d." + std::to_string(i)));
      const GradSet want = bptt_gradient(inst.model, inst.params, inst.inputs, inst.targets);
      const GradSet got =
          deep_rtrl_episode(inst.model, inst.params, inst.inputs, inst.targets, opt.hooks);
      return rel_l2_vs(inst.model, got, want);
    });
    push("deep_rtrl_vs_bptt_dags", worst <= tolerance, worst, tolerance,
         "20 random DAGs with up to 5 nodes");
  }

  void check_finite_diff() {
    const double tolerance = tol(1e-5);
    ChainKnobs knobs;
    knobs.max_l = 3;
    knobs.max_h = 5;
    knobs.max_t = 6;
    knobs.smooth_only = true;
    const double worst = worst_rel(20, [&](std::size_t i) {
      Instance inst = random_chain(derive_seed(opt.seed, "c2." + std::to_string(i)), knobs);
      const GradSet want = finite_diff_gradient(inst.model, inst.params, inst.inputs,
                                                inst.targets, 1e-5);
      const GradSet got = bptt_gradient(inst.model, inst.params, inst.inputs, inst.targets);
      return rel_l2_vs(inst.model, got, want);
    });
    push("bptt_vs_finite_diff", worst <= tolerance, worst, tolerance,
         "central differences, step 1e-5, 20 seeds");
  }

  void check_path_sum() {
    const double tolerance = tol(1e-10);
    std::vector<std::array<std::size_t, 3>> combos;
    for (std::size_t l = 1; l <= 3; ++l) {
      for (std::size_t h = 1; h <= 3; ++h) {
        for (std::size_t t = 1; t <= 4; ++t) combos.push_back({l, h, t});
      }
    }
    const double worst = worst_rel(combos.size(), [&](std::size_t i) {
      const auto [l, h, t] = combos[i];
      ChainKnobs knobs;
      knobs.min_l = l;
      knobs.max_l = l;
      knobs.min_h = h;
      knobs.max_h = h;
      knobs.min_t = t;
      knobs.max_t = t;
      std::uint64_t seed = derive_seed(opt.seed, "c2p." + std::to_string(i));
      Instance inst = random_chain(seed, knobs);
      const auto paths =
          enumerate_gradient_paths(inst.model, inst.params, inst.inputs, inst.targets);
      const GradSet got = paths_total(inst.model, paths);
      const GradSet want = bptt_gradient(inst.model, inst.params, inst.inputs, inst.targets);
      return rel_l2_vs(inst.model, got, want);
    });
    push("bptt_vs_path_sum", worst <= tolerance, worst, tolerance,
         "exhaustive path enumeration on every L<=3, H<=3, T<=4 shape");
  }

  // chain with recurrence everywhere, loss at the end, input weights tracked
  static Instance lattice_chain(std::size_t l, std::size_t t, std::uint64_t seed) {
    NetworkSpec spec;
    spec.input_dim = 2;
    spec.readout_dim = 1;
    for (std::size_t i = 1; i <= l; ++i) {
      LayerSpec layer;
      layer.layer_id = static_cast<int>(i);
      layer.hidden_dim = 2;
      spec.layers.push_back(layer);
    }
    Instance inst;
    inst.model = compile(spec);
    inst.params = init_params(inst.model, seed);
    std::mt19937_64 rng(derive_seed(seed, "lattice"));
    fill_episode(inst, rng, t);
    return inst;
  }

  void check_path_counts() {
    bool ok = true;
    std::string failure;
    double checked = 0;
    for (std::size_t l = 1; l <= 4 && ok; ++l) {
      for (std::size_t t = 1; t <= 6 && ok; ++t) {
        Instance inst = lattice_chain(l, t, derive_seed(opt.seed, "c3"));
        const auto paths =
            enumerate_gradient_paths(inst.model, inst.params, inst.inputs, inst.targets);
        std::size_t count = 0;
        for (const auto& p : paths) {
          if (p.group_id == "in.1") ++count;
        }
        const std::uint64_t want =
            binomial(static_cast<unsigned>(t + l - 1), static_cast<unsigned>(l));
        if (count != want) {
          ok = false;
          failure = "L=" + std::to_string(l) + ", T=" + std::to_string(t) + ": got " +
                    std::to_string(count) + " paths, want " + std::to_string(want);
        }
        ++checked;
      }
    }
    push("path_count_formula", ok, checked, 24.0,
         ok ? "counts match binomial(T+L-1, L) for all L<=4, T<=6" : failure);
  }

  // worst e-prop error across both trace modes for one regime
  double regime_worst(const std::string& tag, std::size_t seeds,
                      const std::function<void(Instance&, TraceMode)>& mutate,
                      std::size_t force_t) {
    return worst_rel(2 * seeds, [&](std::size_t i) {
      const TraceMode mode =
          i < seeds ? TraceMode::DiagHomeDenseAbove : TraceMode::DiagEverywhere;
      ChainKnobs knobs;
      knobs.max_l = 3;
      knobs.max_h = 5;
      knobs.trace_mode = mode;
      knobs.equal_widths = mode == TraceMode::DiagEverywhere;
      if (force_t) {
        knobs.min_t = force_t;
        knobs.max_t = force_t;
      }
      Instance inst =
          random_chain(derive_seed(opt.seed, tag + "." + std::to_string(i)), knobs);
      mutate(inst, mode);
      const GradSet want = bptt_gradient(inst.model, inst.params, inst.inputs, inst.targets);
      const GradSet got =
          eprop_episode(inst.model, inst.params, inst.inputs, inst.targets, opt.hooks);
      return rel_l2_vs(inst.model, got, want);
    });
  }

  void check_eprop_regimes() {
    const double tolerance = tol(1e-9);
    const auto diag_cross_if_needed = [](Instance& inst, TraceMode mode) {
      if (mode == TraceMode::DiagEverywhere) diagonalize(inst, GroupKind::CrossLayerWeights);
    };
    const double w1 = regime_worst("c4a", 50, diag_cross_if_needed, 1);
    push("eprop_exact_t1", w1 <= tolerance, w1, tolerance,
         "T=1, 50 seeds per trace mode; no time for discarded indirect terms");

    const double w2 = regime_worst(
        "c4b", 50,
        [&](Instance& inst, TraceMode mode) {
          zero_recurrent(inst);
          diag_cross_if_needed(inst, mode);
        },
        0);
    push("eprop_exact_zero_recurrent", w2 <= tolerance, w2, tolerance,
         "all recurrent weights zeroed, 50 seeds per trace mode");

    const double w3 = regime_worst(
        "c4c", 50,
        [&](Instance& inst, TraceMode mode) {
          diagonalize(inst, GroupKind::RecurrentWeights);
          diag_cross_if_needed(inst, mode);
        },
        0);
    push("eprop_exact_diagonal", w3 <= tolerance, w3, tolerance,
         "diagonal recurrent weights (plus diagonal cross weights for "
         "diag_everywhere), 50 seeds per trace mode");
  }

  void check_alignment_median() {
    std::vector<double> cosines(100, 0.0);
    parallel_for(cosines.size(), threads, [&](std::size_t i) {
      ChainKnobs knobs;
      knobs.max_l = 1;
      knobs.min_h = 6;
      knobs.max_h = 6;
      knobs.min_t = 10;
      knobs.max_t = 10;
      knobs.smooth_only = true;
      Instance inst =
          random_chain(derive_seed(opt.seed, "c5." + std::to_string(i)), knobs);
      const GradSet want = bptt_gradient(inst.model, inst.params, inst.inputs, inst.targets);
      const GradSet got =
          eprop_episode(inst.model, inst.params, inst.inputs, inst.targets, opt.hooks);
      cosines[i] = cosine_vs(inst.model, got, want);
    });
    std::sort(cosines.begin(), cosines.end());
    const double median = 0.5 * (cosines[49] + cosines[50]);
    push("eprop_alignment_median", median > 0.0, median, 0.0,
         "cosine vs reverse mode on 100 dense single-layer instances, H=6, T=10; "
         "low quartile " + std::to_string(cosines[24]) + ", high quartile " +
             std::to_string(cosines[74]));
  }

  static double find_slope(const ScalingReport& report, const std::string& algorithm,
                           char varied, const std::string& metric) {
    for (const auto& f : report.fits) {
      if (f.algorithm == algorithm && f.varied == varied && f.metric == metric) {
        return f.slope;
      }
    }
    throw std::logic_error("verify: expected scaling fit missing for " + algorithm);
  }

  void check_complexity() {
    {
      const SweepResult sweep =
          run_sweep({Algorithm::Rtrl}, {4, 8, 16}, {1}, {8}, opt.seed);
      const double slope =
          find_slope(emit_scaling_report(sweep), "rtrl", 'H', "flops_per_step");
      push("rtrl_flops_slope_h", slope >= 3.7 && slope <= 4.2, slope, 4.2,
           "log-log slope of per-step flops over H in {4,8,16}, band [3.7, 4.2]");
    }
    {
      const SweepResult sweep =
          run_sweep({Algorithm::DeepEprop}, {6}, {2}, {4, 64, 256}, opt.seed);
      bool equal = true;
      for (const SweepRow& row : sweep.rows) {
        if (row.peak_trace_values != sweep.rows.front().peak_trace_values) equal = false;
      }
      const auto expected = static_cast<std::int64_t>(2 * 6 * 6);  // L * |in.1|
      const bool sized = sweep.rows.front().peak_trace_values == expected;
      push("eprop_trace_constant_t", equal && sized,
           static_cast<double>(sweep.rows.front().peak_trace_values),
           static_cast<double>(expected),
           "per-synapse trace storage identical across T in {4,64,256} and equal to "
           "depth times tracked parameter count");
    }
    {
      const SweepResult sweep = run_sweep({Algorithm::Bptt}, {6}, {2}, {8, 16}, opt.seed);
      const double ratio = static_cast<double>(sweep.rows[1].stored_activation_values) /
                           static_cast<double>(sweep.rows[0].stored_activation_values);
      push("bptt_activation_growth", ratio >= 1.9 && ratio <= 2.1, ratio, 2.1,
           "stored activation values when T doubles 8 -> 16, band [1.9, 2.1]");
    }
    {
      const SweepResult sweep =
          run_sweep({Algorithm::DeepRtrl}, {6}, {1, 2, 3, 4}, {8}, opt.seed);
      const double slope =
          find_slope(emit_scaling_report(sweep), "deep_rtrl", 'L', "peak_trace_values");
      push("deep_rtrl_trace_slope_l", slope >= 0.9 && slope <= 1.1, slope, 1.1,
           "log-log slope of trace storage over depth 1..4, band [0.9, 1.1]");
    }
  }

  template <class Run>
  static bool streaming_matches(const Instance& inst, EngineHooks hooks, GradSet (*episode)(
      const Model&, const ParamSet&, const std::vector<Vec>&, const std::vector<Vec>&,
      EngineHooks, OpCounter*)) {
    const GradSet batched =
        episode(inst.model, inst.params, inst.inputs, inst.targets, hooks, nullptr);
    Run run(inst.model, inst.params, hooks);
    const std::size_t T = inst.inputs.size();
    for (std::size_t t = 1; t <= T; ++t) {
      run.step(inst.inputs[t - 1]);
      if (loss_enabled_at(inst.model, t, T)) {
        run.tap_loss(target_at(inst.model, inst.targets, t, T));
      }
    }
    const GradSet streamed = run.gradient();
    for (std::size_t g = 0; g < batched.mats.size(); ++g) {
      if (batched.mats[g].data != streamed.mats[g].data) return false;
    }
    return true;
  }

  template <class Run>
  static bool prefix_traces_match(const Instance& inst, EngineHooks hooks,
                                  std::size_t prefix) {
    Run full(inst.model, inst.params, hooks);
    for (std::size_t t = 1; t <= prefix; ++t) full.step(inst.inputs[t - 1]);
    Run truncated(inst.model, inst.params, hooks);
    for (std::size_t t = 1; t <= prefix; ++t) truncated.step(inst.inputs[t - 1]);
    // feeding the rest must not disturb what the prefix already determined
    std::vector<std::vector<Matrix>> snapshot;
    for (int g : inst.model.tracked) {
      const GroupInfo& info = inst.model.groups[g];
      if (info.kind == GroupKind::ReadoutWeights) continue;
      snapshot.push_back(full.traces_for(info.id));
    }
    for (std::size_t t = prefix + 1; t <= inst.inputs.size(); ++t) {
      full.step(inst.inputs[t - 1]);
    }
    std::size_t k = 0;
    for (int g : inst.model.tracked) {
      const GroupInfo& info = inst.model.groups[g];
      if (info.kind == GroupKind::ReadoutWeights) continue;
      const auto& truncated_traces = truncated.traces_for(info.id);
      for (std::size_t n = 0; n < truncated_traces.size(); ++n) {
        if (snapshot[k][n].data != truncated_traces[n].data) return false;
      }
      ++k;
    }
    return true;
  }

  void check_online_contract() {
    ChainKnobs dense_knobs;
    dense_knobs.max_l = 2;
    Instance dense_inst = random_chain(derive_seed(opt.seed, "c7a"), dense_knobs);
    ChainKnobs diag_knobs;
    diag_knobs.max_l = 2;
    diag_knobs.equal_widths = true;
    diag_knobs.trace_mode = TraceMode::DiagEverywhere;
    Instance diag_inst = random_chain(derive_seed(opt.seed, "c7b"), diag_knobs);
    Instance above_inst = random_chain(derive_seed(opt.seed, "c7c"), dense_knobs);

    const bool streamed =
        streaming_matches<DenseForwardRun>(dense_inst, opt.hooks, &deep_rtrl_episode) &&
        streaming_matches<DiagForwardRun>(diag_inst, opt.hooks, &eprop_episode) &&
        streaming_matches<DiagForwardRun>(above_inst, opt.hooks, &eprop_episode);
    push("online_streamed_equals_batched", streamed, streamed ? 1.0 : 0.0, 1.0,
         "bitwise gradient equality, streamed vs whole-episode, all engines");

    const std::size_t prefix_a = std::max<std::size_t>(1, dense_inst.inputs.size() / 2);
    const std::size_t prefix_b = std::max<std::size_t>(1, diag_inst.inputs.size() / 2);
    const std::size_t prefix_c = std::max<std::size_t>(1, above_inst.inputs.size() / 2);
    const bool prefixed =
        prefix_traces_match<DenseForwardRun>(dense_inst, opt.hooks, prefix_a) &&
        prefix_traces_match<DiagForwardRun>(diag_inst, opt.hooks, prefix_b) &&
        prefix_traces_match<DiagForwardRun>(above_inst, opt.hooks, prefix_c);
    push("online_prefix_truncation", prefixed, prefixed ? 1.0 : 0.0, 1.0,
         "trace state after t steps is bitwise independent of later inputs");
  }

  void check_user_model() {
    const Model& model = *opt.user_model;
    Instance inst{model, init_params(model, derive_seed(opt.seed, "user_params")), {}, {}};
    std::mt19937_64 rng(derive_seed(opt.seed, "user_episode"));
    fill_episode(inst, rng, 8);

    const GradSet reference = bptt_gradient(model, inst.params, inst.inputs, inst.targets);
    {
      const double tolerance = tol(1e-5);
      const GradSet fd =
          finite_diff_gradient(model, inst.params, inst.inputs, inst.targets, 1e-5);
      const double err = rel_l2_vs(model, reference, fd);
      push("user_bptt_vs_finite_diff", err <= tolerance, err, tolerance,
           "reverse mode against central differences on the supplied spec");
    }
    {
      const double tolerance = tol(1e-9);
      const GradSet got =
          deep_rtrl_episode(model, inst.params, inst.inputs, inst.targets, opt.hooks);
      const double err = rel_l2_vs(model, got, reference);
      push("user_deep_rtrl_vs_bptt", err <= tolerance, err, tolerance,
           "forward-mode dense traces against reverse mode on the supplied spec");
    }
    try {
      const auto paths =
          enumerate_gradient_paths(model, inst.params, inst.inputs, inst.targets, 20000);
      const double tolerance = tol(1e-10);
      const double err = rel_l2_vs(model, paths_total(model, paths), reference);
      push("user_path_sum", err <= tolerance, err, tolerance,
           std::to_string(paths.size()) + " enumerated paths against reverse mode");
    } catch (const ResourceError&) {
      push("user_path_sum", true, 0.0, 0.0, "skipped: path count above the enumeration cap");
    }
    {
      const GradSet got =
          eprop_episode(model, inst.params, inst.inputs, inst.targets, opt.hooks);
      const double cosine = cosine_vs(model, got, reference);
      push("user_eprop_alignment", std::isfinite(cosine), cosine, 0.0,
           "approximation alignment on the supplied spec (reported, not asserted); "
           "relative error " + std::to_string(rel_l2_vs(model, got, reference)));
    }
  }
};

}  // namespace

VerifyReport run_verify(const VerifyOptions& options) {
  Battery battery{options, thread_cap(options.threads), {}};
  const auto timed = [&battery](void (Battery::*check)()) {
    const std::size_t first = battery.checks.size();
    const auto start = std::chrono::steady_clock::now();
    (battery.*check)();
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    const std::size_t added = battery.checks.size() - first;
    for (std::size_t i = first; i < battery.checks.size(); ++i) {
      battery.checks[i].seconds = elapsed.count() / static_cast<double>(added);
    }
  };
  timed(&Battery::check_deep_rtrl_chains);
  timed(&Battery::check_deep_rtrl_dags);
  timed(&Battery::check_finite_diff);
  timed(&Battery::check_path_sum);
  timed(&Battery::check_path_counts);
  timed(&Battery::check_eprop_regimes);
  timed(&Battery::check_alignment_median);
  timed(&Battery::check_complexity);
  timed(&Battery::check_online_contract);
  if (options.user_model) timed(&Battery::check_user_model);

  VerifyReport report;
  report.checks = std::move(battery.checks);
  report.all_passed = true;
  for (const CheckResult& c : report.checks) {
    if (!c.passed) report.all_passed = false;
  }
  return report;
}

void write_verify_report(std::ostream& out, const VerifyReport& report) {
  out << "{\n  \"all_passed\": " << (report.all_passed ? "true" : "false")
      << ",\n  \"checks\": [\n";
  char buf[40];
  for (std::size_t i = 0; i < report.checks.size(); ++i) {
    const CheckResult& c = report.checks[i];
    out << "    {\"name\": \"" << c.name << "\", \"passed\": " << (c.passed ? "true" : "false");
    std::snprintf(buf, sizeof(buf), "%.17g", c.worst);
    out << ", \"worst\": " << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", c.tolerance);
    out << ", \"tolerance\": " << buf << ", \"detail\": \"" << c.detail << "\"}"
        << (i + 1 < report.checks.size() ? "," : "") << "\n";
  }
  out << "  ]\n}\n";
}

}  // namespace deep_eprop
