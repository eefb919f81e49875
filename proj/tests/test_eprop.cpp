#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "deep_eprop/eprop.hpp"
#include "deep_eprop/oracles.hpp"

using namespace deep_eprop;

namespace {

Model make_chain(std::vector<std::size_t> dims, std::size_t input_dim,
                 TraceMode mode = TraceMode::DiagHomeDenseAbove,
                 LossTimesteps when = LossTimesteps::FinalOnly) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.readout_dim = 1;
  int pos = 0;
  for (std::size_t d : dims) {
    LayerSpec layer;
    layer.layer_id = ++pos;
    layer.hidden_dim = d;
    spec.layers.push_back(layer);
  }
  spec.trace_mode = mode;
  spec.loss_timesteps = when;
  Model model = compile(spec);
  model.tracked.clear();
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    model.tracked.push_back(static_cast<int>(g));
  }
  return model;
}

std::vector<Vec> random_inputs(std::size_t t, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec> xs(t, Vec(dim));
  for (auto& x : xs) {
    for (double& v : x) v = 2.0 * uniform01(rng) - 1.0;
  }
  return xs;
}

std::vector<Vec> random_targets(const Model& model, std::size_t t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = model.loss_timesteps == LossTimesteps::EveryStep ? t : 1u;
  std::vector<Vec> ys(n, Vec(model.readout_dim));
  for (auto& y : ys) {
    for (double& v : y) v = 2.0 * uniform01(rng) - 1.0;
  }
  return ys;
}

double rel_l2(const Model& model, const GradSet& a, const GradSet& b) {
  double diff = 0.0, ref = 0.0;
  for (int g : model.tracked) {
    for (std::size_t i = 0; i < a.mats[g].data.size(); ++i) {
      const double d = a.mats[g].data[i] - b.mats[g].data[i];
      diff += d * d;
      ref += b.mats[g].data[i] * b.mats[g].data[i];
    }
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-300);
}

void make_diagonal(ParamSet& params, const Model& model, GroupKind kind) {
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    if (model.groups[g].kind != kind) continue;
    Matrix& m = params.mats[g];
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (std::size_t j = 0; j < m.cols; ++j) {
        if (i != j) m(i, j) = 0.0;
      }
    }
  }
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix m(r, c);
  for (double& v : m.data) v = 2.0 * uniform01(rng) - 1.0;
  return m;
}

}  // namespace

TEST_CASE("per-synapse update blends the carry and the injection rowwise") {
  const Matrix e_prev = random_matrix(3, 2, 1);
  const Matrix partial = random_matrix(3, 2, 2);
  const Vec diag = {0.5, -1.0, 0.0};

  OpCounter counter;
  const Matrix e = eprop_step(e_prev, diag, partial, &counter);
  CHECK(counter.flops == 2 * 3 * 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(e(i, j) == doctest::Approx(partial(i, j) + diag[i] * e_prev(i, j)));
    }
  }

  // zero carry coefficient: no temporal accumulation
  const Matrix frozen = eprop_step(e_prev, Vec(3, 0.0), partial);
  CHECK(frozen.data == partial.data);

  // unit carry with no injection: the trace persists untouched
  const Matrix held = eprop_step(e_prev, Vec(3, 1.0), Matrix(3, 2));
  CHECK(held.data == e_prev.data);

  CHECK_THROWS_AS(eprop_step(e_prev, Vec(2, 1.0), partial), ShapeError);
  CHECK_THROWS_AS(eprop_step(e_prev, diag, Matrix(2, 2)), ShapeError);
}

TEST_CASE("loss tap scales each trace row by the learning signal") {
  const Matrix trace = random_matrix(3, 4, 3);
  const Vec signal = {0.0, 2.0, -0.5};
  const Matrix grad = eprop_gradient(signal, trace);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(grad(i, j) == doctest::Approx(signal[i] * trace(i, j)));
    }
  }
  const Matrix zero = eprop_gradient(Vec(3, 0.0), trace);
  for (double v : zero.data) CHECK(v == 0.0);
  CHECK_THROWS_AS(eprop_gradient(Vec(4, 1.0), trace), ShapeError);
}

TEST_CASE("home trace equals a manual per-synapse iteration") {
  const Model model = make_chain({3}, 2);
  ParamSet params = init_params(model, 4);
  const auto inputs = random_inputs(4, 2, 10);

  DiagForwardRun run(model, params);
  Matrix manual(3, 2);  // in.1 trace carried by hand
  const Matrix& w_rec = params.mats[model.group_index("rec.1")];
  StateSet h = StateSet::zeros(model);
  for (const Vec& x : inputs) {
    const StepResult step = forward_step(model, params, h, x);
    const ActivationValue act = activation_eval(model.nodes[0].activation, step.preacts[0]);
    Vec diag(3);
    for (std::size_t i = 0; i < 3; ++i) diag[i] = act.deriv[i] * w_rec(i, i);
    Matrix partial(3, 2);
    add_outer(partial, act.deriv, x);
    manual = eprop_step(manual, diag, partial);
    h = step.states;

    run.step(x);
    CHECK(run.traces_for("in.1")[0].data == manual.data);
  }
}

TEST_CASE("one step is exact: no history to approximate away") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model model = make_chain({4}, 2);
    const ParamSet params = init_params(model, seed);
    const auto inputs = random_inputs(1, 2, seed + 20);
    const GradSet got = eprop_episode(model, params, inputs, {{0.4}});
    const GradSet want = bptt_gradient(model, params, inputs, {{0.4}});
    CHECK(rel_l2(model, got, want) <= 1e-12);
  }
}

TEST_CASE("diagonal recurrence makes the single-layer approximation exact") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model model = make_chain({4}, 2, TraceMode::DiagHomeDenseAbove,
                                   LossTimesteps::EveryStep);
    ParamSet params = init_params(model, seed);
    make_diagonal(params, model, GroupKind::RecurrentWeights);
    const auto inputs = random_inputs(6, 2, seed + 30);
    const auto targets = random_targets(model, 6, seed + 40);
    const GradSet got = eprop_episode(model, params, inputs, targets);
    const GradSet want = bptt_gradient(model, params, inputs, targets);
    CHECK(rel_l2(model, got, want) <= 1e-9);
  }
}

TEST_CASE("zero recurrence leaves nothing to discard") {
  const Model model = make_chain({3, 4}, 2);
  ParamSet params = init_params(model, 6);
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    if (model.groups[g].kind == GroupKind::RecurrentWeights) {
      std::fill(params.mats[g].data.begin(), params.mats[g].data.end(), 0.0);
    }
  }
  const auto inputs = random_inputs(5, 2, 50);
  const GradSet got = eprop_episode(model, params, inputs, {{0.2}});
  const GradSet want = bptt_gradient(model, params, inputs, {{0.2}});
  CHECK(rel_l2(model, got, want) <= 1e-9);
}

TEST_CASE("dense upper traces keep depth exact when only the home is diagonal") {
  // the home-layer diagonal is the single approximation site in this mode
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model model = make_chain({3, 5, 4}, 2, TraceMode::DiagHomeDenseAbove,
                                   LossTimesteps::EveryStep);
    ParamSet params = init_params(model, seed);
    make_diagonal(params, model, GroupKind::RecurrentWeights);
    const auto inputs = random_inputs(5, 2, seed + 60);
    const auto targets = random_targets(model, 5, seed + 70);
    const GradSet got = eprop_episode(model, params, inputs, targets);
    const GradSet want = bptt_gradient(model, params, inputs, targets);
    CHECK(rel_l2(model, got, want) <= 1e-9);
  }
}

TEST_CASE("fully diagonal structure is exact in both modes") {
  for (TraceMode mode : {TraceMode::DiagEverywhere, TraceMode::DiagHomeDenseAbove}) {
    const Model model = make_chain({4, 4}, 2, mode);
    ParamSet params = init_params(model, 8);
    make_diagonal(params, model, GroupKind::RecurrentWeights);
    make_diagonal(params, model, GroupKind::CrossLayerWeights);
    const auto inputs = random_inputs(6, 2, 80);
    const GradSet got = eprop_episode(model, params, inputs, {{0.1}});
    const GradSet want = bptt_gradient(model, params, inputs, {{0.1}});
    CHECK(rel_l2(model, got, want) <= 1e-9);
  }
}

TEST_CASE("equal-width constraint for the all-diagonal mode") {
  NetworkSpec spec;
  spec.input_dim = 2;
  spec.readout_dim = 1;
  for (int l = 1; l <= 2; ++l) {
    LayerSpec layer;
    layer.layer_id = l;
    layer.hidden_dim = l == 1 ? 3 : 4;
    spec.layers.push_back(layer);
  }
  spec.trace_mode = TraceMode::DiagEverywhere;
  const Model model = compile(spec);
  const ParamSet params = init_params(model, 9);
  try {
    eprop_episode(model, params, random_inputs(2, 2, 90), {{0.0}});
    FAIL("expected a SpecError");
  } catch (const SpecError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("diag_everywhere") != std::string::npos);
    CHECK(msg.find("width") != std::string::npos);
  }
}

TEST_CASE("a path-graph dag reproduces the chain run bitwise") {
  const Model chain = make_chain({3, 2}, 2, TraceMode::DiagHomeDenseAbove,
                                 LossTimesteps::EveryStep);
  GraphSpec gspec;
  gspec.input_dim = 2;
  gspec.readout_dim = 1;
  for (const char* id : {"a", "b"}) {
    GraphNodeSpec node;
    node.id = id;
    node.hidden_dim = id[0] == 'a' ? 3 : 2;
    gspec.nodes.push_back(node);
  }
  gspec.edges = {{"a", "b"}};
  gspec.input_nodes = {"a"};
  gspec.output_node = "b";
  gspec.loss_timesteps = LossTimesteps::EveryStep;
  Model dag = compile(gspec);
  dag.tracked.clear();
  for (std::size_t g = 0; g < dag.groups.size(); ++g) {
    dag.tracked.push_back(static_cast<int>(g));
  }
  REQUIRE(dag.groups.size() == chain.groups.size());

  // group layout lines up positionally; share the weights so both runs see
  // identical numbers
  const ParamSet params = init_params(chain, 10);
  ParamSet dag_params = init_params(dag, 0);
  for (std::size_t g = 0; g < params.mats.size(); ++g) {
    REQUIRE(params.mats[g].same_shape(dag_params.mats[g]));
    dag_params.mats[g] = params.mats[g];
  }

  const auto inputs = random_inputs(4, 2, 100);
  const auto targets = random_targets(chain, 4, 101);
  const GradSet from_chain = eprop_episode(chain, params, inputs, targets);
  const GradSet from_dag = eprop_episode(dag, dag_params, inputs, targets);
  for (std::size_t g = 0; g < from_chain.mats.size(); ++g) {
    CHECK(from_chain.mats[g].data == from_dag.mats[g].data);
  }
}

TEST_CASE("diamond dag gradients stay aligned with reverse mode") {
  GraphSpec spec;
  spec.input_dim = 2;
  spec.readout_dim = 1;
  for (const char* id : {"src", "left", "right", "sink"}) {
    GraphNodeSpec node;
    node.id = id;
    node.hidden_dim = 3;
    spec.nodes.push_back(node);
  }
  spec.edges = {{"src", "left"}, {"src", "right"}, {"left", "sink"}, {"right", "sink"}};
  spec.input_nodes = {"src"};
  spec.output_node = "sink";
  Model model = compile(spec);
  model.tracked.clear();
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    model.tracked.push_back(static_cast<int>(g));
  }
  ParamSet params = init_params(model, 11);
  // in the all-diagonal regime the fan-out/fan-in sum of branch traces is exact
  make_diagonal(params, model, GroupKind::RecurrentWeights);
  make_diagonal(params, model, GroupKind::CrossLayerWeights);
  const auto inputs = random_inputs(5, 2, 110);
  const GradSet got = eprop_episode(model, params, inputs, {{0.3}});
  const GradSet want = bptt_gradient(model, params, inputs, {{0.3}});
  CHECK(rel_l2(model, got, want) <= 1e-9);
}

TEST_CASE("trace storage is the parameter count per path node and flat in T") {
  const Model model = make_chain({5, 5}, 5, TraceMode::DiagEverywhere);
  Model tracked_in = model;
  tracked_in.tracked = {model.group_index("in.1")};
  const ParamSet params = init_params(tracked_in, 12);

  OpCounter counter;
  DiagForwardRun run(tracked_in, params, {}, &counter);
  // in.1 is 5x5 = 25 values at each of the two path nodes
  CHECK(counter.peak_trace_values == 2 * 25);

  OpCounter shorter, longer;
  eprop_episode(tracked_in, params, random_inputs(4, 5, 120), {{0.0}}, {}, &shorter);
  eprop_episode(tracked_in, params, random_inputs(64, 5, 121), {{0.0}}, {}, &longer);
  CHECK(shorter.peak_trace_values == longer.peak_trace_values);
  CHECK(shorter.peak_trace_values == 2 * 25);
  CHECK(shorter.stored_activation_values == longer.stored_activation_values);
}

TEST_CASE("streamed taps equal the whole-episode gradient bitwise") {
  const Model model = make_chain({3, 3}, 2, TraceMode::DiagHomeDenseAbove,
                                 LossTimesteps::EveryStep);
  const ParamSet params = init_params(model, 13);
  const auto inputs = random_inputs(5, 2, 130);
  const auto targets = random_targets(model, 5, 131);

  const GradSet batched = eprop_episode(model, params, inputs, targets);
  DiagForwardRun run(model, params);
  for (std::size_t t = 1; t <= inputs.size(); ++t) {
    run.step(inputs[t - 1]);
    run.tap_loss(targets[t - 1]);
  }
  const GradSet streamed = run.gradient();
  for (std::size_t g = 0; g < batched.mats.size(); ++g) {
    CHECK(batched.mats[g].data == streamed.mats[g].data);
  }
}

TEST_CASE("traces after t steps ignore anything fed later") {
  const Model model = make_chain({3, 3}, 2);
  const ParamSet params = init_params(model, 14);
  const auto inputs = random_inputs(6, 2, 140);

  DiagForwardRun truncated(model, params);
  for (std::size_t t = 0; t < 3; ++t) truncated.step(inputs[t]);

  DiagForwardRun full(model, params);
  for (std::size_t t = 0; t < 3; ++t) full.step(inputs[t]);
  const std::vector<Matrix> snapshot = full.traces_for("in.1");
  for (std::size_t t = 3; t < 6; ++t) full.step(inputs[t]);

  const auto& fixed = truncated.traces_for("in.1");
  REQUIRE(snapshot.size() == fixed.size());
  for (std::size_t n = 0; n < fixed.size(); ++n) {
    CHECK(snapshot[n].data == fixed[n].data);
  }
}

TEST_CASE("alignment with reverse mode is usually positive on dense problems") {
  std::size_t positive = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Model model = make_chain({6}, 3);
    const ParamSet params = init_params(model, seed);
    const auto inputs = random_inputs(10, 3, seed + 150);
    const GradSet got = eprop_episode(model, params, inputs, {{0.5}});
    const GradSet want = bptt_gradient(model, params, inputs, {{0.5}});
    double dot_acc = 0.0, na = 0.0, nb = 0.0;
    for (int g : model.tracked) {
      for (std::size_t i = 0; i < got.mats[g].data.size(); ++i) {
        dot_acc += got.mats[g].data[i] * want.mats[g].data[i];
        na += got.mats[g].data[i] * got.mats[g].data[i];
        nb += want.mats[g].data[i] * want.mats[g].data[i];
      }
    }
    if (dot_acc / std::sqrt(na * nb) > 0.0) ++positive;
  }
  CHECK(positive > 10);
}

TEST_CASE("flipping the cross term corrupts deep gradients") {
  const Model model = make_chain({3, 3}, 2);
  const ParamSet params = init_params(model, 15);
  const auto inputs = random_inputs(4, 2, 160);
  const GradSet clean = eprop_episode(model, params, inputs, {{0.4}});
  EngineHooks hooks;
  hooks.cross_term_scale = -1.0;
  const GradSet flipped = eprop_episode(model, params, inputs, {{0.4}}, hooks);
  CHECK(max_abs_diff(model, clean, flipped, true) > 1e-6);
}
