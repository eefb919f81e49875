#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "deep_eprop/network.hpp"

using namespace deep_eprop;

namespace {

const char* kTwoLayerChain = R"({
  "topology": "chain",
  "input_dim": 3,
  "layers": [
    {"id": 1, "hidden_dim": 4, "activation": "tanh"},
    {"id": 2, "hidden_dim": 2, "activation": "relu", "has_recurrence": false}
  ],
  "readout_dim": 2,
  "loss": "mse",
  "loss_timesteps": "every_step",
  "tracked_groups": ["in.1", "rec.1"],
  "trace_mode": "diag_home_dense_above",
  "seed": 7
})";

const char* kDiamondDag = R"({
  "topology": "dag",
  "input_dim": 2,
  "nodes": [
    {"id": "top", "hidden_dim": 3},
    {"id": "left", "hidden_dim": 2},
    {"id": "right", "hidden_dim": 2, "has_recurrence": false},
    {"id": "sink", "hidden_dim": 3}
  ],
  "edges": [
    {"from": "top", "to": "left"},
    {"from": "top", "to": "right"},
    {"from": "left", "to": "sink"},
    {"from": "right", "to": "sink"}
  ],
  "input_nodes": ["top"],
  "output_node": "sink",
  "readout_dim": 1
})";

Model chain_model(std::size_t input_dim, std::size_t hidden, std::size_t readout,
                  ActivationKind act = ActivationKind::Tanh) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.readout_dim = readout;
  LayerSpec layer;
  layer.layer_id = 1;
  layer.hidden_dim = hidden;
  layer.activation = act;
  spec.layers.push_back(layer);
  return compile(spec);
}

}  // namespace

TEST_CASE("chain spec parses into the expected layout") {
  const ParsedSpec parsed = parse_spec(kTwoLayerChain);
  REQUIRE(std::holds_alternative<NetworkSpec>(parsed));
  const NetworkSpec& spec = std::get<NetworkSpec>(parsed);
  CHECK(spec.input_dim == 3);
  CHECK(spec.readout_dim == 2);
  REQUIRE(spec.layers.size() == 2);
  CHECK(spec.layers[0].hidden_dim == 4);
  CHECK(spec.layers[0].activation == ActivationKind::Tanh);
  CHECK(spec.layers[0].has_recurrence);
  CHECK(spec.layers[1].activation == ActivationKind::Relu);
  CHECK(!spec.layers[1].has_recurrence);
  CHECK(spec.loss_timesteps == LossTimesteps::EveryStep);
  CHECK(spec.tracked_groups == std::vector<std::string>{"in.1", "rec.1"});
  CHECK(spec.seed == 7);

  const Model model = compile(spec);
  CHECK(model.is_chain);
  REQUIRE(model.nodes.size() == 2);
  CHECK(model.nodes[0].dim == 4);
  CHECK(model.nodes[1].dim == 2);
  CHECK(model.output_node == 1);
  CHECK(model.nodes[0].is_input);
  CHECK(!model.nodes[1].is_input);

  // group ids, in declaration order, readout last
  std::vector<std::string> ids;
  for (const auto& g : model.groups) ids.push_back(g.id);
  CHECK(ids == std::vector<std::string>{"in.1", "rec.1", "bias.1", "cross.2", "bias.2", "out"});
  CHECK(model.groups.back().kind == GroupKind::ReadoutWeights);
  CHECK(model.group_param_count(model.group_index("cross.2")) == 2 * 4);
  CHECK(model.group_param_count(model.group_index("out")) == 2 * 2);
  CHECK(model.tracked.size() == 2);
  CHECK(model.is_tracked(model.group_index("rec.1")));
  CHECK(!model.is_tracked(model.group_index("bias.1")));
}

TEST_CASE("dag spec compiles with deterministic topological order") {
  const Model model = parse_model(kDiamondDag);
  CHECK(!model.is_chain);
  REQUIRE(model.nodes.size() == 4);
  // Kahn's queue breaks ties lexicographically: top, then left before right.
  CHECK(model.nodes[0].id == "top");
  CHECK(model.nodes[1].id == "left");
  CHECK(model.nodes[2].id == "right");
  CHECK(model.nodes[3].id == "sink");
  CHECK(model.output_node == 3);

  std::vector<std::string> ids;
  for (const auto& g : model.groups) ids.push_back(g.id);
  // per node: input weights (input nodes), incoming edges sorted by source id,
  // recurrence when enabled, bias
  CHECK(ids == std::vector<std::string>{"in.top", "rec.top", "bias.top",
                                        "edge.top.left", "rec.left", "bias.left",
                                        "edge.top.right", "bias.right",
                                        "edge.left.sink", "edge.right.sink", "rec.sink",
                                        "bias.sink", "out"});
  CHECK(model.group_index("edge.right.sink") >= 0);
  CHECK(model.groups[model.group_index("edge.left.sink")].rows == 3);
  CHECK(model.groups[model.group_index("edge.left.sink")].cols == 2);
  // default tracking follows the first input node
  REQUIRE(model.tracked.size() == 1);
  CHECK(model.groups[model.tracked[0]].id == "in.top");
}

TEST_CASE("spec rejection messages") {
  CHECK_THROWS_AS(parse_spec("not json"), SpecError);
  CHECK_THROWS_AS(parse_spec(R"({"topology": "ring"})"), SpecError);
  CHECK_THROWS_AS(parse_spec(R"({"topology": "chain", "input_dim": 0,
    "layers": [{"hidden_dim": 2}], "readout_dim": 1})"),
                  SpecError);
  CHECK_THROWS_AS(parse_spec(R"({"topology": "chain", "input_dim": 1, "readout_dim": 1,
    "layers": [{"hidden_dim": 2, "color": "red"}]})"),
                  SpecError);
  CHECK_THROWS_AS(parse_spec(R"({"topology": "chain", "input_dim": 1, "readout_dim": 1,
    "layers": [{"id": 2, "hidden_dim": 2}]})"),
                  SpecError);
  CHECK_THROWS_AS(parse_spec(R"({"topology": "chain", "input_dim": 1, "readout_dim": 1,
    "layers": [{"hidden_dim": 2}], "loss": "hinge"})"),
                  SpecError);
  // tracked ids resolve at compile time, once the groups exist
  CHECK_THROWS_AS(parse_model(R"({"topology": "chain", "input_dim": 1, "readout_dim": 1,
    "layers": [{"hidden_dim": 2}], "tracked_groups": ["rec.9"]})"),
                  SpecError);
}

TEST_CASE("cycles are reported with the offending walk") {
  const char* cyclic = R"({
    "topology": "dag",
    "input_dim": 1,
    "nodes": [{"id": "a", "hidden_dim": 2}, {"id": "b", "hidden_dim": 2}],
    "edges": [{"from": "a", "to": "b"}, {"from": "b", "to": "a"}],
    "input_nodes": ["a"],
    "output_node": "b",
    "readout_dim": 1
  })";
  try {
    parse_model(cyclic);
    FAIL("expected a SpecError");
  } catch (const SpecError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cycle") != std::string::npos);
    CHECK(msg.find("a") != std::string::npos);
    CHECK(msg.find("b") != std::string::npos);
  }

  const char* self_loop = R"({
    "topology": "dag",
    "input_dim": 1,
    "nodes": [{"id": "a", "hidden_dim": 2}],
    "edges": [{"from": "a", "to": "a"}],
    "input_nodes": ["a"],
    "output_node": "a",
    "readout_dim": 1
  })";
  try {
    parse_model(self_loop);
    FAIL("expected a SpecError");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("cycle") != std::string::npos);
  }
}

TEST_CASE("nodes that cannot be driven by any input are rejected") {
  const char* floating = R"({
    "topology": "dag",
    "input_dim": 1,
    "nodes": [{"id": "a", "hidden_dim": 2}, {"id": "b", "hidden_dim": 2},
              {"id": "orphan", "hidden_dim": 2}],
    "edges": [{"from": "a", "to": "b"}, {"from": "orphan", "to": "b"}],
    "input_nodes": ["a"],
    "output_node": "b",
    "readout_dim": 1
  })";
  try {
    parse_model(floating);
    FAIL("expected a SpecError");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("orphan") != std::string::npos);
  }
}

TEST_CASE("parameter initialization is deterministic and order independent") {
  const Model model = parse_model(kTwoLayerChain);
  const ParamSet a = init_params(model, 7);
  const ParamSet b = init_params(model, 7);
  REQUIRE(a.mats.size() == b.mats.size());
  for (std::size_t g = 0; g < a.mats.size(); ++g) CHECK(a.mats[g].data == b.mats[g].data);

  const ParamSet c = init_params(model, 8);
  bool any_difference = false;
  for (std::size_t g = 0; g < a.mats.size(); ++g) {
    if (a.mats[g].data != c.mats[g].data) any_difference = true;
  }
  CHECK(any_difference);

  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    const GroupInfo& info = model.groups[g];
    const double bound = 1.0 / std::sqrt(static_cast<double>(info.cols));
    for (double v : a.mats[g].data) {
      if (info.kind == GroupKind::Bias) {
        CHECK(v == 0.0);
      } else {
        CHECK(std::abs(v) <= bound);
      }
    }
  }

  // values are keyed by group id, so an unrelated extra layer upstream must
  // not shuffle the draws of a group that kept its id
  NetworkSpec one;
  one.input_dim = 3;
  LayerSpec l1;
  l1.layer_id = 1;
  l1.hidden_dim = 4;
  one.layers.push_back(l1);
  one.readout_dim = 2;
  const Model small = compile(one);
  const ParamSet small_params = init_params(small, 7);
  CHECK(small_params.mats[small.group_index("in.1")].data ==
        a.mats[model.group_index("in.1")].data);
}

TEST_CASE("derived seeds split the stream per tag") {
  std::mt19937_64 rng(derive_seed(1, "x"));
  for (int i = 0; i < 100; ++i) {
    const double u = uniform01(rng);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
  CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
  CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
}

TEST_CASE("checkpoints round trip bitwise") {
  const Model model = parse_model(kDiamondDag);
  const ParamSet params = init_params(model, 123);
  std::stringstream buffer;
  save_checkpoint(buffer, model, params);
  const ParamSet loaded = load_checkpoint(buffer, model);
  for (std::size_t g = 0; g < params.mats.size(); ++g) {
    CHECK(params.mats[g].data == loaded.mats[g].data);
  }

  std::stringstream bad("garbage 1 2\n");
  CHECK_THROWS_AS(load_checkpoint(bad, model), SpecError);

  // shape drift between the file and the model is caught
  const Model other = chain_model(2, 3, 1);
  std::stringstream again;
  save_checkpoint(again, model, params);
  CHECK_THROWS_AS(load_checkpoint(again, other), SpecError);
}

TEST_CASE("single step of a linear single layer matches the closed form") {
  const Model model = chain_model(1, 2, 1, ActivationKind::Linear);
  ParamSet params = init_params(model, 0);
  // W_in = [[1], [2]], W_rec = [[0.5, 0], [0, 0.25]], b = [0.1, -0.2]
  params.mats[model.group_index("in.1")] = Matrix(2, 1, {1.0, 2.0});
  params.mats[model.group_index("rec.1")] = Matrix(2, 2, {0.5, 0.0, 0.0, 0.25});
  params.mats[model.group_index("bias.1")] = Matrix(2, 1, {0.1, -0.2});
  params.mats[model.group_index("out")] = Matrix(1, 2, {1.0, 1.0});

  StateSet h = StateSet::zeros(model);
  const StepResult first = forward_step(model, params, h, {1.0});
  CHECK(first.states.h[0][0] == doctest::Approx(1.0 * 1.0 + 0.1));
  CHECK(first.states.h[0][1] == doctest::Approx(2.0 * 1.0 - 0.2));

  const StepResult second = forward_step(model, params, first.states, {0.0});
  CHECK(second.states.h[0][0] == doctest::Approx(0.5 * 1.1 + 0.1));
  CHECK(second.states.h[0][1] == doctest::Approx(0.25 * 1.8 - 0.2));

  const Vec y = readout(model, params, second.states);
  CHECK(y[0] == doctest::Approx(second.states.h[0][0] + second.states.h[0][1]));
}

TEST_CASE("rollout accumulates the mse loss at enabled steps") {
  const Model model = chain_model(1, 2, 1, ActivationKind::Linear);
  ParamSet params = init_params(model, 3);
  const std::vector<Vec> inputs = {{0.3}, {-0.4}, {0.9}};

  // final_only: exactly one target, loss read at the last step
  const RolloutRecord rec = rollout(model, params, inputs, {{0.5}});
  REQUIRE(rec.steps() == 3);
  const double diff = rec.outputs[2][0] - 0.5;
  CHECK(rec.total_loss == doctest::Approx(0.5 * diff * diff));
  CHECK(rec.step_losses[0] == 0.0);
  CHECK(rec.step_losses[1] == 0.0);

  Model every = model;
  every.loss_timesteps = LossTimesteps::EveryStep;
  const RolloutRecord rec2 = rollout(every, params, inputs, {{0.1}, {0.2}, {0.3}});
  double total = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double d = rec2.outputs[t][0] - 0.1 * static_cast<double>(t + 1);
    CHECK(rec2.step_losses[t] == doctest::Approx(0.5 * d * d));
    total += rec2.step_losses[t];
  }
  CHECK(rec2.total_loss == doctest::Approx(total));

  CHECK_THROWS_AS(rollout(model, params, {}, {{0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(rollout(model, params, inputs, {{0.5}, {0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(rollout(every, params, inputs, {{0.5}}), std::invalid_argument);
}

TEST_CASE("loss schedule helpers") {
  const Model final_model = chain_model(1, 2, 1);
  CHECK(!loss_enabled_at(final_model, 1, 3));
  CHECK(!loss_enabled_at(final_model, 2, 3));
  CHECK(loss_enabled_at(final_model, 3, 3));

  Model every = final_model;
  every.loss_timesteps = LossTimesteps::EveryStep;
  for (std::size_t t = 1; t <= 3; ++t) CHECK(loss_enabled_at(every, t, 3));

  const std::vector<Vec> single = {{1.0}};
  const std::vector<Vec> three = {{1.0}, {2.0}, {3.0}};
  CHECK(target_at(final_model, single, 3, 3) == Vec{1.0});
  CHECK(target_at(every, three, 2, 3) == Vec{2.0});
}

TEST_CASE("gradient containers") {
  const Model model = parse_model(kTwoLayerChain);
  GradSet g = GradSet::zeros(model);
  REQUIRE(g.mats.size() == model.groups.size());
  for (std::size_t i = 0; i < g.mats.size(); ++i) {
    CHECK(g.mats[i].rows == model.groups[i].rows);
    CHECK(g.mats[i].cols == model.groups[i].cols);
  }

  GradSet h = GradSet::zeros(model);
  h.mats[model.group_index("rec.1")](2, 3) = 0.25;
  h.mats[model.group_index("bias.2")](1, 0) = -4.0;
  CHECK(max_abs_diff(model, g, h, false) == 4.0);
  // bias.2 is untracked in this spec, rec.1 is tracked
  CHECK(max_abs_diff(model, g, h, true) == 0.25);

  const Vec flat = flatten_tracked(model, h);
  CHECK(flat.size() == model.group_param_count(model.group_index("in.1")) +
                           model.group_param_count(model.group_index("rec.1")));
  double sum = 0.0;
  for (double v : flat) sum += std::abs(v);
  CHECK(sum == 0.25);
}
