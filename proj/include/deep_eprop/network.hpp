#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "deep_eprop/linalg.hpp"

namespace deep_eprop {

enum class LossTimesteps { FinalOnly, EveryStep };
enum class GroupKind { InputWeights, RecurrentWeights, CrossLayerWeights, ReadoutWeights, Bias };

/// Which Jacobians the diagonal-trace engine restricts to their diagonal:
/// only the home layer's recurrent one (dense traces above it), or every
/// propagation step (one parameter-shaped trace per layer).
enum class TraceMode { DiagHomeDenseAbove, DiagEverywhere };

TraceMode trace_mode_from_string(const std::string& name);
std::string to_string(TraceMode m);
std::string to_string(GroupKind k);

struct LayerSpec {
  int layer_id = 0;  // 1-based position in the stack
  std::size_t hidden_dim = 0;
  ActivationKind activation = ActivationKind::Tanh;
  bool has_recurrence = true;
};

/// Stacked-chain network document.
struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<LayerSpec> layers;
  std::size_t readout_dim = 0;
  LossTimesteps loss_timesteps = LossTimesteps::FinalOnly;
  std::vector<std::string> tracked_groups;  // defaulted to {"in.1"} when empty
  TraceMode trace_mode = TraceMode::DiagHomeDenseAbove;
  std::uint64_t seed = 0;
};

struct GraphNodeSpec {
  std::string id;
  std::size_t hidden_dim = 0;
  ActivationKind activation = ActivationKind::Tanh;
  bool has_recurrence = true;
};

struct GraphEdgeSpec {
  std::string from;
  std::string to;
};

/// DAG network document: nodes with internal recurrence, one weight matrix
/// per directed edge, a subset of input nodes and a single readout node.
struct GraphSpec {
  std::size_t input_dim = 0;
  std::vector<GraphNodeSpec> nodes;
  std::vector<GraphEdgeSpec> edges;
  std::vector<std::string> input_nodes;
  std::string output_node;
  std::size_t readout_dim = 0;
  LossTimesteps loss_timesteps = LossTimesteps::FinalOnly;
  std::vector<std::string> tracked_groups;
  TraceMode trace_mode = TraceMode::DiagHomeDenseAbove;
  std::uint64_t seed = 0;
};

using ParsedSpec = std::variant<NetworkSpec, GraphSpec>;

/// Parses and validates a JSON spec document. Rejects unknown keys, cyclic
/// edge lists (the message names the cycle) and dangling ids.
ParsedSpec parse_spec(const std::string& text);

// ---- compiled form ---------------------------------------------------------

struct ModelNode {
  std::string id;           // "1".."L" for chains, the node id for DAGs
  std::size_t dim = 0;
  ActivationKind activation = ActivationKind::Tanh;
  bool has_recurrence = true;
  bool is_input = false;    // receives x_t through an input-weights group
  int rec_group = -1;       // indices into Model::groups, -1 when absent
  int bias_group = -1;
  int input_group = -1;
  std::vector<std::pair<int, int>> incoming;  // (pred node index, edge group index)
};

struct GroupInfo {
  std::string id;  // "in.1", "rec.2", "cross.2", "edge.a.b", "bias.1", "out"
  GroupKind kind = GroupKind::InputWeights;
  int home_node = -1;  // node whose pre-activation the group feeds; -1 for "out"
  std::size_t rows = 0, cols = 0;
};

/// Topologically ordered executable form shared by chains and DAGs; a chain
/// compiles to a path graph. All gradient engines run on this.
struct Model {
  std::size_t input_dim = 0;
  std::size_t readout_dim = 0;
  std::vector<ModelNode> nodes;  // topological order
  int output_node = -1;
  std::vector<GroupInfo> groups;
  LossTimesteps loss_timesteps = LossTimesteps::FinalOnly;
  TraceMode trace_mode = TraceMode::DiagHomeDenseAbove;
  std::vector<int> tracked;  // indices into groups
  std::uint64_t seed = 0;
  bool is_chain = false;

  int group_index(const std::string& id) const;  // -1 when absent
  bool is_tracked(int group) const;
  std::size_t group_param_count(int group) const;
  int node_index(const std::string& id) const;
};

Model compile(const NetworkSpec& spec);
Model compile(const GraphSpec& spec);
Model compile(const ParsedSpec& spec);
Model parse_model(const std::string& text);  // parse_spec + compile

// ---- parameters ------------------------------------------------------------

/// One matrix per model group, aligned with Model::groups.
struct ParamSet {
  std::vector<Matrix> mats;
};

/// Deterministic init: entries uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
/// biases zero. Identical (model, seed) pairs give bitwise-identical values.
ParamSet init_params(const Model& model, std::uint64_t seed);

/// 53-bit uniform in [0,1) from the engine's raw output, platform independent.
double uniform01(std::mt19937_64& rng);

/// Stable sub-seed for (seed, tag) pairs; used for per-group and per-task streams.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

/// Text checkpoint: one "group <id> <rows> <cols>" header line per matrix
/// followed by its row-major values in decimal.
void save_checkpoint(std::ostream& out, const Model& model, const ParamSet& params);
ParamSet load_checkpoint(std::istream& in, const Model& model);

// ---- forward dynamics ------------------------------------------------------

/// Hidden state of every node at one timestep (all-zero before the first).
struct StateSet {
  std::vector<Vec> h;  // aligned with Model::nodes

  static StateSet zeros(const Model& model);
};

struct StepResult {
  StateSet states;
  std::vector<Vec> preacts;  // aligned with Model::nodes
};

/// One timestep of the recurrent dynamics:
///   h_n(t) = f( W_rec h_n(t-1) + sum_p W_edge h_p(t) + W_in x_t + b ).
StepResult forward_step(const Model& model, const ParamSet& params, const StateSet& prev,
                        const Vec& x, OpCounter* counter = nullptr);

/// Everything one episode produces, kept per timestep.
struct RolloutRecord {
  std::vector<Vec> inputs;                 // T x input_dim
  std::vector<std::vector<Vec>> states;    // T x nodes
  std::vector<std::vector<Vec>> preacts;   // T x nodes
  std::vector<Vec> outputs;                // T x readout_dim
  Vec step_losses;                         // T entries, zero where no loss applies
  double total_loss = 0.0;

  std::size_t steps() const { return inputs.size(); }
};

/// Targets: one vector (at the final step) for FinalOnly, T vectors for
/// EveryStep. Loss per enabled step is 0.5*||y_t - target_t||^2.
RolloutRecord rollout(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                      const std::vector<Vec>& targets, OpCounter* counter = nullptr);

/// Loss gradient, one matrix per group, aligned with Model::groups. Entries
/// for groups an algorithm does not handle stay zero.
struct GradSet {
  std::vector<Matrix> mats;
  static GradSet zeros(const Model& model);
};

/// Largest absolute entry difference, over tracked groups only or all groups.
double max_abs_diff(const Model& model, const GradSet& a, const GradSet& b, bool tracked_only);

/// Tracked-group entries in group declaration order, row-major.
Vec flatten_tracked(const Model& model, const GradSet& g);

/// Readout and per-step loss gradient helpers shared by the engines.
Vec readout(const Model& model, const ParamSet& params, const StateSet& states,
            OpCounter* counter = nullptr);
bool loss_enabled_at(const Model& model, std::size_t t, std::size_t total_steps);
const Vec& target_at(const Model& model, const std::vector<Vec>& targets, std::size_t t,
                     std::size_t total_steps);
void validate_episode_args(const Model& model, const std::vector<Vec>& inputs,
                           const std::vector<Vec>& targets);

}  // namespace deep_eprop
