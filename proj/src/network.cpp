#include "deep_eprop/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace deep_eprop {

using nlohmann::json;

TraceMode trace_mode_from_string(const std::string& name) {
  if (name == "diag_home_dense_above") return TraceMode::DiagHomeDenseAbove;
  if (name == "diag_everywhere") return TraceMode::DiagEverywhere;
  throw SpecError("unknown trace_mode '" + name +
                  "' (expected diag_home_dense_above|diag_everywhere)");
}

std::string to_string(TraceMode m) {
  return m == TraceMode::DiagHomeDenseAbove ? "diag_home_dense_above" : "diag_everywhere";
}

std::string to_string(GroupKind k) {
  switch (k) {
    case GroupKind::InputWeights: return "input_weights";
    case GroupKind::RecurrentWeights: return "recurrent_weights";
    case GroupKind::CrossLayerWeights: return "cross_layer_weights";
    case GroupKind::ReadoutWeights: return "readout_weights";
    case GroupKind::Bias: return "bias";
  }
  return "?";
}

namespace {

LossTimesteps loss_timesteps_from_string(const std::string& name) {
  if (name == "final_only") return LossTimesteps::FinalOnly;
  if (name == "every_step") return LossTimesteps::EveryStep;
  throw SpecError("unknown loss_timesteps '" + name + "' (expected final_only|every_step)");
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw SpecError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

std::size_t get_count(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw SpecError("missing key '" + key + "' in " + where);
  const json& v = j.at(key);
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) {
    throw SpecError("'" + key + "' in " + where + " must be a positive integer");
  }
  return v.get<std::size_t>();
}

std::string get_string(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw SpecError("'" + key + "' in " + where + " must be a string");
  }
  return j.at(key).get<std::string>();
}

bool valid_id(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  }
  return true;
}

void parse_shared_tail(const json& j, LossTimesteps& loss_timesteps,
                       std::vector<std::string>& tracked, TraceMode& trace_mode,
                       std::uint64_t& seed) {
  if (j.contains("loss") && get_string(j, "loss", "spec") != "mse") {
    throw SpecError("only the mse loss is supported");
  }
  if (j.contains("loss_timesteps")) {
    loss_timesteps = loss_timesteps_from_string(get_string(j, "loss_timesteps", "spec"));
  }
  if (j.contains("tracked_groups")) {
    const json& tg = j.at("tracked_groups");
    if (!tg.is_array()) throw SpecError("'tracked_groups' must be an array of group ids");
    for (const auto& g : tg) {
      if (!g.is_string()) throw SpecError("'tracked_groups' must be an array of group ids");
      tracked.push_back(g.get<std::string>());
    }
  }
  if (j.contains("trace_mode")) {
    trace_mode = trace_mode_from_string(get_string(j, "trace_mode", "spec"));
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw SpecError("'seed' must be a nonnegative integer");
    seed = j.at("seed").get<std::uint64_t>();
  }
}

NetworkSpec parse_chain(const json& j) {
  reject_unknown_keys(j, {"topology", "input_dim", "layers", "readout_dim", "loss",
                          "loss_timesteps", "tracked_groups", "trace_mode", "seed"},
                      "chain spec");
  NetworkSpec spec;
  spec.input_dim = get_count(j, "input_dim", "chain spec");
  spec.readout_dim = get_count(j, "readout_dim", "chain spec");
  if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty()) {
    throw SpecError("chain spec needs a nonempty 'layers' array");
  }
  int pos = 0;
  for (const json& lj : j.at("layers")) {
    ++pos;
    const std::string where = "layers[" + std::to_string(pos) + "]";
    if (!lj.is_object()) throw SpecError(where + " must be an object");
    reject_unknown_keys(lj, {"id", "hidden_dim", "activation", "has_recurrence"}, where);
    LayerSpec layer;
    layer.layer_id = pos;
    if (lj.contains("id")) {
      if (!lj.at("id").is_number_integer() || lj.at("id").get<int>() != pos) {
        throw SpecError(where + ": layer ids must match their 1-based position");
      }
    }
    layer.hidden_dim = get_count(lj, "hidden_dim", where);
    if (lj.contains("activation")) {
      layer.activation = activation_from_string(get_string(lj, "activation", where));
    }
    if (lj.contains("has_recurrence")) {
      if (!lj.at("has_recurrence").is_boolean()) {
        throw SpecError(where + ": 'has_recurrence' must be a boolean");
      }
      layer.has_recurrence = lj.at("has_recurrence").get<bool>();
    }
    spec.layers.push_back(layer);
  }
  parse_shared_tail(j, spec.loss_timesteps, spec.tracked_groups, spec.trace_mode, spec.seed);
  if (spec.tracked_groups.empty()) spec.tracked_groups = {"in.1"};
  return spec;
}

GraphSpec parse_dag(const json& j) {
  reject_unknown_keys(j, {"topology", "input_dim", "nodes", "edges", "input_nodes",
                          "output_node", "readout_dim", "loss", "loss_timesteps",
                          "tracked_groups", "trace_mode", "seed"},
                      "dag spec");
  GraphSpec spec;
  spec.input_dim = get_count(j, "input_dim", "dag spec");
  spec.readout_dim = get_count(j, "readout_dim", "dag spec");
  if (!j.contains("nodes") || !j.at("nodes").is_array() || j.at("nodes").empty()) {
    throw SpecError("dag spec needs a nonempty 'nodes' array");
  }
  std::set<std::string> ids;
  for (const json& nj : j.at("nodes")) {
    if (!nj.is_object()) throw SpecError("every node must be an object");
    GraphNodeSpec node;
    node.id = get_string(nj, "id", "node");
    const std::string where = "node '" + node.id + "'";
    reject_unknown_keys(nj, {"id", "hidden_dim", "activation", "has_recurrence"}, where);
    if (!valid_id(node.id)) {
      throw SpecError("node id '" + node.id + "' must be alphanumeric/underscore");
    }
    if (!ids.insert(node.id).second) throw SpecError("duplicate node id '" + node.id + "'");
    node.hidden_dim = get_count(nj, "hidden_dim", where);
    if (nj.contains("activation")) {
      node.activation = activation_from_string(get_string(nj, "activation", where));
    }
    if (nj.contains("has_recurrence")) {
      if (!nj.at("has_recurrence").is_boolean()) {
        throw SpecError(where + ": 'has_recurrence' must be a boolean");
      }
      node.has_recurrence = nj.at("has_recurrence").get<bool>();
    }
    spec.nodes.push_back(node);
  }
  if (j.contains("edges")) {
    if (!j.at("edges").is_array()) throw SpecError("'edges' must be an array");
    for (const json& ej : j.at("edges")) {
      if (!ej.is_object()) throw SpecError("every edge must be an object");
      reject_unknown_keys(ej, {"from", "to"}, "edge");
      GraphEdgeSpec e{get_string(ej, "from", "edge"), get_string(ej, "to", "edge")};
      if (!ids.count(e.from)) throw SpecError("edge refers to unknown node '" + e.from + "'");
      if (!ids.count(e.to)) throw SpecError("edge refers to unknown node '" + e.to + "'");
      if (e.from == e.to) {
        throw SpecError("cycle: " + e.from + " -> " + e.to + " (self edges are recurrence)");
      }
      spec.edges.push_back(e);
    }
  }
  if (!j.contains("input_nodes") || !j.at("input_nodes").is_array() ||
      j.at("input_nodes").empty()) {
    throw SpecError("dag spec needs a nonempty 'input_nodes' array");
  }
  for (const json& in : j.at("input_nodes")) {
    if (!in.is_string() || !ids.count(in.get<std::string>())) {
      throw SpecError("'input_nodes' entries must name existing nodes");
    }
    spec.input_nodes.push_back(in.get<std::string>());
  }
  spec.output_node = get_string(j, "output_node", "dag spec");
  if (!ids.count(spec.output_node)) {
    throw SpecError("output_node '" + spec.output_node + "' does not exist");
  }
  parse_shared_tail(j, spec.loss_timesteps, spec.tracked_groups, spec.trace_mode, spec.seed);
  if (spec.tracked_groups.empty()) spec.tracked_groups = {"in." + spec.input_nodes.front()};
  return spec;
}

// Declaration-order DFS; on a back edge the message lists the closed walk.
void check_acyclic(const GraphSpec& spec) {
  std::map<std::string, std::vector<std::string>> succs;
  for (const auto& e : spec.edges) succs[e.from].push_back(e.to);
  std::map<std::string, int> color;  // 0 new, 1 on stack, 2 done
  std::vector<std::string> stack;

  struct Walker {
    const std::map<std::string, std::vector<std::string>>& succs;
    std::map<std::string, int>& color;
    std::vector<std::string>& stack;

    void visit(const std::string& v) {
      color[v] = 1;
      stack.push_back(v);
      auto it = succs.find(v);
      if (it != succs.end()) {
        for (const auto& w : it->second) {
          if (color[w] == 1) {
            std::string msg = "cycle: ";
            auto from = std::find(stack.begin(), stack.end(), w);
            for (auto p = from; p != stack.end(); ++p) msg += *p + " -> ";
            throw SpecError(msg + w);
          }
          if (color[w] == 0) visit(w);
        }
      }
      stack.pop_back();
      color[v] = 2;
    }
  } walker{succs, color, stack};

  for (const auto& n : spec.nodes) {
    if (color[n.id] == 0) walker.visit(n.id);
  }
}

}  // namespace

ParsedSpec parse_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(std::string("spec parse error: ") + e.what());
  }
  if (!j.is_object()) throw SpecError("spec document must be a JSON object");
  const std::string topology = get_string(j, "topology", "spec");
  if (topology == "chain") return parse_chain(j);
  if (topology == "dag") {
    GraphSpec spec = parse_dag(j);
    check_acyclic(spec);
    return spec;
  }
  throw SpecError("unknown topology '" + topology + "' (expected chain|dag)");
}

// ---- compilation -----------------------------------------------------------

int Model::group_index(const std::string& id) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].id == id) return static_cast<int>(g);
  }
  return -1;
}

bool Model::is_tracked(int group) const {
  return std::find(tracked.begin(), tracked.end(), group) != tracked.end();
}

std::size_t Model::group_param_count(int group) const {
  return groups[group].rows * groups[group].cols;
}

int Model::node_index(const std::string& id) const {
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    if (nodes[n].id == id) return static_cast<int>(n);
  }
  return -1;
}

namespace {

int add_group(Model& m, const std::string& id, GroupKind kind, int home, std::size_t rows,
              std::size_t cols) {
  m.groups.push_back(GroupInfo{id, kind, home, rows, cols});
  return static_cast<int>(m.groups.size() - 1);
}

void resolve_tracked(Model& m, const std::vector<std::string>& ids) {
  if (ids.empty()) throw SpecError("tracked_groups must not be empty");
  for (const auto& id : ids) {
    int g = m.group_index(id);
    if (g < 0) throw SpecError("tracked group '" + id + "' does not exist");
    if (!m.is_tracked(g)) m.tracked.push_back(g);
  }
}

}  // namespace

Model compile(const NetworkSpec& spec) {
  Model m;
  m.is_chain = true;
  m.input_dim = spec.input_dim;
  m.readout_dim = spec.readout_dim;
  m.loss_timesteps = spec.loss_timesteps;
  m.trace_mode = spec.trace_mode;
  m.seed = spec.seed;

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& layer = spec.layers[l];
    ModelNode node;
    node.id = std::to_string(l + 1);
    node.dim = layer.hidden_dim;
    node.activation = layer.activation;
    node.has_recurrence = layer.has_recurrence;
    const int idx = static_cast<int>(m.nodes.size());
    if (l == 0) {
      node.is_input = true;
      node.input_group =
          add_group(m, "in.1", GroupKind::InputWeights, idx, node.dim, spec.input_dim);
    } else {
      const int edge = add_group(m, "cross." + node.id, GroupKind::CrossLayerWeights, idx,
                                 node.dim, spec.layers[l - 1].hidden_dim);
      node.incoming.emplace_back(idx - 1, edge);
    }
    if (node.has_recurrence) {
      node.rec_group =
          add_group(m, "rec." + node.id, GroupKind::RecurrentWeights, idx, node.dim, node.dim);
    }
    node.bias_group = add_group(m, "bias." + node.id, GroupKind::Bias, idx, node.dim, 1);
    m.nodes.push_back(node);
  }
  m.output_node = static_cast<int>(m.nodes.size() - 1);
  add_group(m, "out", GroupKind::ReadoutWeights, -1, spec.readout_dim,
            m.nodes.back().dim);
  resolve_tracked(m, spec.tracked_groups.empty() ? std::vector<std::string>{"in.1"}
                                                 : spec.tracked_groups);
  return m;
}

Model compile(const GraphSpec& spec) {
  check_acyclic(spec);
  Model m;
  m.input_dim = spec.input_dim;
  m.readout_dim = spec.readout_dim;
  m.loss_timesteps = spec.loss_timesteps;
  m.trace_mode = spec.trace_mode;
  m.seed = spec.seed;

  // Kahn's algorithm with lexicographic tie-break so node order, parameter
  // layout and evaluation are independent of declaration order.
  std::map<std::string, const GraphNodeSpec*> by_id;
  for (const auto& n : spec.nodes) by_id[n.id] = &n;
  std::map<std::string, std::set<std::string>> preds, succs;
  for (const auto& n : spec.nodes) preds[n.id];
  for (const auto& e : spec.edges) {
    preds[e.to].insert(e.from);
    succs[e.from].insert(e.to);
  }
  std::set<std::string> ready;
  for (const auto& [id, p] : preds) {
    if (p.empty()) ready.insert(id);
  }
  std::vector<std::string> order;
  auto remaining = preds;
  while (!ready.empty()) {
    const std::string v = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(v);
    for (const auto& w : succs[v]) {
      remaining[w].erase(v);
      if (remaining[w].empty()) ready.insert(w);
    }
  }
  if (order.size() != spec.nodes.size()) {
    throw SpecError("cycle: edge list is not acyclic");  // unreachable after check_acyclic
  }

  std::map<std::string, int> node_idx;
  const std::set<std::string> input_set(spec.input_nodes.begin(), spec.input_nodes.end());
  for (const auto& id : order) {
    const GraphNodeSpec& ns = *by_id.at(id);
    ModelNode node;
    node.id = id;
    node.dim = ns.hidden_dim;
    node.activation = ns.activation;
    node.has_recurrence = ns.has_recurrence;
    const int idx = static_cast<int>(m.nodes.size());
    node_idx[id] = idx;
    if (input_set.count(id)) {
      node.is_input = true;
      node.input_group =
          add_group(m, "in." + id, GroupKind::InputWeights, idx, node.dim, spec.input_dim);
    }
    for (const auto& pred : preds[id]) {  // set order: lexicographic
      const int edge = add_group(m, "edge." + pred + "." + id, GroupKind::CrossLayerWeights, idx,
                                 node.dim, by_id.at(pred)->hidden_dim);
      node.incoming.emplace_back(node_idx.at(pred), edge);
    }
    if (node.has_recurrence) {
      node.rec_group =
          add_group(m, "rec." + id, GroupKind::RecurrentWeights, idx, node.dim, node.dim);
    }
    node.bias_group = add_group(m, "bias." + id, GroupKind::Bias, idx, node.dim, 1);
    m.nodes.push_back(node);
  }

  // every node must see input influence
  std::vector<bool> reachable(m.nodes.size(), false);
  for (std::size_t n = 0; n < m.nodes.size(); ++n) {
    if (m.nodes[n].is_input) reachable[n] = true;
    for (const auto& [p, e] : m.nodes[n].incoming) {
      if (reachable[p]) reachable[n] = true;
    }
    if (!reachable[n]) {
      throw SpecError("node '" + m.nodes[n].id + "' is not reachable from any input node");
    }
  }

  m.output_node = node_idx.at(spec.output_node);
  add_group(m, "out", GroupKind::ReadoutWeights, -1, spec.readout_dim,
            m.nodes[m.output_node].dim);
  resolve_tracked(m, spec.tracked_groups.empty()
                         ? std::vector<std::string>{"in." + spec.input_nodes.front()}
                         : spec.tracked_groups);
  return m;
}

Model compile(const ParsedSpec& spec) {
  return std::visit([](const auto& s) { return compile(s); }, spec);
}

Model parse_model(const std::string& text) { return compile(parse_spec(text)); }

// ---- parameters ------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

// 53-bit mantissa uniform in [0,1); identical across platforms.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  return splitmix64(seed ^ fnv1a(tag));
}

ParamSet init_params(const Model& model, std::uint64_t seed) {
  ParamSet p;
  p.mats.reserve(model.groups.size());
  for (const GroupInfo& g : model.groups) {
    Matrix mat(g.rows, g.cols);
    if (g.kind != GroupKind::Bias) {
      // groups are seeded by id so values do not depend on declaration order
      std::mt19937_64 rng(derive_seed(seed, g.id));
      const double bound = 1.0 / std::sqrt(static_cast<double>(g.cols));
      for (double& v : mat.data) v = bound * (2.0 * uniform01(rng) - 1.0);
    }
    p.mats.push_back(std::move(mat));
  }
  return p;
}

void save_checkpoint(std::ostream& out, const Model& model, const ParamSet& params) {
  out << "deep-eprop-checkpoint 1 " << model.groups.size() << "\n";
  char buf[32];
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    const GroupInfo& info = model.groups[g];
    const Matrix& m = params.mats[g];
    out << "group " << info.id << " " << m.rows << " " << m.cols << "\n";
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (std::size_t j = 0; j < m.cols; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
        out << buf << (j + 1 == m.cols ? "" : " ");
      }
      out << "\n";
    }
  }
}

ParamSet load_checkpoint(std::istream& in, const Model& model) {
  std::string magic;
  int version = 0;
  std::size_t ngroups = 0;
  in >> magic >> version >> ngroups;
  if (!in || magic != "deep-eprop-checkpoint" || version != 1) {
    throw SpecError("checkpoint: bad header");
  }
  if (ngroups != model.groups.size()) {
    throw SpecError("checkpoint: has " + std::to_string(ngroups) + " groups, model has " +
                    std::to_string(model.groups.size()));
  }
  ParamSet p;
  p.mats.resize(model.groups.size());
  std::vector<bool> seen(model.groups.size(), false);
  for (std::size_t k = 0; k < ngroups; ++k) {
    std::string tag, id;
    std::size_t rows = 0, cols = 0;
    in >> tag >> id >> rows >> cols;
    if (!in || tag != "group") throw SpecError("checkpoint: bad group header");
    const int g = model.group_index(id);
    if (g < 0) throw SpecError("checkpoint: unknown group '" + id + "'");
    const GroupInfo& info = model.groups[g];
    if (rows != info.rows || cols != info.cols) {
      throw SpecError("checkpoint: group '" + id + "' is " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", model expects " + std::to_string(info.rows) +
                      "x" + std::to_string(info.cols));
    }
    Matrix m(rows, cols);
    for (double& v : m.data) {
      if (!(in >> v)) throw SpecError("checkpoint: truncated values for group '" + id + "'");
    }
    p.mats[g] = std::move(m);
    seen[g] = true;
  }
  for (std::size_t g = 0; g < seen.size(); ++g) {
    if (!seen[g]) throw SpecError("checkpoint: missing group '" + model.groups[g].id + "'");
  }
  return p;
}

// ---- gradients -------------------------------------------------------------

GradSet GradSet::zeros(const Model& model) {
  GradSet g;
  g.mats.reserve(model.groups.size());
  for (const GroupInfo& info : model.groups) g.mats.emplace_back(info.rows, info.cols);
  return g;
}

double max_abs_diff(const Model& model, const GradSet& a, const GradSet& b, bool tracked_only) {
  double worst = 0.0;
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    if (tracked_only && !model.is_tracked(static_cast<int>(g))) continue;
    const Matrix& ma = a.mats[g];
    const Matrix& mb = b.mats[g];
    if (!ma.same_shape(mb)) {
      throw ShapeError("max_abs_diff: group '" + model.groups[g].id + "' is " + shape_str(ma) +
                       " vs " + shape_str(mb));
    }
    for (std::size_t i = 0; i < ma.data.size(); ++i) {
      worst = std::max(worst, std::abs(ma.data[i] - mb.data[i]));
    }
  }
  return worst;
}

Vec flatten_tracked(const Model& model, const GradSet& g) {
  Vec out;
  for (std::size_t i = 0; i < model.groups.size(); ++i) {
    if (!model.is_tracked(static_cast<int>(i))) continue;
    out.insert(out.end(), g.mats[i].data.begin(), g.mats[i].data.end());
  }
  return out;
}

// ---- forward dynamics ------------------------------------------------------

StateSet StateSet::zeros(const Model& model) {
  StateSet s;
  s.h.reserve(model.nodes.size());
  for (const auto& n : model.nodes) s.h.emplace_back(n.dim, 0.0);
  return s;
}

StepResult forward_step(const Model& model, const ParamSet& params, const StateSet& prev,
                        const Vec& x, OpCounter* counter) {
  if (x.size() != model.input_dim) {
    throw ShapeError("forward_step: input has " + std::to_string(x.size()) +
                     " entries, model expects " + std::to_string(model.input_dim));
  }
  if (prev.h.size() != model.nodes.size()) {
    throw ShapeError("forward_step: state set has " + std::to_string(prev.h.size()) +
                     " nodes, model has " + std::to_string(model.nodes.size()));
  }
  StepResult r;
  r.states.h.resize(model.nodes.size());
  r.preacts.resize(model.nodes.size());
  for (std::size_t n = 0; n < model.nodes.size(); ++n) {
    const ModelNode& node = model.nodes[n];
    if (prev.h[n].size() != node.dim) {
      throw ShapeError("forward_step: state of node '" + node.id + "' has " +
                       std::to_string(prev.h[n].size()) + " entries, expected " +
                       std::to_string(node.dim));
    }
    Vec preact(node.dim, 0.0);
    const Matrix& bias = params.mats[node.bias_group];
    for (std::size_t i = 0; i < node.dim; ++i) preact[i] = bias(i, 0);
    if (node.rec_group >= 0) {
      const Vec rec = matvec(params.mats[node.rec_group], prev.h[n], counter);
      for (std::size_t i = 0; i < node.dim; ++i) preact[i] += rec[i];
    }
    for (const auto& [p, e] : node.incoming) {
      const Vec in = matvec(params.mats[e], r.states.h[p], counter);
      for (std::size_t i = 0; i < node.dim; ++i) preact[i] += in[i];
    }
    if (node.is_input) {
      const Vec in = matvec(params.mats[node.input_group], x, counter);
      for (std::size_t i = 0; i < node.dim; ++i) preact[i] += in[i];
    }
    ActivationValue act = activation_eval(node.activation, preact);
    r.states.h[n] = std::move(act.value);
    r.preacts[n] = std::move(preact);
  }
  return r;
}

Vec readout(const Model& model, const ParamSet& params, const StateSet& states,
            OpCounter* counter) {
  return matvec(params.mats.back(), states.h[model.output_node], counter);
}

bool loss_enabled_at(const Model& model, std::size_t t, std::size_t total_steps) {
  return model.loss_timesteps == LossTimesteps::EveryStep || t == total_steps;
}

const Vec& target_at(const Model& model, const std::vector<Vec>& targets, std::size_t t,
                     std::size_t total_steps) {
  if (model.loss_timesteps == LossTimesteps::EveryStep) return targets[t - 1];
  (void)total_steps;
  return targets.front();
}

void validate_episode_args(const Model& model, const std::vector<Vec>& inputs,
                           const std::vector<Vec>& targets) {
  if (inputs.empty()) throw std::invalid_argument("rollout: empty input sequence");
  for (const Vec& x : inputs) {
    if (x.size() != model.input_dim) {
      throw ShapeError("rollout: input has " + std::to_string(x.size()) +
                       " entries, model expects " + std::to_string(model.input_dim));
    }
  }
  const std::size_t expected =
      model.loss_timesteps == LossTimesteps::EveryStep ? inputs.size() : 1u;
  if (targets.size() != expected) {
    throw std::invalid_argument("rollout: expected " + std::to_string(expected) +
                                " target vectors, got " + std::to_string(targets.size()));
  }
  for (const Vec& y : targets) {
    if (y.size() != model.readout_dim) {
      throw ShapeError("rollout: target has " + std::to_string(y.size()) +
                       " entries, readout is " + std::to_string(model.readout_dim));
    }
  }
}

RolloutRecord rollout(const Model& model, const ParamSet& params, const std::vector<Vec>& inputs,
                      const std::vector<Vec>& targets, OpCounter* counter) {
  validate_episode_args(model, inputs, targets);
  const std::size_t T = inputs.size();
  RolloutRecord rec;
  rec.inputs = inputs;
  rec.states.resize(T);
  rec.preacts.resize(T);
  rec.outputs.resize(T);
  rec.step_losses.assign(T, 0.0);

  std::size_t per_step_values = model.input_dim + model.readout_dim;
  for (const auto& n : model.nodes) per_step_values += 2 * n.dim;

  StateSet states = StateSet::zeros(model);
  for (std::size_t t = 1; t <= T; ++t) {
    StepResult r = forward_step(model, params, states, inputs[t - 1], counter);
    states = std::move(r.states);
    rec.states[t - 1] = states.h;
    rec.preacts[t - 1] = std::move(r.preacts);
    rec.outputs[t - 1] = readout(model, params, states, counter);
    if (loss_enabled_at(model, t, T)) {
      const Vec& target = target_at(model, targets, t, T);
      double loss = 0.0;
      for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = rec.outputs[t - 1][i] - target[i];
        loss += 0.5 * d * d;
      }
      rec.step_losses[t - 1] = loss;
      rec.total_loss += loss;
    }
    if (counter) counter->add_activation_storage(static_cast<std::int64_t>(per_step_values));
  }
  return rec;
}

}  // namespace deep_eprop
