#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deep_eprop/network.hpp"
#include "deep_eprop/rtrl.hpp"

namespace deep_eprop {

enum class TaskKind { DelayedCopy, TemporalXor, PatternSum };
TaskKind task_kind_from_string(const std::string& name);
std::string to_string(TaskKind k);

/// Knobs for the synthetic tasks; fields irrelevant to a kind are ignored.
struct TaskParams {
  std::size_t horizon = 10;
  std::size_t input_dim = 1;   // delayed_copy symbol width, pattern_sum channels
  std::size_t delay = 2;       // delayed_copy: target is the input from step T-delay
  std::size_t mark_first = 7;  // temporal_xor: 1-based marked positions; the spans are
  std::size_t mark_second = 9; // kept short enough for a decaying-trace learner
};

/// One episode of inputs and targets. temporal_xor feeds two channels
/// (bit value, marker flag) and asks for the XOR of the two marked bits at
/// the end. delayed_copy asks for the input symbol from `delay` steps before
/// the end. pattern_sum asks for the running input sum at every step.
struct TaskInstance {
  TaskKind kind;
  std::vector<Vec> inputs;
  std::vector<Vec> targets;
  LossTimesteps loss_timesteps;
  std::uint64_t seed = 0;
};

/// Deterministic in (kind, params, seed). Invalid params (marks out of range
/// or unordered, delay too large for the horizon) raise std::invalid_argument.
TaskInstance generate_task(TaskKind kind, const TaskParams& params, std::uint64_t seed);

/// How close two gradients are, overall and per group.
struct GroupAlignment {
  std::string group_id;
  double cosine = 1.0;
  double relative_l2 = 0.0;
};
struct GradientReport {
  double cosine = 1.0;       // over the concatenation of all group entries
  double relative_l2 = 0.0;  // |g1-g2| / max(|g2|, 1e-12)
  std::vector<GroupAlignment> per_group;
};

/// Cosine convention: two zero vectors are perfectly aligned (1.0); a zero
/// against a nonzero vector scores 0.0.
GradientReport gradient_alignment(const Model& model, const GradSet& g1, const GradSet& g2);

enum class Algorithm { Bptt, Rtrl, DeepRtrl, Eprop, DeepEprop };
Algorithm algorithm_from_string(const std::string& name);
std::string to_string(Algorithm a);

enum class UpdateTiming { EpisodeEnd, Online };

struct TrainConfig {
  Algorithm algorithm = Algorithm::DeepEprop;
  std::optional<TraceMode> trace_mode;  // overrides the model's mode when set
  double learning_rate = 0.1;
  std::size_t episodes = 1000;
  std::uint64_t seed = 0;
  UpdateTiming update_timing = UpdateTiming::EpisodeEnd;
  bool align_vs_bptt = false;
  TaskKind task = TaskKind::TemporalXor;
  TaskParams task_params;
};

struct EpisodeMetrics {
  std::size_t episode = 0;  // 1-based
  double loss = 0.0;
  std::optional<double> cosine_vs_bptt;
  std::optional<double> rel_l2_vs_bptt;
};

struct TrainResult {
  std::vector<EpisodeMetrics> series;
  ParamSet final_params;
};

/// Plain SGD, one update per episode (or per enabled step in online mode).
/// Deterministic given (model.seed, config). Non-finite loss raises
/// DivergenceError naming the episode. Alignment, when requested, is measured
/// against a fresh reverse-mode gradient at the same parameter point before
/// the update.
TrainResult train(const Model& model, const TrainConfig& config);

/// theta <- theta - lr * g, every group.
void apply_update(ParamSet& params, const GradSet& grad, double learning_rate);

/// Metrics CSV: episode,loss,cosine_vs_bptt,rel_l2_vs_bptt with empty cells
/// for absent alignment values.
void write_metrics_csv(std::ostream& out, const std::vector<EpisodeMetrics>& series);

/// First episode whose trailing `window` episodes have mean loss below the
/// threshold; nullopt when the series never gets there.
std::optional<std::size_t> first_episode_below(const std::vector<EpisodeMetrics>& series,
                                               double threshold, std::size_t window);

}  // namespace deep_eprop
