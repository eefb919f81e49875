#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deep_eprop/trainer.hpp"

namespace deep_eprop {

/// One instrumented episode. Counts are exact functions of the dims; wall
/// time is informational only and the single nondeterministic column.
struct SweepRow {
  Algorithm algorithm = Algorithm::Bptt;
  std::size_t H = 0;
  std::size_t L = 0;
  std::size_t T = 0;
  std::int64_t flops_per_step = 0;
  std::int64_t peak_trace_values = 0;
  std::int64_t stored_activation_values = 0;
  double wall_seconds = 0.0;
  bool skipped = false;
  std::string skip_reason;
};

struct SweepResult {
  std::vector<SweepRow> rows;
};

/// Cartesian sweep over the given dims: chains of L equal layers of width H,
/// input width H, tracked group in.1 (so its parameter count is H*H), horizon
/// T. E-prop rows run in diag_everywhere mode so trace storage is per-synapse.
/// Rows whose estimated trace storage exceeds the memory guard, or whose
/// algorithm cannot run at that depth, come back skipped with a reason.
SweepResult run_sweep(const std::vector<Algorithm>& algorithms,
                      const std::vector<std::size_t>& h_values,
                      const std::vector<std::size_t>& l_values,
                      const std::vector<std::size_t>& t_values, std::uint64_t seed);

void write_sweep_csv(std::ostream& out, const SweepResult& sweep);

/// Least-squares slope of log(y) against log(x). Needs >= 2 points, x,y > 0.
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct ScalingFit {
  std::string algorithm;
  char varied = '?';    // 'H', 'L' or 'T'
  std::string metric;   // which SweepRow count was fitted
  double slope = 0.0;
  std::size_t points = 0;
};

struct ScalingReport {
  std::vector<ScalingFit> fits;
  std::vector<std::string> notices;  // series left unfitted and why
};

/// Fits every (algorithm, varied dim, count metric) series found in the sweep
/// where the other two dims stay constant and at least 3 distinct values of
/// the varied dim exist; everything else becomes a notice.
ScalingReport emit_scaling_report(const SweepResult& sweep);

void write_scaling_report(std::ostream& out, const ScalingReport& report);

}  // namespace deep_eprop
