#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deep_eprop/network.hpp"
#include "deep_eprop/rtrl.hpp"

namespace deep_eprop {

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Replaces the relative-error tolerance of every equivalence check
  /// (band, count and bitwise checks keep their own thresholds).
  std::optional<double> tolerance_override;
  /// Fault-injection passthrough; nondefault hooks should make verify fail.
  EngineHooks hooks;
  /// Extra user-supplied model to run the cross-oracle matrix on.
  std::optional<Model> user_model;
  /// Parallelism cap; 0 reads DEEP_EPROP_THREADS, else stays sequential.
  int threads = 0;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;      // worst error, measured slope, median, or count, per check
  double tolerance = 0.0;  // numeric threshold the check compared against
  std::string detail;
  double seconds = 0.0;    // wall time; not serialized, reports stay reproducible
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_passed = false;
};

/// The built-in verification battery: forward-mode vs reverse-mode exactness
/// on random chains and DAGs, the oracle triangle, path combinatorics,
/// approximation exactness regimes, alignment diagnostics, complexity counts,
/// and the online/streaming contract.
VerifyReport run_verify(const VerifyOptions& options);

/// JSON report, one object per check.
void write_verify_report(std::ostream& out, const VerifyReport& report);

}  // namespace deep_eprop
