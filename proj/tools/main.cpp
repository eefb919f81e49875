// deep-eprop: verify, train and benchmark recurrent gradient algorithms.
//
// Exit codes: 0 success, 1 failed check or diverged training, 2 bad usage
// or an invalid spec file.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "deep_eprop/bench.hpp"
#include "deep_eprop/errors.hpp"
#include "deep_eprop/oracles.hpp"
#include "deep_eprop/trainer.hpp"
#include "deep_eprop/verify.hpp"

namespace fs = std::filesystem;
using namespace deep_eprop;

namespace {

Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open spec file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_model(text.str());
}

std::ofstream open_artifact(const fs::path& out_dir, const std::string& name) {
  fs::create_directories(out_dir);
  const fs::path path = out_dir / name;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

int run_verify_cmd(const std::string& spec_path, const fs::path& out_dir,
                   std::uint64_t seed, std::optional<double> tolerance, int threads,
                   bool flip_cross_sign) {
  VerifyOptions options;
  options.seed = seed;
  options.tolerance_override = tolerance;
  options.threads = threads;
  if (flip_cross_sign) options.hooks.cross_term_scale = -1.0;
  if (!spec_path.empty()) options.user_model = load_model(spec_path);

  const VerifyReport report = run_verify(options);
  for (const CheckResult& c : report.checks) {
    std::printf("%-34s %s  worst %.3g (tolerance %.3g)\n", c.name.c_str(),
                c.passed ? "pass" : "FAIL", c.worst, c.tolerance);
  }
  auto out = open_artifact(out_dir, "report.json");
  write_verify_report(out, report);
  std::printf("%s; report written to %s\n",
              report.all_passed ? "all checks passed" : "some checks failed",
              (out_dir / "report.json").string().c_str());
  return report.all_passed ? 0 : 1;
}

int run_train_cmd(const std::string& spec_path, const fs::path& out_dir,
                  const TrainConfig& config) {
  const Model model = load_model(spec_path);
  const TrainResult result = train(model, config);
  {
    auto out = open_artifact(out_dir, "metrics.csv");
    write_metrics_csv(out, result.series);
  }
  {
    auto out = open_artifact(out_dir, "checkpoint.txt");
    save_checkpoint(out, model, result.final_params);
  }
  double tail = 0.0;
  const std::size_t window = std::min<std::size_t>(100, result.series.size());
  for (std::size_t i = result.series.size() - window; i < result.series.size(); ++i) {
    tail += result.series[i].loss;
  }
  std::printf("trained %zu episodes with %s; mean loss over the last %zu: %.6f\n",
              result.series.size(), to_string(config.algorithm).c_str(), window,
              tail / static_cast<double>(window));
  return 0;
}

int run_bench_cmd(const fs::path& out_dir, std::uint64_t seed) {
  const std::vector<Algorithm> algorithms = {Algorithm::Bptt, Algorithm::Rtrl,
                                             Algorithm::DeepRtrl, Algorithm::Eprop,
                                             Algorithm::DeepEprop};
  // one series per dimension; the fitter needs the other two dims pinned
  const SweepResult by_h = run_sweep(algorithms, {4, 8, 16}, {1}, {8}, seed);
  const SweepResult by_l = run_sweep(algorithms, {6}, {1, 2, 3}, {8}, seed);
  const SweepResult by_t = run_sweep(algorithms, {6}, {1}, {8, 16, 32}, seed);

  SweepResult sweep;
  for (const SweepResult* part : {&by_h, &by_l, &by_t}) {
    sweep.rows.insert(sweep.rows.end(), part->rows.begin(), part->rows.end());
  }
  {
    auto out = open_artifact(out_dir, "sweep.csv");
    write_sweep_csv(out, sweep);
  }
  ScalingReport scaling;
  for (const SweepResult* part : {&by_h, &by_l, &by_t}) {
    const ScalingReport partial = emit_scaling_report(*part);
    scaling.fits.insert(scaling.fits.end(), partial.fits.begin(), partial.fits.end());
    scaling.notices.insert(scaling.notices.end(), partial.notices.begin(),
                           partial.notices.end());
  }
  {
    auto out = open_artifact(out_dir, "scaling.json");
    write_scaling_report(out, scaling);
  }
  for (const ScalingFit& f : scaling.fits) {
    std::printf("%-10s %s vs %c: slope %.3f over %zu points\n", f.algorithm.c_str(),
                f.metric.c_str(), f.varied, f.slope, f.points);
  }
  for (const std::string& notice : scaling.notices) {
    std::printf("note: %s\n", notice.c_str());
  }
  std::printf("wrote %s and %s\n", (out_dir / "sweep.csv").string().c_str(),
              (out_dir / "scaling.json").string().c_str());
  return 0;
}

int run_paths_cmd(const std::string& spec_path, const fs::path& out_dir,
                  std::uint64_t seed, std::size_t steps, std::size_t cap) {
  const Model model = load_model(spec_path);
  ParamSet params = init_params(model, model.seed);
  std::mt19937_64 rng(derive_seed(seed, "paths_episode"));
  std::vector<Vec> inputs(steps, Vec(model.input_dim));
  for (auto& x : inputs) {
    for (double& v : x) v = 2.0 * uniform01(rng) - 1.0;
  }
  const std::size_t n_targets =
      model.loss_timesteps == LossTimesteps::EveryStep ? steps : 1u;
  std::vector<Vec> targets(n_targets, Vec(model.readout_dim));
  for (auto& y : targets) {
    for (double& v : y) v = 2.0 * uniform01(rng) - 1.0;
  }

  const auto paths = enumerate_gradient_paths(model, params, inputs, targets, cap);
  auto out = open_artifact(out_dir, "paths.txt");
  for (const auto& p : paths) {
    double norm_sq = 0.0;
    for (double v : p.contribution.data) norm_sq += v * v;
    out << p.group_id << ": ";
    for (std::size_t i = 0; i < p.nodes.size(); ++i) {
      out << p.nodes[i] << (i + 1 < p.nodes.size() ? " -> " : "");
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", std::sqrt(norm_sq));
    out << "  |contribution| " << buf << "\n";
  }
  out << "total " << paths.size() << " paths\n";
  std::printf("%zu gradient paths; listing written to %s\n", paths.size(),
              (out_dir / "paths.txt").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient computation for deep recurrent networks: exact forward"
               " and reverse modes, local approximations, and cross-checks"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd, bool spec_required) {
    auto* opt = cmd->add_option("--spec", spec_path, "network spec file (JSON)");
    if (spec_required) opt->required();
    cmd->add_option("--out", out_dir, "directory for artifacts")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "base seed for generated data")
        ->capture_default_str();
  };

  auto* verify_cmd =
      app.add_subcommand("verify", "run the cross-verification battery");
  std::optional<double> tolerance;
  int threads = 0;
  bool flip_cross_sign = false;
  add_common(verify_cmd, false);
  verify_cmd->add_option("--tolerance", tolerance,
                         "override the relative-error tolerances");
  verify_cmd->add_option("--threads", threads,
                         "parallel instances (0: honor DEEP_EPROP_THREADS)");
  verify_cmd->add_flag("--inject-cross-sign-flip", flip_cross_sign)->group("");

  auto* train_cmd = app.add_subcommand("train", "train on a synthetic task");
  std::string algorithm = "deep_eprop";
  std::string trace_mode;
  std::string task = "temporal_xor";
  std::string timing = "episode_end";
  TrainConfig config;
  add_common(train_cmd, true);
  train_cmd->add_option("--algorithm", algorithm,
                        "bptt, rtrl, deep_rtrl, eprop or deep_eprop")
      ->capture_default_str();
  train_cmd->add_option("--trace-mode", trace_mode,
                        "diag_home_dense_above or diag_everywhere");
  train_cmd->add_option("--task", task, "delayed_copy, temporal_xor or pattern_sum")
      ->capture_default_str();
  train_cmd->add_option("--learning-rate", config.learning_rate)->capture_default_str();
  train_cmd->add_option("--episodes", config.episodes)->capture_default_str();
  train_cmd->add_option("--update-timing", timing, "episode_end or online")
      ->capture_default_str();
  train_cmd->add_flag("--align-vs-bptt", config.align_vs_bptt,
                      "log gradient alignment against reverse mode per episode");
  train_cmd->add_option("--horizon", config.task_params.horizon)->capture_default_str();

  auto* bench_cmd =
      app.add_subcommand("bench", "sweep instrumented cost counters");
  add_common(bench_cmd, false);

  auto* paths_cmd =
      app.add_subcommand("paths", "enumerate per-path gradient contributions");
  std::size_t steps = 3;
  std::size_t cap = 1000000;
  add_common(paths_cmd, true);
  paths_cmd->add_option("--steps", steps, "episode length")->capture_default_str();
  paths_cmd->add_option("--cap", cap, "abort beyond this many paths")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (verify_cmd->parsed()) {
      return run_verify_cmd(spec_path, out_dir, seed, tolerance, threads,
                            flip_cross_sign);
    }
    if (train_cmd->parsed()) {
      config.algorithm = algorithm_from_string(algorithm);
      if (!trace_mode.empty()) config.trace_mode = trace_mode_from_string(trace_mode);
      config.task = task_kind_from_string(task);
      config.seed = seed;
      if (timing == "online") {
        config.update_timing = UpdateTiming::Online;
      } else if (timing != "episode_end") {
        throw std::invalid_argument("unknown update timing '" + timing + "'");
      }
      return run_train_cmd(spec_path, out_dir, config);
    }
    if (bench_cmd->parsed()) return run_bench_cmd(out_dir, seed);
    if (paths_cmd->parsed()) return run_paths_cmd(spec_path, out_dir, seed, steps, cap);
  } catch (const SpecError& e) {
    std::fprintf(stderr, "spec error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  } catch (const ResourceError& e) {
    std::fprintf(stderr, "resource limit: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid arguments: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
