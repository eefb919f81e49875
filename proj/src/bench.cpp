#include "deep_eprop/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "deep_eprop/eprop.hpp"
#include "deep_eprop/oracles.hpp"

namespace deep_eprop {

namespace {

constexpr std::int64_t kTraceValueGuard = 1ll << 27;  // ~1 GiB of doubles

Model sweep_model(std::size_t h, std::size_t l, Algorithm algorithm) {
  NetworkSpec spec;
  spec.input_dim = h;
  spec.readout_dim = 1;
  for (std::size_t i = 0; i < l; ++i) {
    LayerSpec layer;
    layer.layer_id = static_cast<int>(i + 1);
    layer.hidden_dim = h;
    spec.layers.push_back(layer);
  }
  spec.tracked_groups = {"in.1"};
  const bool diag = algorithm == Algorithm::Eprop || algorithm == Algorithm::DeepEprop;
  spec.trace_mode = diag ? TraceMode::DiagEverywhere : TraceMode::DiagHomeDenseAbove;
  return compile(spec);
}

// worst-case live trace values for the in.1 run: every layer carries a trace
std::int64_t estimate_trace_values(const Model& model, Algorithm algorithm) {
  if (algorithm == Algorithm::Bptt) return 0;
  const std::size_t p = model.groups.front().rows * model.groups.front().cols;
  std::int64_t total = 0;
  const bool diag = model.trace_mode == TraceMode::DiagEverywhere;
  for (const auto& node : model.nodes) {
    total += static_cast<std::int64_t>(diag ? p : node.dim * p);
  }
  return total;
}

}  // namespace

SweepResult run_sweep(const std::vector<Algorithm>& algorithms,
                      const std::vector<std::size_t>& h_values,
                      const std::vector<std::size_t>& l_values,
                      const std::vector<std::size_t>& t_values, std::uint64_t seed) {
  for (std::size_t v : h_values) {
    if (v == 0) throw std::invalid_argument("run_sweep: H values must be at least 1");
  }
  for (std::size_t v : l_values) {
    if (v == 0) throw std::invalid_argument("run_sweep: L values must be at least 1");
  }
  for (std::size_t v : t_values) {
    if (v == 0) throw std::invalid_argument("run_sweep: T values must be at least 1");
  }
  SweepResult out;
  for (Algorithm algorithm : algorithms) {
    for (std::size_t h : h_values) {
      for (std::size_t l : l_values) {
        for (std::size_t t : t_values) {
          SweepRow row;
          row.algorithm = algorithm;
          row.H = h;
          row.L = l;
          row.T = t;
          if ((algorithm == Algorithm::Rtrl || algorithm == Algorithm::Eprop) && l != 1) {
            row.skipped = true;
            row.skip_reason = "single-layer algorithm at depth " + std::to_string(l);
            out.rows.push_back(std::move(row));
            continue;
          }
          const Model model = sweep_model(h, l, algorithm);
          if (estimate_trace_values(model, algorithm) > kTraceValueGuard) {
            row.skipped = true;
            row.skip_reason = "estimated trace storage above the memory guard";
            out.rows.push_back(std::move(row));
            continue;
          }
          const ParamSet params = init_params(model, derive_seed(seed, "sweep_params"));
          std::mt19937_64 rng(derive_seed(seed, "sweep_inputs"));
          std::vector<Vec> inputs(t, Vec(h));
          for (auto& x : inputs) {
            for (double& v : x) v = 2.0 * uniform01(rng) - 1.0;
          }
          const std::vector<Vec> targets = {Vec(1, 0.0)};

          OpCounter counter;
          const auto start = std::chrono::steady_clock::now();
          switch (algorithm) {
            case Algorithm::Bptt:
              bptt_gradient(model, params, inputs, targets, &counter);
              break;
            case Algorithm::Rtrl:
            case Algorithm::DeepRtrl:
              deep_rtrl_episode(model, params, inputs, targets, EngineHooks{}, &counter);
              break;
            case Algorithm::Eprop:
            case Algorithm::DeepEprop:
              eprop_episode(model, params, inputs, targets, EngineHooks{}, &counter);
              break;
          }
          const auto stop = std::chrono::steady_clock::now();
          row.flops_per_step = counter.flops / static_cast<std::int64_t>(t);
          row.peak_trace_values = counter.peak_trace_values;
          row.stored_activation_values = counter.stored_activation_values;
          row.wall_seconds = std::chrono::duration<double>(stop - start).count();
          out.rows.push_back(std::move(row));
        }
      }
    }
  }
  return out;
}

void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
  out << "algorithm,H,L,T,flops_per_step,peak_trace_values,stored_activation_values,"
         "wall_seconds,skipped,skip_reason\n";
  char buf[32];
  for (const SweepRow& row : sweep.rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", row.wall_seconds);
    out << to_string(row.algorithm) << "," << row.H << "," << row.L << "," << row.T << ","
        << row.flops_per_step << "," << row.peak_trace_values << ","
        << row.stored_activation_values << "," << buf << "," << (row.skipped ? 1 : 0) << ","
        << row.skip_reason << "\n";
  }
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("fit_loglog_slope: need matching series of at least 2 points");
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw std::invalid_argument("fit_loglog_slope: values must be positive");
    }
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(x.size());
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) {
    throw std::invalid_argument("fit_loglog_slope: x values must not all coincide");
  }
  return (n * sxy - sx * sy) / denom;
}

ScalingReport emit_scaling_report(const SweepResult& sweep) {
  ScalingReport report;
  std::map<std::string, std::vector<const SweepRow*>> by_algorithm;
  for (const SweepRow& row : sweep.rows) {
    if (!row.skipped) by_algorithm[to_string(row.algorithm)].push_back(&row);
  }
  const struct {
    char dim;
    std::size_t SweepRow::*value;
    std::size_t SweepRow::*fixed_a;
    std::size_t SweepRow::*fixed_b;
  } axes[] = {{'H', &SweepRow::H, &SweepRow::L, &SweepRow::T},
              {'L', &SweepRow::L, &SweepRow::H, &SweepRow::T},
              {'T', &SweepRow::T, &SweepRow::H, &SweepRow::L}};
  const std::pair<const char*, std::int64_t SweepRow::*> metrics[] = {
      {"flops_per_step", &SweepRow::flops_per_step},
      {"peak_trace_values", &SweepRow::peak_trace_values},
      {"stored_activation_values", &SweepRow::stored_activation_values}};

  for (const auto& [name, rows] : by_algorithm) {
    for (const auto& axis : axes) {
      std::set<std::size_t> varied, fixed_a, fixed_b;
      for (const SweepRow* row : rows) {
        varied.insert(row->*(axis.value));
        fixed_a.insert(row->*(axis.fixed_a));
        fixed_b.insert(row->*(axis.fixed_b));
      }
      if (varied.size() < 3 || fixed_a.size() != 1 || fixed_b.size() != 1) {
        if (varied.size() > 1 && varied.size() < 3) {
          report.notices.push_back(std::string(name) + ": " + axis.dim +
                                   " series has fewer than 3 points, fit omitted");
        }
        continue;
      }
      for (const auto& [metric, member] : metrics) {
        std::vector<double> xs, ys;
        bool positive = true;
        for (const SweepRow* row : rows) {
          const double y = static_cast<double>(row->*member);
          if (y <= 0.0) positive = false;
          xs.push_back(static_cast<double>(row->*(axis.value)));
          ys.push_back(y);
        }
        if (!positive) {
          report.notices.push_back(std::string(name) + ": " + metric + " vs " + axis.dim +
                                   " has nonpositive counts, fit omitted");
          continue;
        }
        ScalingFit fit;
        fit.algorithm = name;
        fit.varied = axis.dim;
        fit.metric = metric;
        fit.slope = fit_loglog_slope(xs, ys);
        fit.points = xs.size();
        report.fits.push_back(std::move(fit));
      }
    }
  }
  return report;
}

void write_scaling_report(std::ostream& out, const ScalingReport& report) {
  out << "{\n  \"fits\": [\n";
  char buf[32];
  for (std::size_t i = 0; i < report.fits.size(); ++i) {
    const ScalingFit& f = report.fits[i];
    std::snprintf(buf, sizeof(buf), "%.6f", f.slope);
    out << "    {\"algorithm\": \"" << f.algorithm << "\", \"varied\": \"" << f.varied
        << "\", \"metric\": \"" << f.metric << "\", \"slope\": " << buf
        << ", \"points\": " << f.points << "}" << (i + 1 < report.fits.size() ? "," : "")
        << "\n";
  }
  out << "  ],\n  \"notices\": [\n";
  for (std::size_t i = 0; i < report.notices.size(); ++i) {
    out << "    \"" << report.notices[i] << "\""
        << (i + 1 < report.notices.size() ? "," : "") << "\n";
  }
  out << "  ]\n}\n";
}

}  // namespace deep_eprop
