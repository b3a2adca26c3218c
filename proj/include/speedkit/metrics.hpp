// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "speedkit/trace.hpp"

namespace speedkit {

/// Conditional acceptance rates. ar[i] is the probability that draft token
/// i+1 is accepted given positions 1..i were; support[i] is the number of
/// steps the estimate is conditioned on. ar[i] is NaN when support[i] == 0.
struct ARVector {
  int gamma = 0;
  std::vector<double> ar;
  std::vector<int64_t> support;
};

/// AL = 1 + sum_{i=1..gamma} prod_{j=1..i} ar_j. NaN entries are treated
/// as zero (no step ever reached that depth).
double theoretical_al(std::span<const double> ar);

/// Step accounting shared by AL/AR extraction: a step is a chunk event
/// with new_tokens >= 1, excluding the first such event of each trace
/// (prefill emission) and, by default, terminal truncated chunks.
struct StepFilter {
  bool exclude_terminal = true;
};

std::vector<int> decode_step_tokens(const RequestTrace& trace, StepFilter filter = {});

/// Mean tokens per decode step across all ok traces.
double empirical_al(std::span<const RequestTrace> traces, StepFilter filter = {});

ARVector conditional_ars(std::span<const RequestTrace> traces, int gamma,
                         StepFilter filter = {});

struct LatencyStats {
  double mean = 0, p50 = 0, p90 = 0, p99 = 0;  // ms
  int64_t count = 0;
};

struct TraceLatencies {
  LatencyStats ttft;
  LatencyStats step;
  LatencyStats request;
};

/// TTFT = first token event - dispatch; step latency = gaps between
/// successive token events after the first; request latency = last event -
/// dispatch. Percentiles are nearest-rank.
TraceLatencies latency_stats(std::span<const RequestTrace> traces);

struct TpsResult {
  double user_tps = 0;
  double output_tps = 0;
  bool window_trimmed = true;  // false = fell back to the full window
};

/// output_tps over a steady-state window (5% trimmed at each end, falling
/// back to the full window when the trimmed one is empty); user_tps is the
/// per-request decode rate averaged over traces.
TpsResult tps(std::span<const RequestTrace> traces, int64_t wall_start_ns,
              int64_t wall_end_ns, int concurrency);

struct ParetoPoint {
  int concurrency = 0;
  double user_tps = 0;
  double output_tps = 0;
};

/// Non-dominated points, exact duplicates collapsed, sorted by user_tps.
std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points);

struct SpeedupEstimate {
  double t_ar_ms = 0;
  double t_sd_ms = 0;
  double al = 0;
  double speedup = 0;  // t_ar * al / t_sd
};

SpeedupEstimate speedup_proxy(double t_ar_ms, double t_sd_ms, double al);

struct TokenRecord {
  std::string category;
  std::vector<int> tokens;
};
using TokenCorpus = std::vector<TokenRecord>;

struct VocabCoverage {
  int64_t k = 0;
  double covered_fraction = 0;
  std::map<std::string, double> per_category;
};

/// Vocabulary = K most frequent reference tokens (ties: lower token id);
/// coverage = fraction of test tokens inside it, overall and per category.
VocabCoverage vocab_coverage(const TokenCorpus& reference, const TokenCorpus& test, int64_t K);

struct MetricsReport {
  int concurrency = 1;
  int gamma = 0;
  int64_t n_steps = 0;
  double empirical_al = 0;
  double theoretical_al = 0;
  ARVector ar_vector;
  LatencyStats ttft;
  LatencyStats step_latency;
  LatencyStats request_latency;
  double user_tps = 0;
  double output_tps = 0;
  bool tps_window_trimmed = true;
  int64_t ok_traces = 0;
  int64_t failed_traces = 0;
};

MetricsReport compute_report(const RunRecord& run, int gamma, StepFilter filter = {});

nlohmann::json report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

std::string pareto_csv(const std::vector<ParetoPoint>& points,
                       const std::vector<ParetoPoint>& frontier);

}  // namespace speedkit
