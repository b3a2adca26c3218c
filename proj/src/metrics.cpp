// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#include "speedkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "speedkit/util.hpp"

namespace speedkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

LatencyStats stats_from_ms(std::vector<double> v) {
  LatencyStats s;
  s.count = static_cast<int64_t>(v.size());
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  auto nearest_rank = [&](double p) {
    size_t rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    if (rank < 1) rank = 1;
    return v[rank - 1];
  };
  s.p50 = nearest_rank(50);
  s.p90 = nearest_rank(90);
  s.p99 = nearest_rank(99);
  return s;
}

nlohmann::json latency_to_json(const LatencyStats& s) {
  return {{"mean", s.mean}, {"p50", s.p50}, {"p90", s.p90}, {"p99", s.p99}, {"count", s.count}};
}

LatencyStats latency_from_json(const nlohmann::json& j) {
  LatencyStats s;
  s.mean = j.value("mean", 0.0);
  s.p50 = j.value("p50", 0.0);
  s.p90 = j.value("p90", 0.0);
  s.p99 = j.value("p99", 0.0);
  s.count = j.value("count", int64_t{0});
  return s;
}

}  // namespace

const char* trace_status_name(TraceStatus s) {
  switch (s) {
    case TraceStatus::ok: return "ok";
    case TraceStatus::timeout: return "timeout";
    case TraceStatus::error: return "error";
  }
  return "?";
}

TraceStatus trace_status_from_string(const std::string& s) {
  if (s == "ok") return TraceStatus::ok;
  if (s == "timeout") return TraceStatus::timeout;
  if (s == "error") return TraceStatus::error;
  throw std::invalid_argument("unknown trace status: " + s);
}

nlohmann::json trace_to_json(const RequestTrace& t) {
  nlohmann::json events = nlohmann::json::array();
  for (const ChunkEvent& e : t.events) {
    nlohmann::json ej = {{"t_ns", e.t_ns}, {"new_tokens", e.new_tokens}};
    if (e.is_final) ej["is_final"] = true;
    if (e.truncated) ej["truncated"] = true;
    events.push_back(std::move(ej));
  }
  nlohmann::json j = {{"type", "trace"},
                      {"request_id", t.request_id},
                      {"sample_id", t.sample_id},
                      {"dispatch_ns", t.dispatch_ns},
                      {"events", std::move(events)},
                      {"total_output_tokens", t.total_output_tokens},
                      {"status", trace_status_name(t.status)}};
  if (t.reported_completion_tokens >= 0) {
    j["reported_completion_tokens"] = t.reported_completion_tokens;
  }
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

RequestTrace trace_from_json(const nlohmann::json& j) {
  RequestTrace t;
  t.request_id = j.value("request_id", "");
  t.sample_id = j.value("sample_id", "");
  t.dispatch_ns = j.value("dispatch_ns", int64_t{0});
  for (const auto& ej : j.value("events", nlohmann::json::array())) {
    ChunkEvent e;
    e.t_ns = ej.value("t_ns", int64_t{0});
    e.new_tokens = ej.value("new_tokens", 0);
    e.is_final = ej.value("is_final", false);
    e.truncated = ej.value("truncated", false);
    t.events.push_back(e);
  }
  t.total_output_tokens = j.value("total_output_tokens", int64_t{0});
  t.reported_completion_tokens = j.value("reported_completion_tokens", int64_t{-1});
  t.status = trace_status_from_string(j.value("status", "error"));
  t.error = j.value("error", "");
  return t;
}

void save_run_record(const std::string& path, const RunRecord& rec) {
  std::string out;
  nlohmann::json header = {{"type", "run"},
                           {"config", rec.config},
                           {"concurrency", rec.concurrency},
                           {"wall_start_ns", rec.wall_start_ns},
                           {"wall_end_ns", rec.wall_end_ns},
                           {"under_filled", rec.under_filled},
                           {"endpoint_unreachable", rec.endpoint_unreachable}};
  out += header.dump();
  out += '\n';
  for (const RequestTrace& t : rec.traces) {
    out += trace_to_json(t).dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

RunRecord load_run_record(const std::string& path) {
  auto lines = split_lines(read_text_file(path));
  if (lines.empty()) throw std::runtime_error("empty run record file: " + path);
  RunRecord rec;
  bool have_header = false;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    nlohmann::json j = nlohmann::json::parse(lines[i]);
    std::string type = j.value("type", "");
    if (type == "run") {
      rec.config = j.value("config", nlohmann::json::object());
      rec.concurrency = j.value("concurrency", 1);
      rec.wall_start_ns = j.value("wall_start_ns", int64_t{0});
      rec.wall_end_ns = j.value("wall_end_ns", int64_t{0});
      rec.under_filled = j.value("under_filled", false);
      rec.endpoint_unreachable = j.value("endpoint_unreachable", false);
      have_header = true;
    } else if (type == "trace") {
      rec.traces.push_back(trace_from_json(j));
    } else {
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": unknown record type");
    }
  }
  if (!have_header) throw std::runtime_error(path + ": missing run header record");
  return rec;
}

double theoretical_al(std::span<const double> ar) {
  double al = 1.0;
  double prefix = 1.0;
  for (double r : ar) {
    if (std::isnan(r)) r = 0.0;
    if (r < 0.0 || r > 1.0) {
      throw std::invalid_argument("acceptance rate out of [0,1]: " + std::to_string(r));
    }
    prefix *= r;
    al += prefix;
  }
  return al;
}

std::vector<int> decode_step_tokens(const RequestTrace& trace, StepFilter filter) {
  std::vector<int> steps;
  bool seen_first = false;
  for (const ChunkEvent& e : trace.events) {
    if (e.new_tokens < 1) continue;  // keep-alives never count as steps
    if (!seen_first) {
      seen_first = true;  // prefill emission
      continue;
    }
    if (filter.exclude_terminal && e.truncated) continue;
    steps.push_back(e.new_tokens);
  }
  return steps;
}

double empirical_al(std::span<const RequestTrace> traces, StepFilter filter) {
  int64_t n = 0;
  double sum = 0;
  for (const RequestTrace& t : traces) {
    if (t.status != TraceStatus::ok) continue;
    for (int tok : decode_step_tokens(t, filter)) {
      sum += tok;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("no decode steps after exclusions");
  return sum / static_cast<double>(n);
}

ARVector conditional_ars(std::span<const RequestTrace> traces, int gamma, StepFilter filter) {
  if (gamma < 1) throw std::invalid_argument("gamma must be >= 1");
  // reached[i] = number of steps emitting at least i+1 tokens
  std::vector<int64_t> reached(static_cast<size_t>(gamma) + 1, 0);
  for (const RequestTrace& t : traces) {
    if (t.status != TraceStatus::ok) continue;
    for (int tok : decode_step_tokens(t, filter)) {
      int depth = std::min(tok, gamma + 1);
      for (int i = 0; i < depth; ++i) ++reached[static_cast<size_t>(i)];
    }
  }
  ARVector v;
  v.gamma = gamma;
  for (int i = 0; i < gamma; ++i) {
    int64_t denom = reached[static_cast<size_t>(i)];
    int64_t numer = reached[static_cast<size_t>(i) + 1];
    v.support.push_back(denom);
    v.ar.push_back(denom == 0 ? kNaN : static_cast<double>(numer) / static_cast<double>(denom));
  }
  return v;
}

TraceLatencies latency_stats(std::span<const RequestTrace> traces) {
  std::vector<double> ttft, step, request;
  int64_t ok = 0;
  for (const RequestTrace& t : traces) {
    if (t.status != TraceStatus::ok || t.events.empty()) continue;
    ++ok;
    int64_t prev_token_t = -1;
    for (const ChunkEvent& e : t.events) {
      if (e.new_tokens < 1) continue;
      if (prev_token_t < 0) {
        ttft.push_back(ns_to_ms(e.t_ns - t.dispatch_ns));
      } else {
        step.push_back(ns_to_ms(e.t_ns - prev_token_t));
      }
      prev_token_t = e.t_ns;
    }
    request.push_back(ns_to_ms(t.events.back().t_ns - t.dispatch_ns));
  }
  if (ok == 0) throw std::invalid_argument("no ok traces");
  TraceLatencies out;
  out.ttft = stats_from_ms(std::move(ttft));
  out.step = stats_from_ms(std::move(step));
  out.request = stats_from_ms(std::move(request));
  return out;
}

TpsResult tps(std::span<const RequestTrace> traces, int64_t wall_start_ns, int64_t wall_end_ns,
              int concurrency) {
  (void)concurrency;
  if (wall_end_ns <= wall_start_ns) throw std::invalid_argument("zero wall time");
  int64_t ok = 0;
  for (const RequestTrace& t : traces) {
    if (t.status == TraceStatus::ok) ++ok;
  }
  if (ok == 0) throw std::invalid_argument("no ok traces");

  TpsResult out;
  const int64_t wall = wall_end_ns - wall_start_ns;
  const int64_t trim = wall / 20;  // 5% at each end
  const int64_t lo = wall_start_ns + trim;
  const int64_t hi = wall_end_ns - trim;

  int64_t window_tokens = 0;
  for (const RequestTrace& t : traces) {
    if (t.status != TraceStatus::ok) continue;
    for (const ChunkEvent& e : t.events) {
      if (e.new_tokens >= 1 && e.t_ns >= lo && e.t_ns <= hi) window_tokens += e.new_tokens;
    }
  }
  if (trim > 0 && window_tokens > 0) {
    out.output_tps = static_cast<double>(window_tokens) / (static_cast<double>(hi - lo) / 1e9);
    out.window_trimmed = true;
  } else {
    int64_t total = 0;
    for (const RequestTrace& t : traces) {
      if (t.status == TraceStatus::ok) total += t.total_output_tokens;
    }
    out.output_tps = static_cast<double>(total) / (static_cast<double>(wall) / 1e9);
    out.window_trimmed = false;
  }

  double sum_rate = 0;
  int64_t rated = 0;
  for (const RequestTrace& t : traces) {
    if (t.status != TraceStatus::ok) continue;
    int64_t first_t = -1, last_t = -1, decode_tokens = 0;
    for (const ChunkEvent& e : t.events) {
      if (e.new_tokens < 1) continue;
      if (first_t < 0) {
        first_t = e.t_ns;
      } else {
        decode_tokens += e.new_tokens;
      }
      last_t = e.t_ns;
    }
    if (first_t >= 0 && last_t > first_t && decode_tokens > 0) {
      sum_rate += static_cast<double>(decode_tokens) / (static_cast<double>(last_t - first_t) / 1e9);
      ++rated;
    }
  }
  out.user_tps = rated > 0 ? sum_rate / static_cast<double>(rated) : 0.0;
  return out;
}

std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points) {
  if (points.empty()) return {};
  // collapse exact duplicates, keeping the lowest concurrency
  std::sort(points.begin(), points.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    if (a.user_tps != b.user_tps) return a.user_tps < b.user_tps;
    if (a.output_tps != b.output_tps) return a.output_tps < b.output_tps;
    return a.concurrency < b.concurrency;
  });
  points.erase(std::unique(points.begin(), points.end(),
                           [](const ParetoPoint& a, const ParetoPoint& b) {
                             return a.user_tps == b.user_tps && a.output_tps == b.output_tps;
                           }),
               points.end());

  // sweep from the highest user_tps down; a point survives iff its
  // output_tps strictly exceeds everything to its right
  std::vector<ParetoPoint> frontier;
  double best_output = -std::numeric_limits<double>::infinity();
  for (auto it = points.rbegin(); it != points.rend(); ++it) {
    if (it->output_tps > best_output) {
      frontier.push_back(*it);
      best_output = it->output_tps;
    }
  }
  std::reverse(frontier.begin(), frontier.end());
  return frontier;
}

SpeedupEstimate speedup_proxy(double t_ar_ms, double t_sd_ms, double al) {
  if (t_ar_ms <= 0 || t_sd_ms <= 0 || al <= 0) {
    throw std::invalid_argument("speedup_proxy requires positive inputs");
  }
  SpeedupEstimate e;
  e.t_ar_ms = t_ar_ms;
  e.t_sd_ms = t_sd_ms;
  e.al = al;
  e.speedup = t_ar_ms * al / t_sd_ms;
  return e;
}

VocabCoverage vocab_coverage(const TokenCorpus& reference, const TokenCorpus& test,
                             int64_t K) {
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  std::unordered_map<int, int64_t> freq;
  int64_t ref_total = 0;
  for (const TokenRecord& r : reference) {
    for (int t : r.tokens) {
      ++freq[t];
      ++ref_total;
    }
  }
  if (ref_total == 0) throw std::invalid_argument("reference corpus is empty");

  std::vector<std::pair<int, int64_t>> by_freq(freq.begin(), freq.end());
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;  // ties: lower token id
  });
  std::unordered_set<int> vocab;
  for (size_t i = 0; i < by_freq.size() && static_cast<int64_t>(i) < K; ++i) {
    vocab.insert(by_freq[i].first);
  }

  int64_t covered = 0, total = 0;
  std::map<std::string, std::pair<int64_t, int64_t>> per_cat;  // covered, total
  for (const TokenRecord& r : test) {
    for (int t : r.tokens) {
      bool in = vocab.count(t) > 0;
      ++total;
      covered += in;
      auto& c = per_cat[r.category];
      ++c.second;
      c.first += in;
    }
  }
  if (total == 0) throw std::invalid_argument("test corpus is empty");

  VocabCoverage out;
  out.k = K;
  out.covered_fraction = static_cast<double>(covered) / static_cast<double>(total);
  for (const auto& [cat, counts] : per_cat) {
    out.per_category[cat] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return out;
}

MetricsReport compute_report(const RunRecord& run, int gamma, StepFilter filter) {
  MetricsReport r;
  r.concurrency = run.concurrency;
  r.gamma = gamma;
  for (const RequestTrace& t : run.traces) {
    if (t.status == TraceStatus::ok) {
      ++r.ok_traces;
    } else {
      ++r.failed_traces;
    }
    r.n_steps += static_cast<int64_t>(decode_step_tokens(t, filter).size());
  }
  r.empirical_al = empirical_al(run.traces, filter);
  if (gamma >= 1) {
    r.ar_vector = conditional_ars(run.traces, gamma, filter);
    r.theoretical_al = theoretical_al(r.ar_vector.ar);
  } else {
    r.theoretical_al = 1.0;
  }
  TraceLatencies lat = latency_stats(run.traces);
  r.ttft = lat.ttft;
  r.step_latency = lat.step;
  r.request_latency = lat.request;
  TpsResult t = tps(run.traces, run.wall_start_ns, run.wall_end_ns, run.concurrency);
  r.user_tps = t.user_tps;
  r.output_tps = t.output_tps;
  r.tps_window_trimmed = t.window_trimmed;
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json ar = nlohmann::json::array();
  for (double v : r.ar_vector.ar) {
    if (std::isnan(v)) {
      ar.push_back(nullptr);
    } else {
      ar.push_back(v);
    }
  }
  return {{"concurrency", r.concurrency},
          {"gamma", r.gamma},
          {"n_steps", r.n_steps},
          {"empirical_al", r.empirical_al},
          {"theoretical_al", r.theoretical_al},
          {"ar", ar},
          {"ar_support", r.ar_vector.support},
          {"ttft_ms", latency_to_json(r.ttft)},
          {"step_latency_ms", latency_to_json(r.step_latency)},
          {"request_latency_ms", latency_to_json(r.request_latency)},
          {"user_tps", r.user_tps},
          {"output_tps", r.output_tps},
          {"tps_window_trimmed", r.tps_window_trimmed},
          {"ok_traces", r.ok_traces},
          {"failed_traces", r.failed_traces}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.concurrency = j.value("concurrency", 1);
  r.gamma = j.value("gamma", 0);
  r.n_steps = j.value("n_steps", int64_t{0});
  r.empirical_al = j.value("empirical_al", 0.0);
  r.theoretical_al = j.value("theoretical_al", 0.0);
  r.ar_vector.gamma = r.gamma;
  for (const auto& v : j.value("ar", nlohmann::json::array())) {
    r.ar_vector.ar.push_back(v.is_null() ? kNaN : v.get<double>());
  }
  r.ar_vector.support = j.value("ar_support", std::vector<int64_t>{});
  r.ttft = latency_from_json(j.value("ttft_ms", nlohmann::json::object()));
  r.step_latency = latency_from_json(j.value("step_latency_ms", nlohmann::json::object()));
  r.request_latency = latency_from_json(j.value("request_latency_ms", nlohmann::json::object()));
  r.user_tps = j.value("user_tps", 0.0);
  r.output_tps = j.value("output_tps", 0.0);
  r.tps_window_trimmed = j.value("tps_window_trimmed", true);
  r.ok_traces = j.value("ok_traces", int64_t{0});
  r.failed_traces = j.value("failed_traces", int64_t{0});
  return r;
}

std::string pareto_csv(const std::vector<ParetoPoint>& points,
                       const std::vector<ParetoPoint>& frontier) {
  auto on_frontier = [&](const ParetoPoint& p) {
    for (const ParetoPoint& f : frontier) {
      if (f.user_tps == p.user_tps && f.output_tps == p.output_tps) return true;
    }
    return false;
  };
  std::ostringstream out;
  out.precision(10);
  out << "concurrency,user_tps,output_tps,on_frontier\n";
  for (const ParetoPoint& p : points) {
    out << p.concurrency << ',' << p.user_tps << ',' << p.output_tps << ','
        << (on_frontier(p) ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace speedkit
