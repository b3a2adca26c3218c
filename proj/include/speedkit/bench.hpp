// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "speedkit/dataset.hpp"
#include "speedkit/tokenizer.hpp"
#include "speedkit/trace.hpp"

namespace speedkit {

struct BenchConfig {
  std::string endpoint;                // e.g. http://127.0.0.1:8080/v1/completions
  std::vector<int> concurrency_levels{1};
  int draft_length = 0;                // gamma; 0 = SD disabled (metadata only)
  double temperature = 0.0;
  int max_output_tokens = 128;
  bool send_token_ids = false;
  double request_timeout = 30.0;       // seconds of stream inactivity
  int warmup_requests = -1;            // -1 = 2x the concurrency level
  std::string model = "speedkit-mock";
  std::string tokenizer_id = "byte";
  int dispatch_stagger_us = 200;       // initial per-slot ramp spacing

  void validate() const;
};

BenchConfig bench_config_from_json(const nlohmann::json& j);
nlohmann::json bench_config_to_json(const BenchConfig& cfg);

struct WorkloadItem {
  std::string sample_id;
  std::string text;
  std::vector<int> token_ids;
  std::string tag;  // forwarded as workload_tag (entropy class / category)
};

std::vector<WorkloadItem> make_workload(std::span<const Sample> samples,
                                        const TokenizerProvider& tok);

struct ParsedChunk {
  int new_tokens = 0;
  bool is_final = false;  // [DONE] sentinel
  bool has_finish_reason = false;
  std::string finish_reason;
  int64_t usage_completion_tokens = -1;  // -1 = absent
};

/// Parses one SSE event payload (the part after "data: "). Token count is
/// taken from the chunk's new_tokens field when present, otherwise the
/// content delta is tokenized with `fallback` (required in that case).
ParsedChunk parse_stream_chunk(std::string_view payload, const TokenizerProvider* fallback);

/// Deterministic request body; identical (item, config, request_id) yield
/// byte-identical bodies.
std::string build_request_body(const WorkloadItem& item, const BenchConfig& cfg,
                               const std::string& request_id);

/// Opens one streaming request and records every chunk with a monotonic
/// timestamp. Per-chunk inactivity beyond request_timeout -> status
/// timeout; mid-stream connection loss -> status error, partial events
/// retained.
RequestTrace dispatch_request(const WorkloadItem& item, const BenchConfig& cfg,
                              const std::string& request_id,
                              const TokenizerProvider* fallback);

/// Closed-loop sweep: for each concurrency level, keeps exactly that many
/// requests in flight (a completion immediately dispatches the next) until
/// the workload is exhausted. Warmup traces are discarded.
std::vector<RunRecord> run_benchmark(const BenchConfig& cfg,
                                     std::span<const WorkloadItem> workload);

}  // namespace speedkit
