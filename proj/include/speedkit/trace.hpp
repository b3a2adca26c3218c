// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace speedkit {

enum class TraceStatus { ok, timeout, error };

const char* trace_status_name(TraceStatus s);
TraceStatus trace_status_from_string(const std::string& s);

/// One streamed response object. `truncated` marks a chunk whose final
/// verification step was cut by the token limit (finish_reason "length").
struct ChunkEvent {
  int64_t t_ns = 0;
  int new_tokens = 0;
  bool is_final = false;
  bool truncated = false;
};

struct RequestTrace {
  std::string request_id;
  std::string sample_id;
  int64_t dispatch_ns = 0;
  std::vector<ChunkEvent> events;
  int64_t total_output_tokens = 0;
  int64_t reported_completion_tokens = -1;  // endpoint usage field, -1 = absent
  TraceStatus status = TraceStatus::error;
  std::string error;
};

struct RunRecord {
  nlohmann::json config = nlohmann::json::object();  // BenchConfig snapshot
  int concurrency = 1;
  std::vector<RequestTrace> traces;
  int64_t wall_start_ns = 0;
  int64_t wall_end_ns = 0;
  bool under_filled = false;          // workload shorter than concurrency
  bool endpoint_unreachable = false;  // every trace failed to connect
};

nlohmann::json trace_to_json(const RequestTrace& t);
RequestTrace trace_from_json(const nlohmann::json& j);

/// Line-delimited: one run header record followed by one record per trace.
void save_run_record(const std::string& path, const RunRecord& rec);
RunRecord load_run_record(const std::string& path);

}  // namespace speedkit
