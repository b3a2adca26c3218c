// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#include "speedkit/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>

#include "speedkit/http.hpp"
#include "speedkit/util.hpp"

namespace speedkit {

namespace {

struct Endpoint {
  std::string host;
  int port = 80;
  std::string path;
  bool chat = false;
};

Endpoint parse_endpoint(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    throw std::invalid_argument("endpoint must start with http:// (got " + url + ")");
  }
  std::string rest = url.substr(scheme.size());
  size_t slash = rest.find('/');
  Endpoint ep;
  ep.path = slash == std::string::npos ? "/v1/completions" : rest.substr(slash);
  std::string hostport = rest.substr(0, slash);
  size_t colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    ep.host = hostport;
  } else {
    ep.host = hostport.substr(0, colon);
    ep.port = std::stoi(hostport.substr(colon + 1));
  }
  if (ep.host.empty()) throw std::invalid_argument("endpoint has no host: " + url);
  ep.chat = ep.path.find("/chat/") != std::string::npos;
  return ep;
}

}  // namespace

void BenchConfig::validate() const {
  if (endpoint.empty()) throw std::invalid_argument("endpoint must be set");
  parse_endpoint(endpoint);
  if (concurrency_levels.empty()) throw std::invalid_argument("concurrency_levels must be non-empty");
  int prev = 0;
  for (int c : concurrency_levels) {
    if (c < 1) throw std::invalid_argument("concurrency levels must be >= 1");
    if (c < prev) throw std::invalid_argument("concurrency_levels must be sorted ascending");
    prev = c;
  }
  if (draft_length < 0) throw std::invalid_argument("draft_length must be >= 0");
  if (temperature < 0) throw std::invalid_argument("temperature must be >= 0");
  if (max_output_tokens < 1) throw std::invalid_argument("max_output_tokens must be >= 1");
  if (request_timeout <= 0) throw std::invalid_argument("request_timeout must be > 0");
  if (dispatch_stagger_us < 0) throw std::invalid_argument("dispatch_stagger_us must be >= 0");
}

BenchConfig bench_config_from_json(const nlohmann::json& j) {
  static const char* known[] = {"endpoint",       "concurrency_levels", "draft_length",
                                "temperature",    "max_output_tokens",  "send_token_ids",
                                "request_timeout", "warmup_requests",    "model",
                                "tokenizer_id",   "dispatch_stagger_us"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw std::invalid_argument("unknown bench config field: " + it.key());
  }
  for (const char* required : {"endpoint", "concurrency_levels", "max_output_tokens"}) {
    if (!j.contains(required)) {
      throw std::invalid_argument(std::string("bench config missing field: ") + required);
    }
  }
  BenchConfig cfg;
  cfg.endpoint = j["endpoint"].get<std::string>();
  cfg.concurrency_levels = j["concurrency_levels"].get<std::vector<int>>();
  cfg.draft_length = j.value("draft_length", cfg.draft_length);
  cfg.temperature = j.value("temperature", cfg.temperature);
  cfg.max_output_tokens = j["max_output_tokens"].get<int>();
  cfg.send_token_ids = j.value("send_token_ids", cfg.send_token_ids);
  cfg.request_timeout = j.value("request_timeout", cfg.request_timeout);
  cfg.warmup_requests = j.value("warmup_requests", cfg.warmup_requests);
  cfg.model = j.value("model", cfg.model);
  cfg.tokenizer_id = j.value("tokenizer_id", cfg.tokenizer_id);
  cfg.dispatch_stagger_us = j.value("dispatch_stagger_us", cfg.dispatch_stagger_us);
  cfg.validate();
  return cfg;
}

nlohmann::json bench_config_to_json(const BenchConfig& cfg) {
  return {{"endpoint", cfg.endpoint},
          {"concurrency_levels", cfg.concurrency_levels},
          {"draft_length", cfg.draft_length},
          {"temperature", cfg.temperature},
          {"max_output_tokens", cfg.max_output_tokens},
          {"send_token_ids", cfg.send_token_ids},
          {"request_timeout", cfg.request_timeout},
          {"warmup_requests", cfg.warmup_requests},
          {"model", cfg.model},
          {"tokenizer_id", cfg.tokenizer_id},
          {"dispatch_stagger_us", cfg.dispatch_stagger_us}};
}

std::vector<WorkloadItem> make_workload(std::span<const Sample> samples,
                                        const TokenizerProvider& tok) {
  std::vector<WorkloadItem> items;
  items.reserve(samples.size());
  for (const Sample& s : samples) {
    WorkloadItem it;
    it.sample_id = s.id;
    it.text = flatten_text(s);
    it.token_ids = tok.encode(it.text);
    it.tag = s.category;
    items.push_back(std::move(it));
  }
  return items;
}

ParsedChunk parse_stream_chunk(std::string_view payload, const TokenizerProvider* fallback) {
  ParsedChunk out;
  if (payload == "[DONE]") {
    out.is_final = true;
    return out;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(payload);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed stream chunk: ") + e.what());
  }
  if (j.contains("usage") && j["usage"].is_object()) {
    out.usage_completion_tokens = j["usage"].value("completion_tokens", int64_t{-1});
  }
  std::string content;
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& c = j["choices"][0];
    if (c.contains("finish_reason") && !c["finish_reason"].is_null()) {
      out.has_finish_reason = true;
      out.finish_reason = c["finish_reason"].get<std::string>();
    }
    if (c.contains("delta") && c["delta"].is_object()) {
      content = c["delta"].value("content", "");
    } else if (c.contains("text") && c["text"].is_string()) {
      content = c["text"].get<std::string>();
    }
  }
  if (j.contains("new_tokens") && j["new_tokens"].is_number_integer()) {
    out.new_tokens = j["new_tokens"].get<int>();
  } else if (!content.empty()) {
    if (!fallback) throw std::runtime_error("chunk lacks a token count and no fallback tokenizer set");
    out.new_tokens = static_cast<int>(fallback->count(content));
  }
  return out;
}

std::string build_request_body(const WorkloadItem& item, const BenchConfig& cfg,
                               const std::string& request_id) {
  Endpoint ep = parse_endpoint(cfg.endpoint);
  nlohmann::json j;
  j["model"] = cfg.model;
  j["stream"] = true;
  j["max_tokens"] = cfg.max_output_tokens;
  j["temperature"] = cfg.temperature;
  j["request_id"] = request_id;
  if (!item.tag.empty()) j["workload_tag"] = item.tag;
  if (cfg.send_token_ids) {
    j["prompt_token_ids"] = item.token_ids;
  } else if (ep.chat) {
    j["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", item.text}}});
  } else {
    j["prompt"] = item.text;
  }
  return j.dump();
}

RequestTrace dispatch_request(const WorkloadItem& item, const BenchConfig& cfg,
                              const std::string& request_id,
                              const TokenizerProvider* fallback) {
  if (item.text.empty() && item.token_ids.empty()) {
    throw std::invalid_argument("prompt is empty for sample " + item.sample_id);
  }
  Endpoint ep = parse_endpoint(cfg.endpoint);

  RequestTrace trace;
  trace.request_id = request_id;
  trace.sample_id = item.sample_id;

  httplib::Client cli(ep.host, ep.port);
  cli.set_tcp_nodelay(true);
  cli.set_connection_timeout(std::chrono::milliseconds(
      static_cast<int64_t>(std::min(cfg.request_timeout, 10.0) * 1000)));
  // httplib's read timeout fires per recv, i.e. on stream inactivity
  auto timeout_ms = static_cast<int64_t>(cfg.request_timeout * 1000);
  cli.set_read_timeout(std::chrono::milliseconds(timeout_ms));

  httplib::Request req;
  req.method = "POST";
  req.path = ep.path;
  req.set_header("Content-Type", "application/json");
  req.set_header("Accept", "text/event-stream");
  req.body = build_request_body(item, cfg, request_id);

  std::string buffer;
  bool done = false;
  bool bad_status = false;
  int http_status = 0;
  std::string parse_error;

  req.response_handler = [&](const httplib::Response& res) {
    http_status = res.status;
    if (res.status != 200) bad_status = true;
    return true;
  };
  req.content_receiver = [&](const char* data, size_t n, uint64_t, uint64_t) {
    if (bad_status) return true;  // keep body for the error message
    buffer.append(data, n);
    size_t start = 0;
    while (true) {
      size_t sep = buffer.find("\n\n", start);
      if (sep == std::string::npos) break;
      int64_t t = now_ns();
      std::string_view event(buffer.data() + start, sep - start);
      start = sep + 2;
      // SSE framing: concatenate the data: lines of this event
      std::string payload;
      size_t ls = 0;
      while (ls < event.size()) {
        size_t le = event.find('\n', ls);
        if (le == std::string_view::npos) le = event.size();
        std::string_view line = event.substr(ls, le - ls);
        if (line.rfind("data: ", 0) == 0) {
          if (!payload.empty()) payload.push_back('\n');
          payload.append(line.substr(6));
        }
        ls = le + 1;
      }
      if (payload.empty()) continue;
      ParsedChunk chunk;
      try {
        chunk = parse_stream_chunk(payload, fallback);
      } catch (const std::exception& e) {
        parse_error = e.what();
        return false;
      }
      if (chunk.is_final) {
        done = true;
        if (!trace.events.empty()) trace.events.back().is_final = true;
        continue;
      }
      if (chunk.usage_completion_tokens >= 0) {
        trace.reported_completion_tokens = chunk.usage_completion_tokens;
      }
      ChunkEvent e;
      e.t_ns = t;
      e.new_tokens = chunk.new_tokens;
      e.truncated = chunk.has_finish_reason && chunk.finish_reason == "length";
      trace.events.push_back(e);
    }
    buffer.erase(0, start);
    return true;
  };

  trace.dispatch_ns = now_ns();
  httplib::Response res;
  httplib::Error err = httplib::Error::Success;
  bool sent = cli.send(req, res, err);
  int64_t finished_ns = now_ns();

  for (const ChunkEvent& e : trace.events) trace.total_output_tokens += e.new_tokens;

  if (bad_status) {
    trace.status = TraceStatus::error;
    trace.error = "http status " + std::to_string(http_status);
    return trace;
  }
  if (!parse_error.empty()) {
    trace.status = TraceStatus::error;
    trace.error = parse_error;
    return trace;
  }
  if (done && !trace.events.empty()) {
    trace.status = TraceStatus::ok;
    return trace;
  }
  // classify the failure: if we sat idle for the full timeout, it is one
  int64_t last_activity = trace.events.empty() ? trace.dispatch_ns : trace.events.back().t_ns;
  bool idle_timeout = finished_ns - last_activity >= timeout_ms * 1'000'000 * 9 / 10;
  if (!sent && (err == httplib::Error::Connection || err == httplib::Error::ConnectionTimeout)) {
    trace.status = TraceStatus::error;
    trace.error = "connect: " + httplib::to_string(err);
  } else if (idle_timeout) {
    trace.status = TraceStatus::timeout;
    trace.error = "stream inactivity timeout";
  } else {
    trace.status = TraceStatus::error;
    trace.error = sent ? "stream ended without [DONE]" : httplib::to_string(err);
  }
  return trace;
}

std::vector<RunRecord> run_benchmark(const BenchConfig& cfg,
                                     std::span<const WorkloadItem> workload) {
  cfg.validate();
  if (workload.empty()) throw std::invalid_argument("empty workload");
  int max_level = cfg.concurrency_levels.back();
  if (workload.size() < static_cast<size_t>(max_level)) {
    throw std::invalid_argument("workload size (" + std::to_string(workload.size()) +
                                ") must be >= max concurrency level (" +
                                std::to_string(max_level) + ")");
  }
  raise_nofile_limit(4096);
  TokenizerPtr fallback = make_tokenizer(cfg.tokenizer_id);

  // each trace is owned by exactly one worker thread and moved to the
  // shared vector only after completion
  auto closed_loop = [&](int conc, size_t count, const std::string& id_prefix) {
    std::vector<std::vector<RequestTrace>> per_worker(static_cast<size_t>(conc));
    std::atomic<size_t> next{0};
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(conc));
    for (int w = 0; w < conc; ++w) {
      workers.emplace_back([&, w] {
        if (cfg.dispatch_stagger_us > 0 && w > 0) {
          std::this_thread::sleep_for(std::chrono::microseconds(
              static_cast<int64_t>(w) * cfg.dispatch_stagger_us));
        }
        while (true) {
          size_t i = next.fetch_add(1);
          if (i >= count) break;
          const WorkloadItem& item = workload[i % workload.size()];
          per_worker[static_cast<size_t>(w)].push_back(
              dispatch_request(item, cfg, id_prefix + std::to_string(i), fallback.get()));
        }
      });
    }
    for (auto& t : workers) t.join();
    std::vector<RequestTrace> traces;
    for (auto& v : per_worker) {
      for (auto& tr : v) traces.push_back(std::move(tr));
    }
    return traces;
  };

  std::vector<RunRecord> records;
  for (int conc : cfg.concurrency_levels) {
    size_t warmup = cfg.warmup_requests >= 0 ? static_cast<size_t>(cfg.warmup_requests)
                                             : 2 * static_cast<size_t>(conc);
    if (warmup > 0) {
      closed_loop(conc, warmup, "warm-" + std::to_string(conc) + "-");
    }

    RunRecord rec;
    rec.config = bench_config_to_json(cfg);
    rec.concurrency = conc;
    rec.under_filled = workload.size() < static_cast<size_t>(conc);
    rec.wall_start_ns = now_ns();
    rec.traces = closed_loop(conc, workload.size(), "req-" + std::to_string(conc) + "-");
    rec.wall_end_ns = now_ns();

    bool any_ok = false;
    bool all_connect_failures = !rec.traces.empty();
    for (const RequestTrace& t : rec.traces) {
      any_ok = any_ok || t.status == TraceStatus::ok;
      all_connect_failures =
          all_connect_failures && t.status == TraceStatus::error && t.error.rfind("connect:", 0) == 0;
    }
    rec.endpoint_unreachable = all_connect_failures && !any_ok;
    records.push_back(std::move(rec));
    if (records.back().endpoint_unreachable) break;  // abort sweep, keep partial records
  }
  return records;
}

}  // namespace speedkit
