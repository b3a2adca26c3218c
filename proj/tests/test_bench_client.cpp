// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <thread>

#include "speedkit/bench.hpp"
#include "speedkit/http.hpp"
#include "speedkit/metrics.hpp"
#include "speedkit/mock_server.hpp"

using namespace speedkit;

namespace {

MockConfig fast_config() {
  MockConfig cfg;
  cfg.gamma = 3;
  cfg.ar_true = {0.8, 0.6, 0.4};
  cfg.t_base_ms = 1.0;
  cfg.t_per_token_ms = 0.0;
  cfg.output_tokens_target = 30;
  cfg.listener_threads = 8;
  return cfg;
}

WorkloadItem item(const std::string& id, const std::string& text) {
  WorkloadItem it;
  it.sample_id = id;
  it.text = text;
  return it;
}

}  // namespace

TEST_CASE("parse_stream_chunk reads the token-count field") {
  auto parsed = parse_stream_chunk(
      R"({"choices":[{"index":0,"delta":{"content":"abc"},"finish_reason":null}],"new_tokens":3})",
      nullptr);
  CHECK(parsed.new_tokens == 3);
  CHECK_FALSE(parsed.is_final);
  CHECK_FALSE(parsed.has_finish_reason);
}

TEST_CASE("parse_stream_chunk DONE sentinel") {
  auto parsed = parse_stream_chunk("[DONE]", nullptr);
  CHECK(parsed.new_tokens == 0);
  CHECK(parsed.is_final);
}

TEST_CASE("parse_stream_chunk falls back to tokenizing the delta") {
  auto ws = make_whitespace_tokenizer();
  auto parsed = parse_stream_chunk(
      R"({"choices":[{"index":0,"delta":{"content":"a b c"},"finish_reason":null}]})", ws.get());
  CHECK(parsed.new_tokens == 3);

  // completions shape
  auto parsed2 =
      parse_stream_chunk(R"({"choices":[{"index":0,"text":"x y","finish_reason":"stop"}]})", ws.get());
  CHECK(parsed2.new_tokens == 2);
  CHECK(parsed2.finish_reason == "stop");

  CHECK_THROWS(parse_stream_chunk(R"({"choices":[{"delta":{"content":"a"}}]})", nullptr));
  CHECK_THROWS(parse_stream_chunk("{broken", nullptr));
}

TEST_CASE("parse_stream_chunk surfaces usage totals") {
  auto parsed = parse_stream_chunk(
      R"({"choices":[{"index":0,"delta":{"content":"a"},"finish_reason":"length"}],"new_tokens":1,"usage":{"completion_tokens":64}})",
      nullptr);
  CHECK(parsed.usage_completion_tokens == 64);
  CHECK(parsed.finish_reason == "length");
}

TEST_CASE("build_request_body is deterministic and honors token ids") {
  BenchConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/v1/completions";
  cfg.max_output_tokens = 16;
  cfg.send_token_ids = true;
  WorkloadItem it = item("s", "ab");
  it.token_ids = {97, 98};
  it.tag = "low";
  std::string a = build_request_body(it, cfg, "r1");
  std::string b = build_request_body(it, cfg, "r1");
  CHECK(a == b);
  nlohmann::json j = nlohmann::json::parse(a);
  CHECK(j["prompt_token_ids"] == nlohmann::json({97, 98}));
  CHECK(!j.contains("prompt"));
  CHECK(j["workload_tag"] == "low");
  CHECK(j["request_id"] == "r1");

  cfg.send_token_ids = false;
  nlohmann::json plain = nlohmann::json::parse(build_request_body(it, cfg, "r1"));
  CHECK(plain["prompt"] == "ab");

  cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  nlohmann::json chat = nlohmann::json::parse(build_request_body(it, cfg, "r1"));
  CHECK(chat["messages"][0]["content"] == "ab");
}

TEST_CASE("bench config validation and strict parsing") {
  nlohmann::json good = {{"endpoint", "http://127.0.0.1:9/v1/completions"},
                         {"concurrency_levels", {1, 2}},
                         {"max_output_tokens", 8}};
  BenchConfig cfg = bench_config_from_json(good);
  CHECK(cfg.concurrency_levels == std::vector<int>{1, 2});

  nlohmann::json missing = good;
  missing.erase("endpoint");
  CHECK_THROWS_WITH_AS(bench_config_from_json(missing), doctest::Contains("endpoint"),
                       std::invalid_argument);

  nlohmann::json unknown = good;
  unknown["typo_field"] = 1;
  CHECK_THROWS_WITH_AS(bench_config_from_json(unknown), doctest::Contains("typo_field"),
                       std::invalid_argument);

  nlohmann::json unsorted = good;
  unsorted["concurrency_levels"] = {4, 2};
  CHECK_THROWS_AS(bench_config_from_json(unsorted), std::invalid_argument);
}

TEST_CASE("dispatch_request records chunk deltas against the mock") {
  MockServer server(fast_config());
  REQUIRE(server.start());
  BenchConfig cfg;
  cfg.endpoint = server.base_url() + "/v1/completions";
  cfg.max_output_tokens = 1000;
  auto tok = make_tokenizer(cfg.tokenizer_id);
  RequestTrace t = dispatch_request(item("s0", "hello"), cfg, "d0", tok.get());
  REQUIRE(t.status == TraceStatus::ok);
  CHECK(t.total_output_tokens == 30);
  CHECK(t.total_output_tokens == t.reported_completion_tokens);
  int finals = 0;
  for (const auto& e : t.events) finals += e.is_final;
  CHECK(finals == 1);
  CHECK(t.events.back().is_final);
}

TEST_CASE("empty prompt is rejected before dispatch") {
  BenchConfig cfg;
  cfg.endpoint = "http://127.0.0.1:9/v1/completions";
  auto tok = make_tokenizer(cfg.tokenizer_id);
  CHECK_THROWS_AS(dispatch_request(item("s", ""), cfg, "r", tok.get()), std::invalid_argument);
}

TEST_CASE("run_benchmark closed loop fills but never exceeds the level") {
  MockConfig mcfg = fast_config();
  mcfg.t_base_ms = 5.0;
  mcfg.output_tokens_target = 20;
  MockServer server(mcfg);
  REQUIRE(server.start());

  BenchConfig cfg;
  cfg.endpoint = server.base_url() + "/v1/completions";
  cfg.concurrency_levels = {2};
  cfg.max_output_tokens = 1000;
  cfg.warmup_requests = 0;

  std::vector<WorkloadItem> workload;
  for (int i = 0; i < 6; ++i) workload.push_back(item("s" + std::to_string(i), "prompt"));

  auto records = run_benchmark(cfg, workload);
  REQUIRE(records.size() == 1);
  const RunRecord& rec = records[0];
  CHECK(rec.concurrency == 2);
  CHECK(rec.traces.size() == 6);
  for (const auto& t : rec.traces) CHECK(t.status == TraceStatus::ok);
  CHECK(server.peak_in_flight() == 2);
  CHECK(server.in_flight() == 0);
  CHECK(rec.wall_end_ns > rec.wall_start_ns);
  // expected decode steps per trace: ceil((target-1)/AL) on average
  MetricsReport report = compute_report(rec, 3);
  CHECK(report.empirical_al > 1.0);
  CHECK(report.empirical_al <= 4.0);
}

TEST_CASE("run_benchmark rejects bad workloads") {
  BenchConfig cfg;
  cfg.endpoint = "http://127.0.0.1:9/v1/completions";
  cfg.concurrency_levels = {2};
  CHECK_THROWS_WITH_AS(run_benchmark(cfg, {}), doctest::Contains("empty"), std::invalid_argument);
  std::vector<WorkloadItem> one{item("s", "x")};
  CHECK_THROWS_AS(run_benchmark(cfg, one), std::invalid_argument);
}

TEST_CASE("unreachable endpoint aborts the sweep with flagged records") {
  BenchConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/v1/completions";  // nothing listens here
  cfg.concurrency_levels = {1, 2};
  cfg.warmup_requests = 0;
  cfg.request_timeout = 2.0;
  std::vector<WorkloadItem> workload{item("a", "x"), item("b", "y")};
  auto records = run_benchmark(cfg, workload);
  REQUIRE(records.size() == 1);  // second level skipped
  CHECK(records[0].endpoint_unreachable);
  for (const auto& t : records[0].traces) {
    CHECK(t.status == TraceStatus::error);
    CHECK(t.error.rfind("connect:", 0) == 0);
  }
}

TEST_CASE("stream inactivity becomes a timeout with events retained") {
  httplib::Server stall;
  stall.Post("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_chunked_content_provider("text/event-stream", [](size_t, httplib::DataSink& sink) {
      std::string one =
          "data: {\"choices\":[{\"index\":0,\"text\":\"x\",\"finish_reason\":null}],\"new_tokens\":1}\n\n";
      sink.write(one.data(), one.size());
      std::this_thread::sleep_for(std::chrono::seconds(3));
      sink.done();
      return true;
    });
  });
  int port = stall.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { stall.listen_after_bind(); });
  stall.wait_until_ready();

  BenchConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/completions";
  cfg.request_timeout = 0.3;
  auto tok = make_tokenizer(cfg.tokenizer_id);
  RequestTrace t = dispatch_request(item("s", "x"), cfg, "r", tok.get());
  CHECK(t.status == TraceStatus::timeout);
  CHECK(t.events.size() == 1);
  CHECK(t.total_output_tokens == 1);

  stall.stop();
  th.join();
}

TEST_CASE("mid-stream connection loss is an error with partial events") {
  httplib::Server flaky;
  flaky.Post("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_chunked_content_provider("text/event-stream", [](size_t, httplib::DataSink& sink) {
      std::string one =
          "data: {\"choices\":[{\"index\":0,\"text\":\"y\",\"finish_reason\":null}],\"new_tokens\":2}\n\n";
      sink.write(one.data(), one.size());
      return false;  // abort without [DONE]
    });
  });
  int port = flaky.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { flaky.listen_after_bind(); });
  flaky.wait_until_ready();

  BenchConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/completions";
  cfg.request_timeout = 5.0;
  auto tok = make_tokenizer(cfg.tokenizer_id);
  RequestTrace t = dispatch_request(item("s", "x"), cfg, "r", tok.get());
  CHECK(t.status == TraceStatus::error);
  CHECK(t.events.size() == 1);
  CHECK(t.events[0].new_tokens == 2);

  flaky.stop();
  th.join();
}

TEST_CASE("http error statuses surface as trace errors") {
  httplib::Server deny;
  deny.Post("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("overloaded", "text/plain");
  });
  int port = deny.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { deny.listen_after_bind(); });
  deny.wait_until_ready();

  BenchConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/completions";
  auto tok = make_tokenizer(cfg.tokenizer_id);
  RequestTrace t = dispatch_request(item("s", "x"), cfg, "r", tok.get());
  CHECK(t.status == TraceStatus::error);
  CHECK(t.error.find("503") != std::string::npos);

  deny.stop();
  th.join();
}

TEST_CASE("pre-tokenized dispatch round trips through the mock") {
  MockConfig mcfg = fast_config();
  mcfg.content_mode = MockConfig::ContentMode::echo;
  MockServer server(mcfg);
  REQUIRE(server.start());

  BenchConfig cfg;
  cfg.endpoint = server.base_url() + "/v1/completions";
  cfg.send_token_ids = true;
  cfg.max_output_tokens = 1000;
  auto tok = make_tokenizer(cfg.tokenizer_id);

  WorkloadItem it = item("s", "abcd");
  it.token_ids = tok->encode(it.text);
  RequestTrace t = dispatch_request(it, cfg, "tokid", tok.get());
  REQUIRE(t.status == TraceStatus::ok);
  CHECK(t.total_output_tokens == 30);
}

TEST_CASE("run records save and load") {
  MockServer server(fast_config());
  REQUIRE(server.start());
  BenchConfig cfg;
  cfg.endpoint = server.base_url() + "/v1/completions";
  cfg.concurrency_levels = {1};
  cfg.warmup_requests = 0;
  cfg.max_output_tokens = 64;
  std::vector<WorkloadItem> workload{item("a", "x"), item("b", "y")};
  auto records = run_benchmark(cfg, workload);
  REQUIRE(records.size() == 1);

  std::string path = "/tmp/speedkit_test_run.jsonl";
  save_run_record(path, records[0]);
  RunRecord back = load_run_record(path);
  CHECK(back.concurrency == records[0].concurrency);
  CHECK(back.traces.size() == records[0].traces.size());
  CHECK(back.traces[0].total_output_tokens == records[0].traces[0].total_output_tokens);
  CHECK(back.config == records[0].config);
  std::remove(path.c_str());
}
