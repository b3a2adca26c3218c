// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <fstream>
#include <thread>

#include "speedkit/curation.hpp"
#include "speedkit/dataset.hpp"
#include "speedkit/http.hpp"
#include "speedkit/metrics.hpp"
#include "speedkit/mock_server.hpp"
#include "speedkit/util.hpp"
#include "test_support.hpp"

using namespace speedkit;
using speedkit::testing::TempDir;

namespace {

const std::string kBin = SPEEDKIT_BIN;
const std::string kFixtures = SPEEDKIT_FIXTURES;

struct CmdResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cmd(const std::string& args) {
  CmdResult result;
  std::string full = kBin + " " + args + " 2>&1";
  FILE* pipe = popen(full.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, n);
  int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

nlohmann::json first_json_line(const std::string& path) {
  return nlohmann::json::parse(split_lines(read_text_file(path))[0]);
}

}  // namespace

TEST_CASE("curate on the orthogonal fixture reports a zero objective") {
  TempDir dir;
  auto res = run_cmd("curate --samples " + kFixtures + "/orth_samples.jsonl --embeddings " +
                     kFixtures + "/orth_embeddings.jsonl --k 3 --seed 7 --out " +
                     dir.file("sel.jsonl"));
  CAPTURE(res.output);
  REQUIRE(res.code == 0);
  CHECK(res.output.find("objective=0.000000") != std::string::npos);
  nlohmann::json record = first_json_line(dir.file("sel.jsonl"));
  CHECK(record["objective"].get<double>() == doctest::Approx(0.0));
  CHECK(record["method"] == "greedy_swap");
  CHECK(record["ids"].size() == 3);
}

TEST_CASE("curate greedy_swap beats random on the clustered fixture") {
  TempDir dir;
  std::string common = "curate --samples " + kFixtures + "/samples_small.jsonl --embeddings " +
                       kFixtures + "/embeddings_small.jsonl --k 4 --per-category --seed 3 --out ";
  auto gs = run_cmd(common + dir.file("gs.jsonl") + " --method greedy_swap");
  auto rnd = run_cmd(common + dir.file("rnd.jsonl") + " --method random");
  REQUIRE(gs.code == 0);
  REQUIRE(rnd.code == 0);

  auto mean_by_cat = [](const std::string& path) {
    std::map<std::string, double> means;
    for (const auto& line : split_lines(read_text_file(path))) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      means[j["category"].get<std::string>()] = j["mean_similarity"].get<double>();
    }
    return means;
  };
  auto gs_means = mean_by_cat(dir.file("gs.jsonl"));
  auto rnd_means = mean_by_cat(dir.file("rnd.jsonl"));
  REQUIRE(gs_means.size() == 3);
  for (const auto& [cat, gs_mean] : gs_means) {
    CHECK(gs_mean <= rnd_means.at(cat) + 1e-12);
  }
}

TEST_CASE("curate rejects k beyond the candidate pool") {
  TempDir dir;
  auto res = run_cmd("curate --samples " + kFixtures + "/orth_samples.jsonl --embeddings " +
                     kFixtures + "/orth_embeddings.jsonl --k 9 --out " + dir.file("x.jsonl"));
  CHECK(res.code == 1);
  CHECK(res.output.find("exceeds") != std::string::npos);
}

TEST_CASE("curate artifacts are byte-identical under a fixed seed") {
  TempDir dir;
  std::string common = "curate --samples " + kFixtures + "/samples_small.jsonl --embeddings " +
                       kFixtures + "/embeddings_small.jsonl --k 4 --per-category --seed 11 --out ";
  REQUIRE(run_cmd(common + dir.file("a.jsonl")).code == 0);
  REQUIRE(run_cmd(common + dir.file("b.jsonl")).code == 0);
  CHECK(read_text_file(dir.file("a.jsonl")) == read_text_file(dir.file("b.jsonl")));
}

TEST_CASE("bucket hits the exact ISL for both fallback tokenizers") {
  TempDir dir;
  for (const std::string tok_id : {std::string("byte"), std::string("whitespace")}) {
    std::string out = dir.file("bucketed_" + tok_id + ".jsonl");
    auto res = run_cmd("bucket --samples " + kFixtures + "/samples_small.jsonl --isl 64 --tokenizer " +
                       tok_id + " --out " + out);
    CAPTURE(res.output);
    REQUIRE(res.code == 0);
    auto tok = make_tokenizer(tok_id);
    auto samples = load_samples(out);
    REQUIRE(samples.size() == 24);
    for (const auto& s : samples) {
      CHECK(tok->count(flatten_text(s)) == 64);
      CHECK(s.extra["isl"] == 64);
      CHECK(s.extra["bucket_id"] == "isl64");
    }
  }
  // same text, different token counts before bucketing, both land exactly:
  // covered by the recount above; byte and whitespace disagree on raw counts
  auto samples = load_samples(kFixtures + "/samples_small.jsonl");
  auto byte_tok = make_tokenizer("byte");
  auto ws_tok = make_tokenizer("whitespace");
  CHECK(byte_tok->count(flatten_text(samples[0])) != ws_tok->count(flatten_text(samples[0])));
}

TEST_CASE("bucket rejects an ISL smaller than the pad suffix") {
  TempDir dir;
  auto res = run_cmd("bucket --samples " + kFixtures + "/samples_small.jsonl --isl 5 --out " +
                     dir.file("x.jsonl"));
  CHECK(res.code == 1);  // default suffix is 17 byte tokens
  CHECK(res.output.find("pad_suffix") != std::string::npos);
}

TEST_CASE("bench against the mock recovers the configured AL") {
  MockConfig mcfg;
  mcfg.gamma = 3;
  mcfg.ar_true = {0.8, 0.6, 0.4};
  mcfg.t_base_ms = 1.0;
  mcfg.t_per_token_ms = 0.0;
  mcfg.output_tokens_target = 120;
  mcfg.listener_threads = 12;
  MockServer server(mcfg);
  REQUIRE(server.start());

  TempDir dir;
  nlohmann::json config = {{"endpoint", server.base_url() + "/v1/completions"},
                           {"concurrency_levels", {4}},
                           {"draft_length", 3},
                           {"max_output_tokens", 1000},
                           {"warmup_requests", 2},
                           {"tokenizer_id", "byte"}};
  write_text_file_atomic(dir.file("bench.json"), config.dump());

  auto res = run_cmd("bench --config " + dir.file("bench.json") + " --workload " + kFixtures +
                     "/samples_small.jsonl --out " + dir.path() +
                     "/run --expect-al 2.472 --al-tol 0.08");
  CAPTURE(res.output);
  REQUIRE(res.code == 0);
  CHECK(res.output.find("AL check passed") != std::string::npos);

  MetricsReport report =
      report_from_json(nlohmann::json::parse(read_text_file(dir.path() + "/run/report_c4.json")));
  CHECK(report.concurrency == 4);
  CHECK(std::abs(report.empirical_al - 2.472) < 0.08);
  CHECK(report.n_steps > 500);
  // traces and separate wall-clock metadata exist
  CHECK(load_run_record(dir.path() + "/run/traces_c4.jsonl").traces.size() == 24);
  CHECK(nlohmann::json::parse(read_text_file(dir.path() + "/run/meta.json")).contains("started_unix_ms"));
}

TEST_CASE("bench --expect-al breach exits 3") {
  MockConfig mcfg;
  mcfg.gamma = 0;
  mcfg.ar_true = {};
  mcfg.t_base_ms = 1.0;
  mcfg.output_tokens_target = 20;
  MockServer server(mcfg);
  REQUIRE(server.start());

  TempDir dir;
  nlohmann::json config = {{"endpoint", server.base_url() + "/v1/completions"},
                           {"concurrency_levels", {2}},
                           {"max_output_tokens", 1000},
                           {"warmup_requests", 0}};
  write_text_file_atomic(dir.file("bench.json"), config.dump());
  auto res = run_cmd("bench --config " + dir.file("bench.json") + " --workload " + kFixtures +
                     "/samples_small.jsonl --out " + dir.path() + "/run --expect-al 3.0");
  CHECK(res.code == 3);
  CHECK(res.output.find("AL check failed") != std::string::npos);
}

TEST_CASE("bench config errors exit 1 naming the field") {
  TempDir dir;
  write_text_file_atomic(dir.file("bad.json"), R"({"concurrency_levels":[1],"max_output_tokens":4})");
  auto res = run_cmd("bench --config " + dir.file("bad.json") + " --workload " + kFixtures +
                     "/samples_small.jsonl --out " + dir.path() + "/run");
  CHECK(res.code == 1);
  CHECK(res.output.find("endpoint") != std::string::npos);
}

TEST_CASE("bench against an unreachable endpoint exits 2") {
  TempDir dir;
  nlohmann::json config = {{"endpoint", "http://127.0.0.1:1/v1/completions"},
                           {"concurrency_levels", {1}},
                           {"max_output_tokens", 4},
                           {"warmup_requests", 0}};
  write_text_file_atomic(dir.file("bench.json"), config.dump());
  auto res = run_cmd("bench --config " + dir.file("bench.json") + " --workload " + kFixtures +
                     "/samples_small.jsonl --out " + dir.path() + "/run");
  CHECK(res.code == 2);
}

TEST_CASE("analyze pareto matches the dominance fixture") {
  TempDir dir;
  std::string runs = dir.path() + "/runs";
  // fabricate three reports with the known fixture points
  struct P {
    int c;
    double user, output;
  };
  for (P p : {P{1, 10, 100}, P{2, 15, 120}, P{3, 20, 90}}) {
    MetricsReport r;
    r.concurrency = p.c;
    r.user_tps = p.user;
    r.output_tps = p.output;
    r.empirical_al = 1;
    r.theoretical_al = 1;
    write_text_file_atomic(runs + "/report_c" + std::to_string(p.c) + ".json",
                           report_to_json(r).dump());
  }
  auto res = run_cmd("analyze --runs " + runs + " --pareto --out " + dir.path() + "/an");
  CAPTURE(res.output);
  REQUIRE(res.code == 0);
  auto lines = split_lines(read_text_file(dir.path() + "/an/pareto.csv"));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "concurrency,user_tps,output_tps,on_frontier");
  CHECK(lines[1] == "1,10,100,0");
  CHECK(lines[2] == "2,15,120,1");
  CHECK(lines[3] == "3,20,90,1");
}

TEST_CASE("analyze speedup emits the proxy and both means") {
  TempDir dir;
  auto write_report = [&](const std::string& sub, int conc, double step_mean, double al,
                          double output_tps) {
    MetricsReport r;
    r.concurrency = conc;
    r.step_latency.mean = step_mean;
    r.empirical_al = al;
    r.theoretical_al = al;
    r.output_tps = output_tps;
    r.n_steps = 1000;
    write_text_file_atomic(dir.path() + "/" + sub + "/report_c" + std::to_string(conc) + ".json",
                           report_to_json(r).dump());
  };
  write_report("base", 1, 10.0, 1.0, 100.0);
  write_report("sd", 1, 12.0, 2.5, 208.33);

  auto res = run_cmd("analyze --speedup --baseline " + dir.path() + "/base --sd " + dir.path() +
                     "/sd --out " + dir.path() + "/an");
  CAPTURE(res.output);
  REQUIRE(res.code == 0);
  auto lines = split_lines(read_text_file(dir.path() + "/an/speedup.csv"));
  REQUIRE(lines.size() == 2);
  CHECK(lines[1].find("2.083333333") != std::string::npos);
  nlohmann::json summary =
      nlohmann::json::parse(read_text_file(dir.path() + "/an/speedup_summary.json"));
  CHECK(summary["request_weighted_mean_speedup"].get<double>() == doctest::Approx(2.0833333));
  CHECK(summary["token_weighted_mean_speedup"].get<double>() == doctest::Approx(2.0833333));

  SUBCASE("identity case") {
    TempDir dir2;
    auto wr = [&](const std::string& sub, double step, double al, double tps) {
      MetricsReport r;
      r.concurrency = 1;
      r.step_latency.mean = step;
      r.empirical_al = al;
      r.output_tps = tps;
      write_text_file_atomic(dir2.path() + "/" + sub + "/report_c1.json", report_to_json(r).dump());
    };
    wr("base", 10.0, 1.0, 100.0);
    wr("sd", 10.0, 1.0, 100.0);
    auto res2 = run_cmd("analyze --speedup --baseline " + dir2.path() + "/base --sd " +
                        dir2.path() + "/sd --out " + dir2.path() + "/an");
    REQUIRE(res2.code == 0);
    auto l = split_lines(read_text_file(dir2.path() + "/an/speedup.csv"));
    CHECK(l[1] == "1,10,10,1,1,1");
  }
}

TEST_CASE("analyze coverage sweep is exact and monotone") {
  TempDir dir;
  auto res = run_cmd("analyze --coverage --ref " + kFixtures + "/coverage_ref.jsonl --test " +
                     kFixtures + "/coverage_test.jsonl --k 1,2,3 --out " + dir.path() + "/an");
  CAPTURE(res.output);
  REQUIRE(res.code == 0);
  auto lines = split_lines(read_text_file(dir.path() + "/an/coverage.csv"));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "K,overall,all");
  CHECK(lines[1] == "1,0.25,0.25");
  CHECK(lines[2] == "2,0.5,0.5");
  CHECK(lines[3] == "3,1,1");
}

TEST_CASE("analyze with no mode selected exits 1") {
  TempDir dir;
  auto res = run_cmd("analyze --out " + dir.path() + "/an");
  CHECK(res.code == 1);
}

TEST_CASE("serve-mock serves diagnostics until signaled") {
  TempDir dir;
  std::string out_path = dir.file("serve.log");
  pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    FILE* f = freopen(out_path.c_str(), "w", stdout);
    (void)f;
    execl(kBin.c_str(), kBin.c_str(), "serve-mock", "--config",
          (kFixtures + "/mock_config.json").c_str(), "--bind", "127.0.0.1:0", (char*)nullptr);
    _exit(127);
  }

  // the server picks a free port and logs it
  int port = 0;
  for (int i = 0; i < 200 && port == 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    std::ifstream log(out_path);
    std::string line;
    while (std::getline(log, line)) {
      auto at = line.find("listening on http://127.0.0.1:");
      if (at != std::string::npos) {
        port = std::stoi(line.substr(at + 30));
        break;
      }
    }
  }
  REQUIRE(port > 0);

  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(std::chrono::milliseconds(500));
  nlohmann::json state;
  bool up = false;
  for (int i = 0; i < 100; ++i) {
    auto res = cli.Get("/__mock/state");
    if (res && res->status == 200) {
      state = nlohmann::json::parse(res->body);
      up = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  REQUIRE(up);
  CHECK(state["in_flight"] == 0);

  // config hash printed at startup matches a local recompute
  MockConfig cfg = mock_config_from_json(
      nlohmann::json::parse(read_text_file(kFixtures + "/mock_config.json")));
  CHECK(state["config_hash"] == mock_config_hash(cfg));

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(read_text_file(out_path).find("config_hash " + mock_config_hash(cfg)) != std::string::npos);
}

TEST_CASE("serve-mock bind failure exits 2") {
  MockConfig cfg;
  cfg.listener_threads = 2;
  MockServer holder(cfg);
  REQUIRE(holder.start());
  auto res = run_cmd("serve-mock --bind 127.0.0.1:" + std::to_string(holder.port()));
  CHECK(res.code == 2);
  CHECK(res.output.find("bind") != std::string::npos);
}

TEST_CASE("pipeline: curate, bucket, bench, analyze under the time budget") {
  auto t0 = std::chrono::steady_clock::now();
  TempDir dir;

  auto curate = run_cmd("curate --samples " + kFixtures + "/samples_small.jsonl --embeddings " +
                        kFixtures + "/embeddings_small.jsonl --k 6 --per-category --seed 1 --out " +
                        dir.file("sel.jsonl") + " --matrix-dir " + dir.path() + "/matrices");
  CAPTURE(curate.output);
  REQUIRE(curate.code == 0);
  CHECK(split_lines(read_text_file(dir.file("sel.jsonl"))).size() == 3);
  CHECK(read_text_file(dir.path() + "/matrices/similarity_coding.csv").find("id,") == 0);

  auto bucket = run_cmd("bucket --samples " + kFixtures + "/samples_small.jsonl --isl 48 --out " +
                        dir.file("bucketed.jsonl"));
  REQUIRE(bucket.code == 0);

  MockConfig mcfg;
  mcfg.gamma = 2;
  mcfg.ar_true = {0.7, 0.5};
  mcfg.t_base_ms = 1.0;
  mcfg.t_per_token_ms = 0.0;
  mcfg.output_tokens_target = 48;
  MockServer server(mcfg);
  REQUIRE(server.start());
  nlohmann::json config = {{"endpoint", server.base_url() + "/v1/completions"},
                           {"concurrency_levels", {1, 2, 4}},
                           {"draft_length", 2},
                           {"max_output_tokens", 1000},
                           {"warmup_requests", 2},
                           {"send_token_ids", true}};
  write_text_file_atomic(dir.file("bench.json"), config.dump());
  auto bench = run_cmd("bench --config " + dir.file("bench.json") + " --workload " +
                       dir.file("bucketed.jsonl") + " --out " + dir.path() + "/run");
  CAPTURE(bench.output);
  REQUIRE(bench.code == 0);

  auto analyze = run_cmd("analyze --runs " + dir.path() + "/run --pareto --out " + dir.path() + "/an");
  REQUIRE(analyze.code == 0);
  auto lines = split_lines(read_text_file(dir.path() + "/an/pareto.csv"));
  CHECK(lines.size() == 4);  // header + three concurrency levels

  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(elapsed < 300.0);
}
