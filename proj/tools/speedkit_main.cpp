// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
//
// speedkit: curate -> bucket -> serve-mock / bench -> analyze.
// Exit codes: 0 ok, 1 usage, 2 runtime, 3 acceptance-check failure.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

#include "speedkit/bench.hpp"
#include "speedkit/curation.hpp"
#include "speedkit/dataset.hpp"
#include "speedkit/embed_client.hpp"
#include "speedkit/metrics.hpp"
#include "speedkit/mock_server.hpp"
#include "speedkit/util.hpp"

namespace fs = std::filesystem;
using namespace speedkit;

namespace {

// exit code 3: a measured value missed an expected bar
struct CheckFailure : std::exception {
  explicit CheckFailure(std::string m) : msg(std::move(m)) {}
  const char* what() const noexcept override { return msg.c_str(); }
  std::string msg;
};

struct CurateOpts {
  std::string samples_path;
  std::string embeddings_path;
  std::string embed_endpoint;
  std::string embed_model = "text-embedding-3-large";
  std::string api_key;
  std::string cache_dir;
  std::string out_path;
  std::string matrix_dir;
  std::string method = "greedy_swap";
  int k = 0;
  bool per_category = false;
  uint64_t seed = 0;
  int max_iter = 100;
  int restarts = 1;
};

std::string default_cache_dir() {
  if (const char* env = std::getenv("SPEEDKIT_CACHE_DIR")) return env;
  return ".speedkit-cache";
}

EmbeddingSet embeddings_for_samples(const CurateOpts& opt, const std::vector<Sample>& samples) {
  std::vector<std::string> ids, texts;
  for (const Sample& s : samples) {
    ids.push_back(s.id);
    texts.push_back(flatten_text(s));
  }
  if (!opt.embeddings_path.empty()) {
    EmbeddingSet file_set = load_embeddings_jsonl(opt.embeddings_path);
    std::map<std::string, size_t> row_of;
    for (size_t i = 0; i < file_set.size(); ++i) row_of[file_set.ids[i]] = i;
    EmbeddingSet emb;
    emb.dim = file_set.dim;
    for (const std::string& id : ids) {
      auto it = row_of.find(id);
      if (it == row_of.end()) {
        throw std::invalid_argument("embeddings file lacks a vector for sample id: " + id);
      }
      emb.ids.push_back(id);
      auto row = file_set.row(it->second);
      emb.data.insert(emb.data.end(), row.begin(), row.end());
    }
    emb.validate();
    return emb;
  }
  EmbedProviderConfig provider;
  provider.endpoint = opt.embed_endpoint;
  provider.model = opt.embed_model;
  provider.api_key = opt.api_key;
  std::string cache = opt.cache_dir.empty() ? default_cache_dir() : opt.cache_dir;
  return fetch_embeddings(ids, texts, provider, cache);
}

Selection run_method(const EmbeddingSet& emb, const std::string& method, int k, uint64_t seed,
                     int max_iter, int restarts) {
  if (method == "greedy_swap") return select_diverse(emb, k, seed, max_iter, restarts);
  if (method == "greedy") return greedy_select(emb, k, seed);
  if (method == "qp") return qp_select(emb, k);
  if (method == "random") return random_select(emb, k, seed);
  throw std::invalid_argument("unknown method: " + method);
}

int cmd_curate(const CurateOpts& opt) {
  if (opt.embeddings_path.empty() == opt.embed_endpoint.empty()) {
    throw std::invalid_argument("exactly one of --embeddings or --embed-endpoint is required");
  }
  auto samples = load_samples(opt.samples_path);
  if (samples.empty()) throw std::invalid_argument("sample file is empty");
  EmbeddingSet emb = embeddings_for_samples(opt, samples);

  struct Group {
    std::string category;
    std::vector<size_t> rows;  // rows into emb, file order
  };
  std::vector<Group> groups;
  if (opt.per_category) {
    std::map<std::string, std::vector<size_t>> by_cat;
    for (size_t i = 0; i < samples.size(); ++i) by_cat[samples[i].category].push_back(i);
    for (auto& [cat, rows] : by_cat) groups.push_back({cat, std::move(rows)});
  } else {
    Group all;
    for (size_t i = 0; i < samples.size(); ++i) all.rows.push_back(i);
    groups.push_back(std::move(all));
  }

  std::string out;
  for (const Group& g : groups) {
    if (opt.k > static_cast<int>(g.rows.size())) {
      throw std::invalid_argument("--k " + std::to_string(opt.k) + " exceeds candidate pool (" +
                                  std::to_string(g.rows.size()) + ")" +
                                  (g.category.empty() ? "" : " for category " + g.category));
    }
    EmbeddingSet sub;
    sub.dim = emb.dim;
    for (size_t row : g.rows) {
      sub.ids.push_back(emb.ids[row]);
      auto r = emb.row(row);
      sub.data.insert(sub.data.end(), r.begin(), r.end());
    }
    uint64_t seed = g.category.empty() ? opt.seed : opt.seed ^ fnv1a64(g.category);
    Selection sel = run_method(sub, opt.method, opt.k, seed, opt.max_iter, opt.restarts);
    nlohmann::json record = selection_to_json(sel, sub);
    if (!g.category.empty()) record["category"] = g.category;
    out += record.dump();
    out += '\n';

    double mean = sel.indices.size() >= 2 ? mean_pairwise_similarity(sub, sel.indices)
                                          : std::nan("");
    std::printf("%s n=%zu k=%d objective=%.6f mean_similarity=%s\n",
                g.category.empty() ? "(all)" : g.category.c_str(), g.rows.size(), opt.k,
                sel.objective, std::isnan(mean) ? "n/a" : std::to_string(mean).c_str());

    if (!opt.matrix_dir.empty()) {
      fs::create_directories(opt.matrix_dir);
      std::string name = g.category.empty() ? "similarity.csv" : "similarity_" + g.category + ".csv";
      write_similarity_matrix_csv(sub, sel.indices, (fs::path(opt.matrix_dir) / name).string());
    }
  }
  write_text_file_atomic(opt.out_path, out);
  std::printf("wrote %s\n", opt.out_path.c_str());
  return 0;
}

struct BucketOpts {
  std::string samples_path;
  std::string out_path;
  std::string suffix = "please answer now";
  std::string tokenizer_id = "byte";
  int isl = 1024;
};

int cmd_bucket(const BucketOpts& opt) {
  auto tok = make_tokenizer(opt.tokenizer_id);
  BucketSpec spec;
  spec.target_isl = opt.isl;
  spec.pad_suffix = opt.suffix;
  spec.tokenizer_id = opt.tokenizer_id;
  spec.validate(*tok);

  auto samples = load_samples(opt.samples_path);
  std::string out;
  for (const Sample& s : samples) {
    Sample fitted = fit_to_isl(s, spec, *tok);
    nlohmann::json j = sample_to_json(fitted);
    j["isl"] = opt.isl;
    j["bucket_id"] = "isl" + std::to_string(opt.isl);
    out += j.dump();
    out += '\n';
  }
  write_text_file_atomic(opt.out_path, out);
  std::printf("bucketed %zu samples to isl=%d (%s)\n", samples.size(), opt.isl,
              opt.tokenizer_id.c_str());
  return 0;
}

struct BenchOpts {
  std::string config_path;
  std::string workload_path;
  std::string out_dir;
  double expect_al = -1.0;
  double al_tol = 0.05;
};

int cmd_bench(const BenchOpts& opt) {
  nlohmann::json config_json;
  try {
    config_json = nlohmann::json::parse(read_text_file(opt.config_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config parse error: " + std::string(e.what()));
  }
  BenchConfig cfg = bench_config_from_json(config_json);
  auto samples = load_samples(opt.workload_path);
  auto tok = make_tokenizer(cfg.tokenizer_id);
  auto workload = make_workload(samples, *tok);

  int64_t started_unix_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count();
  auto records = run_benchmark(cfg, workload);

  fs::create_directories(opt.out_dir);
  std::printf("%-12s %-8s %-10s %-12s %-12s %-10s\n", "concurrency", "AL", "theor_AL", "user_tps",
              "output_tps", "ttft_p50");
  std::vector<MetricsReport> reports;
  for (const RunRecord& rec : records) {
    std::string suffix = "c" + std::to_string(rec.concurrency);
    save_run_record((fs::path(opt.out_dir) / ("traces_" + suffix + ".jsonl")).string(), rec);
    if (rec.endpoint_unreachable) {
      std::fprintf(stderr, "concurrency %d: endpoint unreachable\n", rec.concurrency);
      continue;
    }
    MetricsReport report = compute_report(rec, cfg.draft_length);
    reports.push_back(report);
    write_text_file_atomic((fs::path(opt.out_dir) / ("report_" + suffix + ".json")).string(),
                           report_to_json(report).dump(2) + "\n");
    std::printf("%-12d %-8.3f %-10.3f %-12.2f %-12.2f %-10.2f\n", report.concurrency,
                report.empirical_al, report.theoretical_al, report.user_tps, report.output_tps,
                report.ttft.p50);
  }
  // wall-clock info lives apart from the deterministic artifacts
  nlohmann::json meta = {{"started_unix_ms", started_unix_ms},
                         {"endpoint", cfg.endpoint},
                         {"levels_completed", reports.size()}};
  write_text_file_atomic((fs::path(opt.out_dir) / "meta.json").string(), meta.dump(2) + "\n");

  if (reports.empty()) throw std::runtime_error("benchmark produced no successful runs");
  if (opt.expect_al > 0) {
    for (const MetricsReport& r : reports) {
      if (std::abs(r.empirical_al - opt.expect_al) > opt.al_tol) {
        throw CheckFailure("AL check failed at concurrency " + std::to_string(r.concurrency) +
                           ": measured " + std::to_string(r.empirical_al) + ", expected " +
                           std::to_string(opt.expect_al) + " +/- " + std::to_string(opt.al_tol));
      }
    }
    std::printf("AL check passed (expected %.3f +/- %.3f)\n", opt.expect_al, opt.al_tol);
  }
  return 0;
}

struct AnalyzeOpts {
  std::string runs_dir;
  std::string out_dir;
  bool pareto = false;
  bool speedup = false;
  std::string baseline_dir;
  std::string sd_dir;
  bool coverage = false;
  std::string ref_path;
  std::string test_path;
  std::vector<int64_t> k_list;
  std::string tokenizer_id = "byte";
};

std::vector<MetricsReport> load_reports(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("report_", 0) == 0 && name.find(".json") != std::string::npos) {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricsReport> reports;
  for (const std::string& f : files) {
    reports.push_back(report_from_json(nlohmann::json::parse(read_text_file(f))));
  }
  if (reports.empty()) throw std::invalid_argument("no report_*.json files under " + dir);
  std::sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
    return a.concurrency < b.concurrency;
  });
  return reports;
}

TokenCorpus load_corpus(const std::string& path, const TokenizerProvider& tok) {
  TokenCorpus corpus;
  auto lines = split_lines(read_text_file(path));
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": parse error: " + e.what());
    }
    TokenRecord rec;
    rec.category = j.value("category", "all");
    if (j.contains("tokens")) {
      rec.tokens = j["tokens"].get<std::vector<int>>();
    } else if (j.contains("text")) {
      rec.tokens = tok.encode(j["text"].get<std::string>());
    } else {
      throw std::runtime_error(path + ":" + std::to_string(i + 1) +
                               ": record needs tokens or text");
    }
    corpus.push_back(std::move(rec));
  }
  if (corpus.empty()) throw std::invalid_argument("corpus file is empty: " + path);
  return corpus;
}

int cmd_analyze(const AnalyzeOpts& opt) {
  if (!opt.pareto && !opt.speedup && !opt.coverage) {
    throw std::invalid_argument("nothing to do: pass --pareto, --speedup, or --coverage");
  }
  fs::create_directories(opt.out_dir);

  if (opt.pareto) {
    if (opt.runs_dir.empty()) throw std::invalid_argument("--pareto requires --runs");
    auto reports = load_reports(opt.runs_dir);
    std::vector<ParetoPoint> points;
    for (const MetricsReport& r : reports) {
      points.push_back({r.concurrency, r.user_tps, r.output_tps});
    }
    auto frontier = pareto_frontier(points);
    std::string path = (fs::path(opt.out_dir) / "pareto.csv").string();
    write_text_file_atomic(path, pareto_csv(points, frontier));
    std::printf("pareto: %zu points, %zu on the frontier -> %s\n", points.size(), frontier.size(),
                path.c_str());
  }

  if (opt.speedup) {
    if (opt.baseline_dir.empty() || opt.sd_dir.empty()) {
      throw std::invalid_argument("--speedup requires --baseline and --sd run directories");
    }
    auto base = load_reports(opt.baseline_dir);
    auto sd = load_reports(opt.sd_dir);
    std::map<int, MetricsReport> base_by_conc;
    for (const auto& r : base) base_by_conc[r.concurrency] = r;

    std::ostringstream csv;
    csv.precision(10);
    csv << "concurrency,t_ar_ms,t_sd_ms,al,predicted_speedup,measured_ratio\n";
    double req_sum = 0, tok_sum = 0, tok_weight = 0;
    int matched = 0;
    for (const auto& r : sd) {
      auto it = base_by_conc.find(r.concurrency);
      if (it == base_by_conc.end()) continue;
      const MetricsReport& b = it->second;
      SpeedupEstimate est = speedup_proxy(b.step_latency.mean, r.step_latency.mean, r.empirical_al);
      double measured = b.output_tps > 0 ? r.output_tps / b.output_tps : 0.0;
      csv << r.concurrency << ',' << est.t_ar_ms << ',' << est.t_sd_ms << ',' << est.al << ','
          << est.speedup << ',' << measured << '\n';
      double tokens = static_cast<double>(r.n_steps) * r.empirical_al;
      req_sum += est.speedup;
      tok_sum += est.speedup * tokens;
      tok_weight += tokens;
      ++matched;
    }
    if (matched == 0) throw std::invalid_argument("no matching concurrency levels between runs");
    std::string path = (fs::path(opt.out_dir) / "speedup.csv").string();
    write_text_file_atomic(path, csv.str());
    nlohmann::json summary = {{"request_weighted_mean_speedup", req_sum / matched},
                              {"token_weighted_mean_speedup",
                               tok_weight > 0 ? tok_sum / tok_weight : 0.0},
                              {"levels", matched}};
    write_text_file_atomic((fs::path(opt.out_dir) / "speedup_summary.json").string(),
                           summary.dump(2) + "\n");
    std::printf("speedup: %d levels -> %s\n", matched, path.c_str());
  }

  if (opt.coverage) {
    if (opt.ref_path.empty() || opt.test_path.empty() || opt.k_list.empty()) {
      throw std::invalid_argument("--coverage requires --ref, --test, and --k");
    }
    auto tok = make_tokenizer(opt.tokenizer_id);
    TokenCorpus ref = load_corpus(opt.ref_path, *tok);
    TokenCorpus test = load_corpus(opt.test_path, *tok);

    std::vector<int64_t> ks = opt.k_list;
    std::sort(ks.begin(), ks.end());
    std::set<std::string> categories;
    for (const auto& r : test) categories.insert(r.category);

    std::ostringstream csv;
    csv.precision(10);
    csv << "K,overall";
    for (const auto& c : categories) csv << ',' << c;
    csv << '\n';
    for (int64_t k : ks) {
      VocabCoverage cov = vocab_coverage(ref, test, k);
      csv << k << ',' << cov.covered_fraction;
      for (const auto& c : categories) {
        auto it = cov.per_category.find(c);
        csv << ',' << (it == cov.per_category.end() ? 0.0 : it->second);
      }
      csv << '\n';
    }
    std::string path = (fs::path(opt.out_dir) / "coverage.csv").string();
    write_text_file_atomic(path, csv.str());
    std::printf("coverage: %zu K values -> %s\n", ks.size(), path.c_str());
  }
  return 0;
}

struct ServeMockOpts {
  std::string config_path;
  std::string bind = "127.0.0.1:8080";
};

std::atomic<bool> g_stop_requested{false};
void handle_signal(int) { g_stop_requested.store(true); }

int cmd_serve_mock(const ServeMockOpts& opt) {
  MockConfig cfg;
  if (!opt.config_path.empty()) {
    try {
      cfg = mock_config_from_json(nlohmann::json::parse(read_text_file(opt.config_path)));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config parse error: " + std::string(e.what()));
    }
  }
  size_t colon = opt.bind.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("--bind must be host:port");
  std::string host = opt.bind.substr(0, colon);
  int port = std::stoi(opt.bind.substr(colon + 1));

  MockServer server(cfg);
  if (!server.start(host, port)) {
    throw std::runtime_error("failed to bind " + opt.bind);
  }
  std::printf("mock server listening on %s\n", server.base_url().c_str());
  std::printf("config_hash %s\n", mock_config_hash(cfg).c_str());
  std::fflush(stdout);

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop_requested.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  std::printf("mock server stopped after %lld requests\n",
              static_cast<long long>(server.served()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speedkit: speculative-decoding benchmark toolkit"};
  app.require_subcommand(1);

  CurateOpts curate;
  auto* curate_cmd = app.add_subcommand("curate", "diversity-maximizing subset selection");
  curate_cmd->add_option("--samples", curate.samples_path, "sample JSONL file")->required();
  curate_cmd->add_option("--embeddings", curate.embeddings_path, "embeddings JSONL ({id, embedding})");
  curate_cmd->add_option("--embed-endpoint", curate.embed_endpoint, "embeddings HTTP endpoint");
  curate_cmd->add_option("--embed-model", curate.embed_model, "embeddings model name");
  curate_cmd->add_option("--api-key", curate.api_key, "bearer token for the embeddings endpoint");
  curate_cmd->add_option("--cache-dir", curate.cache_dir,
                         "embedding cache dir (default $SPEEDKIT_CACHE_DIR or .speedkit-cache)");
  curate_cmd->add_option("--k", curate.k, "subset size per selection")->required();
  curate_cmd->add_flag("--per-category", curate.per_category, "select independently per category");
  curate_cmd->add_option("--method", curate.method, "greedy_swap | greedy | qp | random");
  curate_cmd->add_option("--seed", curate.seed, "rng seed");
  curate_cmd->add_option("--max-iter", curate.max_iter, "swap refinement sweep budget");
  curate_cmd->add_option("--restarts", curate.restarts, "greedy restarts, best kept");
  curate_cmd->add_option("--out", curate.out_path, "selection records JSONL")->required();
  curate_cmd->add_option("--matrix-dir", curate.matrix_dir, "write similarity matrix CSVs here");

  BucketOpts bucket;
  auto* bucket_cmd = app.add_subcommand("bucket", "fit samples to an exact ISL");
  bucket_cmd->add_option("--samples", bucket.samples_path, "sample JSONL file")->required();
  bucket_cmd->add_option("--isl", bucket.isl, "target input sequence length")->required();
  bucket_cmd->add_option("--suffix", bucket.suffix, "neutral padding suffix");
  bucket_cmd->add_option("--tokenizer", bucket.tokenizer_id, "byte | whitespace | vocab:<path>");
  bucket_cmd->add_option("--out", bucket.out_path, "bucketed JSONL")->required();

  BenchOpts bench;
  auto* bench_cmd = app.add_subcommand("bench", "closed-loop streaming benchmark");
  bench_cmd->add_option("--config", bench.config_path, "bench config JSON")->required();
  bench_cmd->add_option("--workload", bench.workload_path, "workload sample JSONL")->required();
  bench_cmd->add_option("--out", bench.out_dir, "output directory")->required();
  bench_cmd->add_option("--expect-al", bench.expect_al, "fail (exit 3) unless AL matches");
  bench_cmd->add_option("--al-tol", bench.al_tol, "tolerance for --expect-al");

  AnalyzeOpts analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "reports -> pareto / speedup / coverage");
  analyze_cmd->add_option("--runs", analyze.runs_dir, "bench output dir with report_*.json");
  analyze_cmd->add_option("--out", analyze.out_dir, "output directory")->required();
  analyze_cmd->add_flag("--pareto", analyze.pareto, "emit pareto.csv");
  analyze_cmd->add_flag("--speedup", analyze.speedup, "emit speedup.csv + summary");
  analyze_cmd->add_option("--baseline", analyze.baseline_dir, "autoregressive run dir");
  analyze_cmd->add_option("--sd", analyze.sd_dir, "speculative run dir");
  analyze_cmd->add_flag("--coverage", analyze.coverage, "emit coverage.csv");
  analyze_cmd->add_option("--ref", analyze.ref_path, "reference corpus JSONL");
  analyze_cmd->add_option("--test", analyze.test_path, "test corpus JSONL");
  analyze_cmd->add_option("--k", analyze.k_list, "top-K values")->delimiter(',');
  analyze_cmd->add_option("--tokenizer", analyze.tokenizer_id, "tokenizer for text corpora");

  ServeMockOpts serve;
  auto* serve_cmd = app.add_subcommand("serve-mock", "run the oracle inference endpoint");
  serve_cmd->add_option("--config", serve.config_path, "mock config JSON");
  serve_cmd->add_option("--bind", serve.bind, "host:port (port 0 picks a free port)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (curate_cmd->parsed()) return cmd_curate(curate);
    if (bucket_cmd->parsed()) return cmd_bucket(bucket);
    if (bench_cmd->parsed()) return cmd_bench(bench);
    if (analyze_cmd->parsed()) return cmd_analyze(analyze);
    if (serve_cmd->parsed()) return cmd_serve_mock(serve);
  } catch (const CheckFailure& e) {
    std::fprintf(stderr, "check failed: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
