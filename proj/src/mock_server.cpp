// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#include "speedkit/mock_server.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <stdexcept>

#include "speedkit/http.hpp"
#include "speedkit/util.hpp"

namespace speedkit {

namespace {

const char* seed_mode_name(MockConfig::SeedMode m) {
  return m == MockConfig::SeedMode::per_request_id ? "per_request_id" : "global";
}

const char* content_mode_name(MockConfig::ContentMode m) {
  return m == MockConfig::ContentMode::fixed_token ? "fixed_token" : "echo";
}

void check_rates(const std::vector<double>& ar, int gamma, const std::string& what) {
  if (static_cast<int>(ar.size()) != gamma) {
    throw std::invalid_argument(what + ": expected " + std::to_string(gamma) +
                                " rates, got " + std::to_string(ar.size()));
  }
  for (double r : ar) {
    if (r < 0.0 || r > 1.0) {
      throw std::invalid_argument(what + ": rate out of [0,1]: " + std::to_string(r));
    }
  }
}

}  // namespace

void MockConfig::validate() const {
  if (gamma < 0) throw std::invalid_argument("gamma must be >= 0");
  check_rates(ar_true, gamma, "ar_true");
  if (t_base_ms < 0 || t_per_token_ms < 0 || t_per_conc_ms < 0) {
    throw std::invalid_argument("latencies must be >= 0");
  }
  if (output_tokens_target < 1) throw std::invalid_argument("output_tokens_target must be >= 1");
  if (listener_threads < 1) throw std::invalid_argument("listener_threads must be >= 1");
  for (const auto& [tag, ar] : entropy_profile) check_rates(ar, gamma, "entropy_profile." + tag);
}

MockConfig mock_config_from_json(const nlohmann::json& j) {
  MockConfig cfg;
  static const char* known[] = {"gamma",         "ar_true",      "t_base_ms",
                                "t_per_token_ms", "t_per_conc_ms", "output_tokens_target",
                                "seed_mode",     "content_mode", "entropy_profile",
                                "seed",          "listener_threads"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw std::invalid_argument("unknown mock config field: " + it.key());
  }
  cfg.gamma = j.value("gamma", cfg.gamma);
  if (j.contains("ar_true")) cfg.ar_true = j["ar_true"].get<std::vector<double>>();
  cfg.t_base_ms = j.value("t_base_ms", cfg.t_base_ms);
  cfg.t_per_token_ms = j.value("t_per_token_ms", cfg.t_per_token_ms);
  cfg.t_per_conc_ms = j.value("t_per_conc_ms", cfg.t_per_conc_ms);
  cfg.output_tokens_target = j.value("output_tokens_target", cfg.output_tokens_target);
  if (j.contains("seed_mode")) {
    std::string m = j["seed_mode"].get<std::string>();
    if (m == "per_request_id") {
      cfg.seed_mode = MockConfig::SeedMode::per_request_id;
    } else if (m == "global") {
      cfg.seed_mode = MockConfig::SeedMode::global_rng;
    } else {
      throw std::invalid_argument("unknown seed_mode: " + m);
    }
  }
  if (j.contains("content_mode")) {
    std::string m = j["content_mode"].get<std::string>();
    if (m == "fixed_token") {
      cfg.content_mode = MockConfig::ContentMode::fixed_token;
    } else if (m == "echo") {
      cfg.content_mode = MockConfig::ContentMode::echo;
    } else {
      throw std::invalid_argument("unknown content_mode: " + m);
    }
  }
  if (j.contains("entropy_profile")) {
    for (auto it = j["entropy_profile"].begin(); it != j["entropy_profile"].end(); ++it) {
      cfg.entropy_profile[it.key()] = it.value().get<std::vector<double>>();
    }
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.listener_threads = j.value("listener_threads", cfg.listener_threads);
  cfg.validate();
  return cfg;
}

nlohmann::json mock_config_to_json(const MockConfig& cfg) {
  nlohmann::json profile = nlohmann::json::object();
  for (const auto& [tag, ar] : cfg.entropy_profile) profile[tag] = ar;
  return {{"gamma", cfg.gamma},
          {"ar_true", cfg.ar_true},
          {"t_base_ms", cfg.t_base_ms},
          {"t_per_token_ms", cfg.t_per_token_ms},
          {"t_per_conc_ms", cfg.t_per_conc_ms},
          {"output_tokens_target", cfg.output_tokens_target},
          {"seed_mode", seed_mode_name(cfg.seed_mode)},
          {"content_mode", content_mode_name(cfg.content_mode)},
          {"entropy_profile", profile},
          {"seed", cfg.seed},
          {"listener_threads", cfg.listener_threads}};
}

std::string mock_config_hash(const MockConfig& cfg) {
  return sha256_hex(mock_config_to_json(cfg).dump());
}

StepOutcome sample_step(std::span<const double> ar_true, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  StepOutcome out;
  for (double rate : ar_true) {
    if (uni(rng) >= rate) break;
    ++out.accepted;
  }
  out.emitted = out.accepted + 1;
  return out;
}

double step_latency_ms(const MockConfig& cfg, int in_flight) {
  if (in_flight < 1) throw std::invalid_argument("in_flight must be >= 1");
  return cfg.t_base_ms + cfg.t_per_token_ms * cfg.gamma +
         cfg.t_per_conc_ms * (in_flight - 1) * (cfg.gamma + 1);
}

struct MockServer::Impl {
  httplib::Server svr;
  std::mutex req_mu;
  std::map<std::string, nlohmann::json> request_info;  // ground truth per request id
  std::mt19937_64 global_rng;
  std::mutex rng_mu;
  std::atomic<int64_t> next_anon_id{0};
  std::atomic<bool> shutdown{false};
  std::string config_hash;

  // sliced sleep so stop() is never stuck behind a long step
  bool pace_until(int64_t deadline_ns) {
    while (!shutdown.load(std::memory_order_relaxed)) {
      int64_t now = now_ns();
      if (now >= deadline_ns) return true;
      int64_t slice = std::min<int64_t>(deadline_ns, now + 50'000'000);
      std::this_thread::sleep_until(
          std::chrono::steady_clock::time_point(std::chrono::nanoseconds(slice)));
    }
    return false;
  }
};

MockServer::MockServer(MockConfig cfg) : impl_(std::make_unique<Impl>()), cfg_(std::move(cfg)) {
  cfg_.validate();
  impl_->global_rng.seed(cfg_.seed);
  impl_->config_hash = mock_config_hash(cfg_);

  auto handle_completion = [this](const httplib::Request& req, httplib::Response& res,
                                  bool chat) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", std::string("bad json: ") + e.what()}}.dump(),
                      "application/json");
      return;
    }
    if (!body.value("stream", false)) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", "only stream=true is supported"}}.dump(),
                      "application/json");
      return;
    }

    std::string request_id = body.value("request_id", "");
    if (request_id.empty()) {
      request_id = "srv-" + std::to_string(impl_->next_anon_id.fetch_add(1));
    }
    std::string tag = body.value("workload_tag", "");
    std::vector<double> ar = cfg_.ar_true;
    auto prof = cfg_.entropy_profile.find(tag);
    if (prof != cfg_.entropy_profile.end()) ar = prof->second;

    int target = cfg_.output_tokens_target;
    if (body.contains("max_tokens") && body["max_tokens"].is_number_integer()) {
      target = std::min(target, std::max(1, body["max_tokens"].get<int>()));
    }

    std::string prompt_text;
    int64_t prompt_tokens = 0;
    if (body.contains("prompt_token_ids") && body["prompt_token_ids"].is_array()) {
      prompt_tokens = static_cast<int64_t>(body["prompt_token_ids"].size());
      for (const auto& v : body["prompt_token_ids"]) {
        int id = v.get<int>();
        prompt_text.push_back(static_cast<char>(id & 0xff));
      }
    } else if (chat && body.contains("messages") && body["messages"].is_array()) {
      for (const auto& m : body["messages"]) prompt_text += m.value("content", "");
      prompt_tokens = static_cast<int64_t>(prompt_text.size());
    } else if (body.contains("prompt") && body["prompt"].is_string()) {
      prompt_text = body["prompt"].get<std::string>();
      prompt_tokens = static_cast<int64_t>(prompt_text.size());
    }

    uint64_t rng_seed = fnv1a64(request_id) ^ cfg_.seed;
    {
      std::lock_guard<std::mutex> lock(impl_->req_mu);
      if (impl_->request_info.size() > 8192) impl_->request_info.clear();
      impl_->request_info[request_id] = {{"request_id", request_id},
                                         {"seed", rng_seed},
                                         {"tag", tag},
                                         {"gamma", cfg_.gamma},
                                         {"ar_true", ar}};
    }

    in_flight_.fetch_add(1);
    int cur = in_flight_.load();
    int peak = peak_in_flight_.load();
    while (cur > peak && !peak_in_flight_.compare_exchange_weak(peak, cur)) {
    }

    struct GenState {
      std::vector<double> ar;
      std::string request_id;
      std::string prompt_text;
      int64_t prompt_tokens;
      int target;
      bool chat;
      std::mt19937_64 rng;
      bool use_global;
    };
    auto st = std::make_shared<GenState>();
    st->ar = std::move(ar);
    st->request_id = request_id;
    st->prompt_text = std::move(prompt_text);
    st->prompt_tokens = prompt_tokens;
    st->target = target;
    st->chat = chat;
    st->rng.seed(rng_seed);
    st->use_global = cfg_.seed_mode == MockConfig::SeedMode::global_rng;

    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, st](size_t, httplib::DataSink& sink) {
          int total = 0;
          size_t echo_pos = 0;
          bool first = true;
          // absolute deadlines keep the cadence drift-free under load
          int64_t deadline = now_ns();
          while (total < st->target) {
            deadline += static_cast<int64_t>(step_latency_ms(cfg_, std::max(1, in_flight_.load())) * 1e6);
            if (!impl_->pace_until(deadline)) return false;
            int emit = 1;
            bool truncated = false;
            if (first) {
              first = false;  // prefill emits the single bonus token
            } else {
              StepOutcome o;
              if (st->use_global) {
                std::lock_guard<std::mutex> lock(impl_->rng_mu);
                o = sample_step(st->ar, impl_->global_rng);
              } else {
                o = sample_step(st->ar, st->rng);
              }
              emit = std::min(o.emitted, st->target - total);
              truncated = emit < o.emitted;
            }
            total += emit;
            bool finish = total >= st->target;

            std::string content;
            if (cfg_.content_mode == MockConfig::ContentMode::echo && !st->prompt_text.empty()) {
              for (int i = 0; i < emit; ++i) {
                content.push_back(st->prompt_text[echo_pos % st->prompt_text.size()]);
                ++echo_pos;
              }
            } else {
              for (int i = 0; i < emit; ++i) content += " tok";
            }

            nlohmann::json choice;
            choice["index"] = 0;
            if (st->chat) {
              choice["delta"] = {{"content", content}};
            } else {
              choice["text"] = content;
            }
            choice["finish_reason"] =
                finish ? nlohmann::json(truncated ? "length" : "stop") : nlohmann::json(nullptr);

            nlohmann::json chunk = {{"id", st->request_id},
                                    {"object", st->chat ? "chat.completion.chunk" : "text_completion"},
                                    {"created", 0},
                                    {"model", "speedkit-mock"},
                                    {"choices", nlohmann::json::array({choice})},
                                    {"new_tokens", emit}};
            if (finish) {
              chunk["usage"] = {{"prompt_tokens", st->prompt_tokens},
                                {"completion_tokens", st->target},
                                {"total_tokens", st->prompt_tokens + st->target}};
            }
            std::string frame = "data: " + chunk.dump() + "\n\n";
            if (!sink.write(frame.data(), frame.size())) return false;
          }
          static const char kDone[] = "data: [DONE]\n\n";
          if (!sink.write(kDone, sizeof(kDone) - 1)) return false;
          sink.done();
          return true;
        },
        [this](bool) {
          in_flight_.fetch_sub(1);
          served_.fetch_add(1);
        });
  };

  impl_->svr.Post("/v1/completions", [handle_completion](const httplib::Request& req,
                                                         httplib::Response& res) {
    handle_completion(req, res, false);
  });
  impl_->svr.Post("/v1/chat/completions", [handle_completion](const httplib::Request& req,
                                                              httplib::Response& res) {
    handle_completion(req, res, true);
  });

  impl_->svr.Get("/__mock/state", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json j = {{"in_flight", in_flight_.load()},
                        {"peak_in_flight", peak_in_flight_.load()},
                        {"served", served_.load()},
                        {"config_hash", impl_->config_hash}};
    res.set_content(j.dump(), "application/json");
  });

  impl_->svr.Get("/__mock/request", [this](const httplib::Request& req, httplib::Response& res) {
    std::string id = req.get_param_value("id");
    std::lock_guard<std::mutex> lock(impl_->req_mu);
    auto it = impl_->request_info.find(id);
    if (it == impl_->request_info.end()) {
      res.status = 404;
      res.set_content(nlohmann::json{{"error", "unknown request id"}}.dump(), "application/json");
      return;
    }
    res.set_content(it->second.dump(), "application/json");
  });

  impl_->svr.set_tcp_nodelay(true);
  impl_->svr.set_keep_alive_max_count(1024);
  // no SO_REUSEPORT: a second server on the same port must fail loudly
  // instead of silently splitting the accept load
  impl_->svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  int threads = cfg_.listener_threads;
  impl_->svr.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<size_t>(threads)); };
}

MockServer::~MockServer() { stop(); }

bool MockServer::start(const std::string& host, int port) {
  host_ = host;
  raise_nofile_limit(4096);
  if (port == 0) {
    port_ = impl_->svr.bind_to_any_port(host);
    if (port_ < 0) return false;
  } else {
    if (!impl_->svr.bind_to_port(host, port)) return false;
    port_ = port;
  }
  thread_ = std::thread([this] { impl_->svr.listen_after_bind(); });
  impl_->svr.wait_until_ready();
  return true;
}

void MockServer::stop() {
  if (thread_.joinable()) {
    impl_->shutdown.store(true);
    impl_->svr.stop();
    thread_.join();
  }
}

std::string MockServer::base_url() const {
  return "http://" + host_ + ":" + std::to_string(port_);
}

}  // namespace speedkit
