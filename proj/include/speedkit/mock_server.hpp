// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace speedkit {

/// Ground-truth model for the oracle endpoint: a stationary Bernoulli
/// acceptance chain plus an affine latency model.
struct MockConfig {
  int gamma = 3;
  std::vector<double> ar_true{0.8, 0.6, 0.4};
  double t_base_ms = 10.0;
  double t_per_token_ms = 1.0;
  double t_per_conc_ms = 0.0;
  int output_tokens_target = 256;

  enum class SeedMode { per_request_id, global_rng };
  SeedMode seed_mode = SeedMode::per_request_id;

  enum class ContentMode { fixed_token, echo };
  ContentMode content_mode = ContentMode::fixed_token;

  // prompt tag ("low"/"mixed"/"high", or any workload tag) -> ar override
  std::map<std::string, std::vector<double>> entropy_profile;

  uint64_t seed = 0;
  int listener_threads = 96;  // must exceed the peak streaming concurrency

  void validate() const;
};

MockConfig mock_config_from_json(const nlohmann::json& j);
nlohmann::json mock_config_to_json(const MockConfig& cfg);
std::string mock_config_hash(const MockConfig& cfg);

struct StepOutcome {
  int accepted = 0;          // longest accepted draft prefix, in [0, gamma]
  int emitted = 1;           // accepted + 1 (verification token is free)
};

/// Sequential Bernoulli chain over the conditional acceptance rates.
StepOutcome sample_step(std::span<const double> ar_true, std::mt19937_64& rng);

/// t_base + t_per_token * gamma + t_per_conc * (in_flight - 1) * (gamma + 1).
/// The concurrency term scales with tokens verified per step, which is what
/// makes long drafts lose in the compute-bound regime.
double step_latency_ms(const MockConfig& cfg, int in_flight);

/// Streaming OpenAI-compatible endpoint (/v1/completions and
/// /v1/chat/completions) backed by the acceptance chain, with diagnostics
/// at /__mock/state and /__mock/request?id=<request_id>.
class MockServer {
 public:
  explicit MockServer(MockConfig cfg);
  ~MockServer();

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds and serves on a background thread. port 0 picks a free port.
  /// Returns false on bind failure.
  bool start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  int port() const { return port_; }
  std::string base_url() const;

  int in_flight() const { return in_flight_.load(); }
  int peak_in_flight() const { return peak_in_flight_.load(); }
  int64_t served() const { return served_.load(); }
  void reset_peak() { peak_in_flight_.store(in_flight_.load()); }

  const MockConfig& config() const { return cfg_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  MockConfig cfg_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
  std::atomic<int64_t> served_{0};
};

}  // namespace speedkit
