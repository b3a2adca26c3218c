// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "speedkit/tokenizer.hpp"

namespace speedkit {

enum class Role { system, user, assistant };

Role role_from_string(const std::string& s);
const char* role_to_string(Role r);

struct Turn {
  Role role = Role::user;
  std::string content;
};

/// One benchmark prompt. `extra` holds the original record so unknown
/// fields survive a load/save round trip.
struct Sample {
  std::string id;
  std::string category;
  std::optional<std::string> subcategory;
  std::vector<Turn> turns;
  bool multiturn = false;
  std::optional<std::string> difficulty;  // "easy" | "hard"
  std::string source;
  nlohmann::json extra = nlohmann::json::object();
};

/// Throws std::invalid_argument naming the offending field.
void validate_sample(const Sample& s);

Sample sample_from_json(const nlohmann::json& j);
nlohmann::json sample_to_json(const Sample& s);

enum class SampleFormat { jsonl };

/// Loads and validates a sample file. Errors carry "<path>:<line>" and the
/// duplicate-id error cites both offending lines.
std::vector<Sample> load_samples(const std::string& path,
                                 SampleFormat format = SampleFormat::jsonl);

void save_samples(const std::string& path, const std::vector<Sample>& samples);

/// All turn contents joined with '\n' in render order.
std::string flatten_text(const Sample& s);

struct BucketSpec {
  int target_isl = 1024;  // defaults sweep {1024, 2048, 8192, 16384, 32768}
  std::string pad_suffix = "please answer now";
  std::string tokenizer_id = "byte";

  void validate(const TokenizerProvider& tok) const;
};

/// Pad-or-truncate so the flattened prompt tokenizes to exactly
/// spec.target_isl tokens. Truncation drops trailing tokens only; padding
/// appends " " + pad_suffix repetitions, then trims trailing tokens.
/// Output is a single user turn unless the input already fits exactly.
Sample fit_to_isl(const Sample& sample, const BucketSpec& spec,
                  const TokenizerProvider& tok);

struct ChatTemplate {
  enum class BosPolicy { omit, prepend };
  BosPolicy bos = BosPolicy::omit;
  int bos_id = -1;
  // role -> {prefix, suffix} wrapper strings; empty map = no wrapping
  std::map<Role, std::pair<std::string, std::string>> wrappers;
};

/// Deterministic token-id rendering of a sample: wrapped turn strings are
/// concatenated and encoded in one pass, then BOS is prepended per policy.
std::vector<int> render_prompt(const Sample& sample, const ChatTemplate& tpl,
                               const TokenizerProvider& tok);

}  // namespace speedkit
