// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#include "speedkit/dataset.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "speedkit/util.hpp"

namespace speedkit {

Role role_from_string(const std::string& s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw std::invalid_argument("unknown role: " + s);
}

const char* role_to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

void validate_sample(const Sample& s) {
  if (s.id.empty()) throw std::invalid_argument("field id: must be non-empty");
  if (s.category.empty()) throw std::invalid_argument("field category: must be non-empty");
  if (s.turns.empty()) throw std::invalid_argument("field turns: must be non-empty");
  size_t user_turns = 0;
  bool expect_user = true;
  for (size_t i = 0; i < s.turns.size(); ++i) {
    const Turn& t = s.turns[i];
    if (t.content.empty()) {
      throw std::invalid_argument("field turns[" + std::to_string(i) + "].content: must be non-empty");
    }
    if (t.role == Role::system) {
      if (i != 0) {
        throw std::invalid_argument("field turns[" + std::to_string(i) +
                                    "].role: system allowed only as leading turn");
      }
      continue;
    }
    Role expected = expect_user ? Role::user : Role::assistant;
    if (t.role != expected) {
      throw std::invalid_argument("field turns[" + std::to_string(i) +
                                  "].role: expected " + role_to_string(expected) +
                                  " (roles must alternate user/assistant)");
    }
    if (t.role == Role::user) ++user_turns;
    expect_user = !expect_user;
  }
  if (user_turns == 0) throw std::invalid_argument("field turns: needs at least one user turn");
  if (s.multiturn != (user_turns > 1)) {
    throw std::invalid_argument("field multiturn: must equal (count of user turns > 1)");
  }
  if (s.difficulty && *s.difficulty != "easy" && *s.difficulty != "hard") {
    throw std::invalid_argument("field difficulty: must be easy or hard");
  }
}

Sample sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("sample record must be an object");
  Sample s;
  s.extra = j;
  s.id = j.value("id", "");
  s.category = j.value("category", "");
  if (j.contains("subcategory") && !j["subcategory"].is_null()) {
    s.subcategory = j["subcategory"].get<std::string>();
  }
  if (j.contains("difficulty") && !j["difficulty"].is_null()) {
    s.difficulty = j["difficulty"].get<std::string>();
  }
  s.source = j.value("source", "");
  if (!j.contains("turns") || !j["turns"].is_array()) {
    throw std::invalid_argument("field turns: missing or not an array");
  }
  for (const auto& tj : j["turns"]) {
    Turn t;
    t.role = role_from_string(tj.value("role", ""));
    t.content = tj.value("content", "");
    s.turns.push_back(std::move(t));
  }
  if (!j.contains("multiturn") || !j["multiturn"].is_boolean()) {
    throw std::invalid_argument("field multiturn: missing or not a boolean");
  }
  s.multiturn = j["multiturn"].get<bool>();
  validate_sample(s);
  return s;
}

nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j = s.extra.is_object() ? s.extra : nlohmann::json::object();
  j["id"] = s.id;
  j["category"] = s.category;
  if (s.subcategory) j["subcategory"] = *s.subcategory;
  nlohmann::json turns = nlohmann::json::array();
  for (const Turn& t : s.turns) {
    turns.push_back({{"role", role_to_string(t.role)}, {"content", t.content}});
  }
  j["turns"] = std::move(turns);
  j["multiturn"] = s.multiturn;
  if (s.difficulty) j["difficulty"] = *s.difficulty;
  j["source"] = s.source;
  return j;
}

std::vector<Sample> load_samples(const std::string& path, SampleFormat format) {
  if (format != SampleFormat::jsonl) throw std::invalid_argument("unsupported sample format");
  auto lines = split_lines(read_text_file(path));
  std::vector<Sample> samples;
  std::unordered_map<std::string, size_t> seen;  // id -> 1-based line
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    size_t lineno = i + 1;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
    }
    Sample s;
    try {
      s = sample_from_json(j);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto [it, inserted] = seen.emplace(s.id, lineno);
    if (!inserted) {
      throw std::runtime_error(path + ": duplicate id \"" + s.id + "\" on lines " +
                               std::to_string(it->second) + " and " + std::to_string(lineno));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_samples(const std::string& path, const std::vector<Sample>& samples) {
  std::string out;
  for (const Sample& s : samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

std::string flatten_text(const Sample& s) {
  std::string text;
  for (size_t i = 0; i < s.turns.size(); ++i) {
    if (i) text.push_back('\n');
    text += s.turns[i].content;
  }
  return text;
}

void BucketSpec::validate(const TokenizerProvider& tok) const {
  if (target_isl < 1) throw std::invalid_argument("target_isl must be >= 1");
  size_t suffix_tokens = tok.count(pad_suffix);
  if (suffix_tokens < 1) throw std::invalid_argument("pad_suffix must tokenize to >= 1 token");
  if (static_cast<size_t>(target_isl) <= suffix_tokens) {
    throw std::invalid_argument("target_isl (" + std::to_string(target_isl) +
                                ") must exceed pad_suffix token count (" +
                                std::to_string(suffix_tokens) + ")");
  }
}

Sample fit_to_isl(const Sample& sample, const BucketSpec& spec, const TokenizerProvider& tok) {
  spec.validate(tok);
  size_t user_turns = 0;
  for (const Turn& t : sample.turns) {
    if (t.role == Role::user) ++user_turns;
  }
  if (user_turns == 0) throw std::invalid_argument("sample has no user turn: " + sample.id);

  const size_t target = static_cast<size_t>(spec.target_isl);
  std::string text = flatten_text(sample);
  std::vector<int> toks = tok.encode(text);

  if (toks.size() == target && sample.turns.size() == 1 && sample.turns[0].role == Role::user) {
    return sample;  // already exact
  }

  if (toks.size() < target) {
    const std::string pad_unit = " " + spec.pad_suffix;
    size_t unit_tokens = std::max<size_t>(1, tok.count(pad_unit));
    while (toks.size() < target) {
      size_t reps = (target - toks.size()) / unit_tokens + 1;
      std::string padded;
      padded.reserve(text.size() + reps * pad_unit.size());
      padded = text;
      for (size_t r = 0; r < reps; ++r) padded += pad_unit;
      text = std::move(padded);
      toks = tok.encode(text);
    }
  }

  // Trim to the exact count. For the byte and whitespace tokenizers the
  // first pass lands exactly; merge-based tokenizers may re-tokenize a
  // decoded prefix to a different length, so nudge the cut point.
  long k = static_cast<long>(target);
  std::string fitted;
  bool exact = false;
  for (int iter = 0; iter < 16; ++iter) {
    k = std::clamp(k, 1L, static_cast<long>(toks.size()));
    fitted = tok.decode(std::span<const int>(toks.data(), static_cast<size_t>(k)));
    long n = static_cast<long>(tok.count(fitted));
    if (n == static_cast<long>(target)) {
      exact = true;
      break;
    }
    k += static_cast<long>(target) - n;
  }
  if (!exact) {
    throw std::runtime_error("fit_to_isl: could not hit exact token count for sample " +
                             sample.id + " with tokenizer " + tok.id());
  }

  Sample out = sample;
  out.turns = {Turn{Role::user, fitted}};
  out.multiturn = false;
  return out;
}

std::vector<int> render_prompt(const Sample& sample, const ChatTemplate& tpl,
                               const TokenizerProvider& tok) {
  std::string text;
  for (const Turn& t : sample.turns) {
    if (!tpl.wrappers.empty()) {
      auto it = tpl.wrappers.find(t.role);
      if (it == tpl.wrappers.end()) {
        throw std::invalid_argument(std::string("template missing wrapper for role: ") +
                                    role_to_string(t.role));
      }
      text += it->second.first;
      text += t.content;
      text += it->second.second;
    } else {
      text += t.content;
    }
  }
  std::vector<int> ids;
  if (tpl.bos == ChatTemplate::BosPolicy::prepend) {
    if (tpl.bos_id < 0) throw std::invalid_argument("template bos policy is prepend but bos_id unset");
    ids.push_back(tpl.bos_id);
  }
  std::vector<int> body = tok.encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

}  // namespace speedkit
