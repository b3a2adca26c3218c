// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#include "speedkit/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

#include "speedkit/util.hpp"

namespace speedkit {

namespace {

class ByteTokenizer final : public TokenizerProvider {
 public:
  const std::string& id() const override { return id_; }

  std::vector<int> encode(std::string_view text) const override {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
  }

  std::string decode(std::span<const int> ids) const override {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (id < 0 || id > 255) {
        throw std::invalid_argument("byte tokenizer: id out of range: " + std::to_string(id));
      }
      out.push_back(static_cast<char>(id));
    }
    return out;
  }

 private:
  std::string id_ = "byte";
};

class WhitespaceTokenizer final : public TokenizerProvider {
 public:
  const std::string& id() const override { return id_; }

  std::vector<int> encode(std::string_view text) const override {
    std::vector<int> ids;
    size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      size_t start = i;
      while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      if (i > start) ids.push_back(intern(std::string(text.substr(start, i - start))));
    }
    return ids;
  }

  std::string decode(std::span<const int> ids) const override {
    std::lock_guard<std::mutex> lock(mu_);
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      int id = ids[i];
      if (id < 0 || static_cast<size_t>(id) >= words_.size()) {
        throw std::invalid_argument("whitespace tokenizer: unknown id: " + std::to_string(id));
      }
      if (i) out.push_back(' ');
      out += words_[static_cast<size_t>(id)];
    }
    return out;
  }

 private:
  int intern(std::string word) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = vocab_.find(word);
    if (it != vocab_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    words_.push_back(word);
    vocab_.emplace(std::move(word), id);
    return id;
  }

  std::string id_ = "whitespace";
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, int> vocab_;
  mutable std::vector<std::string> words_;
};

class VocabTokenizer final : public TokenizerProvider {
 public:
  explicit VocabTokenizer(const std::string& path) : id_("vocab:" + path) {
    auto lines = split_lines(read_text_file(path));
    if (lines.empty()) throw std::runtime_error("vocab file is empty: " + path);
    bool tiktoken = lines[0].find(' ') != std::string::npos;
    int max_id = -1;
    for (size_t ln = 0; ln < lines.size(); ++ln) {
      const std::string& line = lines[ln];
      if (line.empty()) continue;
      std::string tok;
      int rank;
      if (tiktoken) {
        size_t sp = line.find(' ');
        if (sp == std::string::npos) {
          throw std::runtime_error(path + ":" + std::to_string(ln + 1) + ": malformed vocab line");
        }
        tok = base64_decode(std::string_view(line).substr(0, sp));
        rank = std::stoi(line.substr(sp + 1));
      } else {
        tok = line;
        rank = static_cast<int>(ln);
      }
      if (tok.empty()) continue;
      vocab_.emplace(tok, rank);
      if (rank > max_id) max_id = rank;
      max_len_ = std::max(max_len_, tok.size());
      if (static_cast<size_t>(rank) >= pieces_.size()) pieces_.resize(static_cast<size_t>(rank) + 1);
      pieces_[static_cast<size_t>(rank)] = tok;
    }
    byte_base_ = max_id + 1;
  }

  const std::string& id() const override { return id_; }

  std::vector<int> encode(std::string_view text) const override {
    std::vector<int> ids;
    size_t pos = 0;
    while (pos < text.size()) {
      size_t longest = std::min(max_len_, text.size() - pos);
      int match = -1;
      for (size_t len = longest; len >= 1; --len) {
        auto it = vocab_.find(std::string(text.substr(pos, len)));
        if (it != vocab_.end()) {
          match = it->second;
          pos += len;
          break;
        }
      }
      if (match < 0) {
        match = byte_base_ + static_cast<unsigned char>(text[pos]);
        ++pos;
      }
      ids.push_back(match);
    }
    return ids;
  }

  std::string decode(std::span<const int> ids) const override {
    std::string out;
    for (int id : ids) {
      if (id >= byte_base_ && id < byte_base_ + 256) {
        out.push_back(static_cast<char>(id - byte_base_));
      } else if (id >= 0 && static_cast<size_t>(id) < pieces_.size() && !pieces_[static_cast<size_t>(id)].empty()) {
        out += pieces_[static_cast<size_t>(id)];
      } else {
        throw std::invalid_argument("vocab tokenizer: unknown id: " + std::to_string(id));
      }
    }
    return out;
  }

 private:
  std::string id_;
  std::unordered_map<std::string, int> vocab_;
  std::vector<std::string> pieces_;
  size_t max_len_ = 0;
  int byte_base_ = 0;
};

}  // namespace

TokenizerPtr make_byte_tokenizer() { return std::make_shared<ByteTokenizer>(); }
TokenizerPtr make_whitespace_tokenizer() { return std::make_shared<WhitespaceTokenizer>(); }
TokenizerPtr make_vocab_tokenizer(const std::string& path) {
  return std::make_shared<VocabTokenizer>(path);
}

TokenizerPtr make_tokenizer(const std::string& spec) {
  if (spec == "byte") return make_byte_tokenizer();
  if (spec == "whitespace") return make_whitespace_tokenizer();
  if (spec.rfind("vocab:", 0) == 0) return make_vocab_tokenizer(spec.substr(6));
  throw std::invalid_argument("unknown tokenizer: " + spec +
                              " (expected byte, whitespace, or vocab:<path>)");
}

}  // namespace speedkit
