// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace speedkit {

/// Pluggable tokenizer. Contract: encode is deterministic, and
/// encode(decode(ids)) == ids for any ids produced by encode (re-encode
/// stability). decode(encode(text)) need not reproduce the exact text for
/// lossy tokenizers (whitespace normalization).
class TokenizerProvider {
 public:
  virtual ~TokenizerProvider() = default;
  virtual const std::string& id() const = 0;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const int> ids) const = 0;

  size_t count(std::string_view text) const { return encode(text).size(); }
};

using TokenizerPtr = std::shared_ptr<const TokenizerProvider>;

/// One token per byte, token id == byte value. Lossless.
TokenizerPtr make_byte_tokenizer();

/// One token per whitespace-separated word; ids assigned per instance in
/// first-seen order. decode joins with single spaces.
TokenizerPtr make_whitespace_tokenizer();

/// Greedy longest-match over a vocabulary loaded from a file. Two formats
/// are auto-detected: tiktoken-style "base64token rank" lines (o200k_base
/// ships in this shape) and plain one-token-per-line (id = line number).
/// Bytes not covered by the vocabulary fall back to single-byte tokens.
TokenizerPtr make_vocab_tokenizer(const std::string& path);

/// spec: "byte" | "whitespace" | "vocab:<path>"
TokenizerPtr make_tokenizer(const std::string& spec);

}  // namespace speedkit
