// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>

#include "speedkit/curation.hpp"

namespace speedkit {

struct EmbedProviderConfig {
  std::string endpoint;  // e.g. http://host:port/v1/embeddings
  std::string model = "text-embedding-3-large";
  std::string api_key;   // Authorization: Bearer <key> when set
  int batch_size = 64;
  int max_retries = 3;
  double timeout_s = 60.0;
};

/// One normalized vector per text, in input order. Vectors are cached on
/// disk under cache_dir/<model>/<sha256(text)>.json (raw, pre-normalization)
/// and cached texts never touch the network.
EmbeddingSet fetch_embeddings(std::span<const std::string> ids,
                              std::span<const std::string> texts,
                              const EmbedProviderConfig& provider,
                              const std::string& cache_dir);

}  // namespace speedkit
