// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#include "speedkit/embed_client.hpp"

#include <cctype>
#include <chrono>
#include <filesystem>
#include <stdexcept>
#include <thread>

#include "speedkit/http.hpp"
#include "speedkit/util.hpp"

namespace speedkit {

namespace {

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  }
  return out;
}

struct ParsedUrl {
  std::string host;
  int port = 80;
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    throw std::invalid_argument("embeddings endpoint must start with http://");
  }
  std::string rest = url.substr(scheme.size());
  size_t slash = rest.find('/');
  ParsedUrl p;
  p.path = slash == std::string::npos ? "/v1/embeddings" : rest.substr(slash);
  std::string hostport = rest.substr(0, slash);
  size_t colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    p.host = hostport;
  } else {
    p.host = hostport.substr(0, colon);
    p.port = std::stoi(hostport.substr(colon + 1));
  }
  return p;
}

std::vector<std::vector<double>> request_batch(const EmbedProviderConfig& provider,
                                               std::span<const std::string> texts) {
  ParsedUrl url = parse_url(provider.endpoint);
  nlohmann::json body;
  body["model"] = provider.model;
  body["input"] = std::vector<std::string>(texts.begin(), texts.end());
  std::string body_str = body.dump();

  httplib::Headers headers;
  if (!provider.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + provider.api_key);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= provider.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
    }
    httplib::Client cli(url.host, url.port);
    cli.set_read_timeout(std::chrono::milliseconds(static_cast<int64_t>(provider.timeout_s * 1000)));
    auto res = cli.Post(url.path, headers, body_str, "application/json");
    if (!res) {
      last_error = "connect: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server error: " + std::to_string(res->status);
      continue;  // retryable
    }
    if (res->status != 200) {
      throw std::runtime_error("embeddings endpoint returned status " +
                               std::to_string(res->status) + ": " + res->body);
    }
    nlohmann::json j = nlohmann::json::parse(res->body);
    if (!j.contains("data") || !j["data"].is_array() || j["data"].size() != texts.size()) {
      throw std::runtime_error("embeddings response has wrong data length");
    }
    std::vector<std::vector<double>> out(texts.size());
    for (const auto& item : j["data"]) {
      size_t index = item.value("index", out.size());
      if (index >= out.size()) throw std::runtime_error("embeddings response index out of range");
      out[index] = item["embedding"].get<std::vector<double>>();
    }
    return out;
  }
  throw std::runtime_error("embeddings endpoint unreachable after " +
                           std::to_string(provider.max_retries + 1) + " attempts: " + last_error);
}

}  // namespace

EmbeddingSet fetch_embeddings(std::span<const std::string> ids,
                              std::span<const std::string> texts,
                              const EmbedProviderConfig& provider,
                              const std::string& cache_dir) {
  if (ids.size() != texts.size()) throw std::invalid_argument("ids/texts length mismatch");
  if (ids.empty()) throw std::invalid_argument("no texts to embed");
  namespace fs = std::filesystem;
  fs::path dir = fs::path(cache_dir) / sanitize(provider.model);
  fs::create_directories(dir);

  auto cache_path = [&](const std::string& text) {
    return (dir / (sha256_hex(text) + ".json")).string();
  };

  std::vector<std::vector<double>> vectors(texts.size());
  std::vector<size_t> misses;
  for (size_t i = 0; i < texts.size(); ++i) {
    std::string path = cache_path(texts[i]);
    if (fs::exists(path)) {
      vectors[i] = nlohmann::json::parse(read_text_file(path)).get<std::vector<double>>();
    } else {
      // identical texts share one cache entry and one fetch
      bool queued = false;
      for (size_t m : misses) queued = queued || texts[m] == texts[i];
      if (!queued) misses.push_back(i);
    }
  }

  for (size_t start = 0; start < misses.size(); start += static_cast<size_t>(provider.batch_size)) {
    size_t end = std::min(misses.size(), start + static_cast<size_t>(provider.batch_size));
    std::vector<std::string> batch;
    for (size_t b = start; b < end; ++b) batch.push_back(texts[misses[b]]);
    auto fetched = request_batch(provider, batch);
    for (size_t b = start; b < end; ++b) {
      vectors[misses[b]] = fetched[b - start];
      write_text_file_atomic(cache_path(texts[misses[b]]),
                             nlohmann::json(fetched[b - start]).dump());
    }
  }
  // fill rows that were deduplicated onto an earlier miss
  for (size_t i = 0; i < texts.size(); ++i) {
    if (vectors[i].empty()) {
      vectors[i] = nlohmann::json::parse(read_text_file(cache_path(texts[i])))
                       .get<std::vector<double>>();
    }
  }

  EmbeddingSet emb;
  emb.ids.assign(ids.begin(), ids.end());
  emb.dim = vectors[0].size();
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != emb.dim) {
      throw std::runtime_error("embedding dimension mismatch at " + ids[i] + ": " +
                               std::to_string(vectors[i].size()) + " vs " +
                               std::to_string(emb.dim));
    }
    emb.data.insert(emb.data.end(), vectors[i].begin(), vectors[i].end());
  }
  emb.validate();
  return normalize_rows(std::move(emb));
}

}  // namespace speedkit
