// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace speedkit {

/// Row-major N x d embedding matrix with per-row sample ids.
struct EmbeddingSet {
  std::vector<std::string> ids;
  size_t dim = 0;
  std::vector<double> data;

  size_t size() const { return ids.size(); }
  std::span<const double> row(size_t i) const {
    return std::span<const double>(data.data() + i * dim, dim);
  }
  double* row_mut(size_t i) { return data.data() + i * dim; }

  /// N >= 1, no duplicate ids, data shape consistent.
  void validate() const;
};

enum class SelectMethod { greedy, greedy_swap, qp, random, bruteforce };

const char* select_method_name(SelectMethod m);

struct Selection {
  std::vector<int> indices;  // sorted ascending, |indices| = k
  double objective = 0.0;    // total pairwise similarity of the set
  SelectMethod method = SelectMethod::greedy;
  uint64_t seed = 0;
  std::string warning;  // e.g. qp non-convergence; empty when clean
};

/// Scales every row to unit Euclidean norm. Throws naming the row index if
/// a row is all zeros.
EmbeddingSet normalize_rows(EmbeddingSet emb);

/// Total pairwise similarity over ordered pairs:
///   sum_{i in S} sum_{j in S, j != i} <x_i, x_j>
double pairwise_objective(const EmbeddingSet& emb, std::span<const int> S);

/// pairwise_objective / (|S| * (|S| - 1)); requires |S| >= 2.
double mean_pairwise_similarity(const EmbeddingSet& emb, std::span<const int> S);

/// Seeds with one random index, then repeatedly appends the candidate with
/// the smallest total similarity to the current set, maintained
/// incrementally. Ties break toward the lowest index.
Selection greedy_select(const EmbeddingSet& emb, int k, uint64_t seed);

/// Steepest-descent single swaps: each sweep applies the (out, in) pair
/// with the most negative objective delta, until no swap improves by more
/// than 1e-9 or max_iter sweeps elapse.
Selection swap_refine(const EmbeddingSet& emb, Selection sel, int max_iter = 100);

/// greedy_select followed by swap_refine. restarts > 1 runs the pipeline
/// from that many greedy seeds (derived from `seed`) and keeps the best.
Selection select_diverse(const EmbeddingSet& emb, int k, uint64_t seed, int max_iter = 100,
                         int restarts = 1);

struct QpOptions {
  int iters = 500;
  double step = 0.0;  // <= 0 picks 0.5 / lambda_max estimate
  // The first start is the uniform k/N point; the rest perturb it to
  // escape the saddle the indefinite quadratic has there. Best rounded
  // objective wins.
  int restarts = 12;
};

/// Projected gradient descent on w' G w over the capped simplex
/// {w in [0,1]^N : sum w = k}, rounded by taking the k largest weights.
Selection qp_select(const EmbeddingSet& emb, int k, QpOptions opts = {});

/// Uniform k-subset without replacement.
Selection random_select(const EmbeddingSet& emb, int k, uint64_t seed);

/// Exhaustive search over all C(N, k) subsets; guarded against blowup.
Selection brute_force_select(const EmbeddingSet& emb, int k);

/// Exact Euclidean projection onto {w in [0,1]^N : sum w = k} (bisection
/// on the shift). Exposed for tests.
std::vector<double> project_capped_simplex(std::vector<double> w, double k);

/// Symmetric cosine-similarity matrix over S as CSV with an id header row
/// and column; diagonal pinned to 1.
void write_similarity_matrix_csv(const EmbeddingSet& emb, std::span<const int> S,
                                 const std::string& path);

/// JSONL records {"id": ..., "embedding": [...]}; rows are normalized on load.
EmbeddingSet load_embeddings_jsonl(const std::string& path);
void save_embeddings_jsonl(const std::string& path, const EmbeddingSet& emb);

/// Record shape: {method, k, seed, indices, ids, objective, mean_similarity}.
nlohmann::json selection_to_json(const Selection& sel, const EmbeddingSet& emb);

}  // namespace speedkit
