// Copyright (c) 2026 speedkit contributors
// SPDX-License-Identifier: Apache-2.0
#include "speedkit/curation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "speedkit/util.hpp"

namespace speedkit {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_subset(const EmbeddingSet& emb, std::span<const int> S) {
  for (int i : S) {
    if (i < 0 || static_cast<size_t>(i) >= emb.size()) {
      throw std::out_of_range("selection index out of range: " + std::to_string(i));
    }
  }
}

void check_k(const EmbeddingSet& emb, int k) {
  if (k < 1 || static_cast<size_t>(k) > emb.size()) {
    throw std::invalid_argument("k out of range: k=" + std::to_string(k) +
                                ", N=" + std::to_string(emb.size()));
  }
}

// total similarity of every row against the rows indexed by S
std::vector<double> similarity_to_set(const EmbeddingSet& emb, std::span<const int> S) {
  std::vector<double> m(emb.size(), 0.0);
  for (int i : S) {
    auto xi = emb.row(static_cast<size_t>(i));
    for (size_t j = 0; j < emb.size(); ++j) m[j] += dot(emb.row(j), xi);
  }
  return m;
}

Selection finalize(const EmbeddingSet& emb, std::vector<int> idx, SelectMethod method,
                   uint64_t seed, std::string warning = {}) {
  std::sort(idx.begin(), idx.end());
  Selection sel;
  sel.objective = pairwise_objective(emb, idx);
  sel.indices = std::move(idx);
  sel.method = method;
  sel.seed = seed;
  sel.warning = std::move(warning);
  return sel;
}

}  // namespace

void EmbeddingSet::validate() const {
  if (ids.empty()) throw std::invalid_argument("embedding set is empty");
  if (dim == 0 || data.size() != ids.size() * dim) {
    throw std::invalid_argument("embedding data shape mismatch");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate embedding id: " + id);
  }
}

const char* select_method_name(SelectMethod m) {
  switch (m) {
    case SelectMethod::greedy: return "greedy";
    case SelectMethod::greedy_swap: return "greedy_swap";
    case SelectMethod::qp: return "qp";
    case SelectMethod::random: return "random";
    case SelectMethod::bruteforce: return "bruteforce";
  }
  return "?";
}

EmbeddingSet normalize_rows(EmbeddingSet emb) {
  for (size_t i = 0; i < emb.size(); ++i) {
    double* r = emb.row_mut(i);
    double norm = std::sqrt(dot({r, emb.dim}, {r, emb.dim}));
    if (norm == 0.0 || !std::isfinite(norm)) {
      throw std::invalid_argument("cannot normalize zero row at index " + std::to_string(i));
    }
    for (size_t j = 0; j < emb.dim; ++j) r[j] /= norm;
  }
  return emb;
}

double pairwise_objective(const EmbeddingSet& emb, std::span<const int> S) {
  check_subset(emb, S);
  double obj = 0.0;
  for (size_t a = 0; a < S.size(); ++a) {
    for (size_t b = a + 1; b < S.size(); ++b) {
      obj += 2.0 * dot(emb.row(static_cast<size_t>(S[a])), emb.row(static_cast<size_t>(S[b])));
    }
  }
  return obj;
}

double mean_pairwise_similarity(const EmbeddingSet& emb, std::span<const int> S) {
  if (S.size() < 2) throw std::invalid_argument("mean_pairwise_similarity requires |S| >= 2");
  double n = static_cast<double>(S.size());
  return pairwise_objective(emb, S) / (n * (n - 1.0));
}

Selection greedy_select(const EmbeddingSet& emb, int k, uint64_t seed) {
  emb.validate();
  check_k(emb, k);
  std::mt19937_64 rng(seed);
  size_t n = emb.size();
  std::vector<int> S;
  S.reserve(static_cast<size_t>(k));
  std::vector<char> in_S(n, 0);

  int first = static_cast<int>(std::uniform_int_distribution<size_t>(0, n - 1)(rng));
  S.push_back(first);
  in_S[static_cast<size_t>(first)] = 1;

  // m[j] = sum_{i in S} <x_j, x_i>, maintained incrementally
  std::vector<double> m(n, 0.0);
  auto add_to_m = [&](int idx) {
    auto xi = emb.row(static_cast<size_t>(idx));
    for (size_t j = 0; j < n; ++j) m[j] += dot(emb.row(j), xi);
  };
  add_to_m(first);

  while (S.size() < static_cast<size_t>(k)) {
    int best = -1;
    double best_m = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
      if (in_S[j]) continue;
      if (m[j] < best_m) {
        best_m = m[j];
        best = static_cast<int>(j);
      }
    }
    S.push_back(best);
    in_S[static_cast<size_t>(best)] = 1;
    add_to_m(best);
  }
  return finalize(emb, std::move(S), SelectMethod::greedy, seed);
}

Selection swap_refine(const EmbeddingSet& emb, Selection sel, int max_iter) {
  emb.validate();
  check_subset(emb, sel.indices);
  constexpr double kImproveEps = 1e-9;  // "strictly decreases" with float-tie guard
  size_t n = emb.size();
  std::vector<int> S = sel.indices;
  std::vector<char> in_S(n, 0);
  for (int i : S) in_S[static_cast<size_t>(i)] = 1;

  std::vector<double> m = similarity_to_set(emb, S);

  for (int iter = 0; iter < max_iter; ++iter) {
    double best_delta = -kImproveEps;
    int best_out = -1, best_in = -1;
    for (int out : S) {
      auto xo = emb.row(static_cast<size_t>(out));
      double self = dot(xo, xo);
      double out_term = m[static_cast<size_t>(out)] - self;
      for (size_t in = 0; in < n; ++in) {
        if (in_S[in]) continue;
        double delta = (m[in] - dot(emb.row(in), xo)) - out_term;
        if (delta < best_delta) {
          best_delta = delta;
          best_out = out;
          best_in = static_cast<int>(in);
        }
      }
    }
    if (best_out < 0) break;  // locally optimal

    auto x_in = emb.row(static_cast<size_t>(best_in));
    auto x_out = emb.row(static_cast<size_t>(best_out));
    for (size_t j = 0; j < n; ++j) m[j] += dot(emb.row(j), x_in) - dot(emb.row(j), x_out);
    in_S[static_cast<size_t>(best_out)] = 0;
    in_S[static_cast<size_t>(best_in)] = 1;
    *std::find(S.begin(), S.end(), best_out) = best_in;
  }
  return finalize(emb, std::move(S), SelectMethod::greedy_swap, sel.seed, sel.warning);
}

Selection select_diverse(const EmbeddingSet& emb, int k, uint64_t seed, int max_iter,
                         int restarts) {
  Selection best = swap_refine(emb, greedy_select(emb, k, seed), max_iter);
  for (int r = 1; r < restarts; ++r) {
    Selection cand = swap_refine(emb, greedy_select(emb, k, seed + static_cast<uint64_t>(r)),
                                 max_iter);
    if (cand.objective < best.objective) best = cand;
  }
  best.seed = seed;
  return best;
}

std::vector<double> project_capped_simplex(std::vector<double> w, double k) {
  if (w.empty()) throw std::invalid_argument("empty weight vector");
  if (k < 0.0 || k > static_cast<double>(w.size())) {
    throw std::invalid_argument("capped simplex budget out of range");
  }
  auto mass = [&](double shift) {
    double s = 0.0;
    for (double v : w) s += std::clamp(v - shift, 0.0, 1.0);
    return s;
  };
  double lo = *std::min_element(w.begin(), w.end()) - 1.0;
  double hi = *std::max_element(w.begin(), w.end());
  // mass(lo) = N >= k, mass(hi) = 0 <= k; bisect the monotone mass function
  for (int it = 0; it < 100; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mass(mid) >= k) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double shift = 0.5 * (lo + hi);
  for (double& v : w) v = std::clamp(v - shift, 0.0, 1.0);
  // absorb the residual bisection error on the interior coordinates
  double resid = k;
  for (double v : w) resid -= v;
  if (resid != 0.0) {
    size_t interior = 0;
    for (double v : w) {
      if (v > 0.0 && v < 1.0) ++interior;
    }
    if (interior > 0) {
      double adj = resid / static_cast<double>(interior);
      for (double& v : w) {
        if (v > 0.0 && v < 1.0) v = std::clamp(v + adj, 0.0, 1.0);
      }
    }
  }
  return w;
}

Selection qp_select(const EmbeddingSet& emb, int k, QpOptions opts) {
  emb.validate();
  check_k(emb, k);
  size_t n = emb.size();
  size_t d = emb.dim;

  // The quadratic is the off-diagonal part of w' G w (G = X X'): at binary
  // w it equals the pairwise objective exactly, while the raw form adds a
  // sum w_i^2 term that drags the relaxed minimizer toward uniform weights
  // and rounds poorly. Gradient 2 (G w - diag(G) w), with G w factored as
  // X (X' w) so G is never materialized.
  std::vector<double> self_dot(n);
  for (size_t i = 0; i < n; ++i) self_dot[i] = dot(emb.row(i), emb.row(i));

  auto grad = [&](const std::vector<double>& w) {
    std::vector<double> xt_w(d, 0.0);
    for (size_t i = 0; i < n; ++i) {
      auto xi = emb.row(i);
      for (size_t j = 0; j < d; ++j) xt_w[j] += w[i] * xi[j];
    }
    std::vector<double> g(n);
    for (size_t i = 0; i < n; ++i) {
      g[i] = 2.0 * (dot(emb.row(i), {xt_w.data(), d}) - self_dot[i] * w[i]);
    }
    return g;
  };

  double step = opts.step;
  if (step <= 0.0) {
    // power iteration for lambda_max(G) bounds the off-diagonal spectrum
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    double lam = 1.0;
    for (int it = 0; it < 30; ++it) {
      std::vector<double> xt_v(d, 0.0);
      for (size_t i = 0; i < n; ++i) {
        auto xi = emb.row(i);
        for (size_t j = 0; j < d; ++j) xt_v[j] += v[i] * xi[j];
      }
      std::vector<double> gv(n);
      for (size_t i = 0; i < n; ++i) gv[i] = dot(emb.row(i), {xt_v.data(), d});
      double norm = std::sqrt(dot({gv.data(), n}, {gv.data(), n}));
      if (norm <= 0.0) break;
      lam = norm;
      for (size_t i = 0; i < n; ++i) v[i] = gv[i] / norm;
    }
    double max_diag = *std::max_element(self_dot.begin(), self_dot.end());
    step = 0.5 / std::max(lam + max_diag, 1e-12);
  }

  const double uniform = static_cast<double>(k) / static_cast<double>(n);
  auto descend = [&](std::vector<double> w, bool& converged) {
    converged = false;
    w = project_capped_simplex(std::move(w), static_cast<double>(k));
    for (int it = 0; it < opts.iters; ++it) {
      std::vector<double> g = grad(w);
      std::vector<double> next(n);
      for (size_t i = 0; i < n; ++i) next[i] = w[i] - step * g[i];
      next = project_capped_simplex(std::move(next), static_cast<double>(k));
      double max_change = 0.0;
      for (size_t i = 0; i < n; ++i) max_change = std::max(max_change, std::abs(next[i] - w[i]));
      w = std::move(next);
      if (max_change < 1e-10) {
        converged = true;
        break;
      }
    }
    double sum = 0.0;
    for (double v : w) sum += v;
    if (std::abs(sum - static_cast<double>(k)) > 1e-6) {
      throw std::runtime_error("qp_select: projection failed to satisfy the budget constraint");
    }
    return w;
  };

  // round by taking the k largest weights, ties toward lower index
  auto round_top_k = [&](const std::vector<double>& w) {
    std::vector<int> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return w[static_cast<size_t>(a)] > w[static_cast<size_t>(b)];
    });
    return std::vector<int>(order.begin(), order.begin() + k);
  };

  // the uniform point is a near-stationary saddle of the off-diagonal
  // quadratic; perturbed restarts escape it, the uniform start stays first
  std::mt19937_64 perturb_rng(0x5eedc0de);
  std::normal_distribution<double> noise(0.0, 0.25 * uniform);
  std::vector<int> best_S;
  double best_obj = std::numeric_limits<double>::infinity();
  bool any_converged = false;
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    std::vector<double> w0(n, uniform);
    if (r > 0) {
      for (double& v : w0) v += noise(perturb_rng);
    }
    bool converged = false;
    std::vector<double> w = descend(std::move(w0), converged);
    any_converged = any_converged || converged;
    std::vector<int> S = round_top_k(w);
    double obj = pairwise_objective(emb, S);
    if (obj < best_obj) {
      best_obj = obj;
      best_S = std::move(S);
    }
  }
  return finalize(emb, std::move(best_S), SelectMethod::qp, 0,
                  any_converged ? std::string() : "qp did not converge within iteration budget");
}

Selection random_select(const EmbeddingSet& emb, int k, uint64_t seed) {
  emb.validate();
  check_k(emb, k);
  std::mt19937_64 rng(seed);
  std::vector<int> all(emb.size());
  for (size_t i = 0; i < emb.size(); ++i) all[i] = static_cast<int>(i);
  std::vector<int> S;
  std::sample(all.begin(), all.end(), std::back_inserter(S), k, rng);
  return finalize(emb, std::move(S), SelectMethod::random, seed);
}

Selection brute_force_select(const EmbeddingSet& emb, int k) {
  emb.validate();
  check_k(emb, k);
  size_t n = emb.size();
  double combos = 1.0;
  for (int i = 0; i < k; ++i) combos *= static_cast<double>(n - static_cast<size_t>(i)) / (i + 1);
  if (combos > 5e6) throw std::invalid_argument("brute force too large: C(N,k) > 5e6");

  std::vector<int> cur(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) cur[static_cast<size_t>(i)] = i;
  std::vector<int> best = cur;
  double best_obj = pairwise_objective(emb, cur);
  auto next_combo = [&]() {
    int i = k - 1;
    while (i >= 0 && cur[static_cast<size_t>(i)] == static_cast<int>(n) - k + i) --i;
    if (i < 0) return false;
    ++cur[static_cast<size_t>(i)];
    for (int j = i + 1; j < k; ++j) cur[static_cast<size_t>(j)] = cur[static_cast<size_t>(j - 1)] + 1;
    return true;
  };
  while (next_combo()) {
    double obj = pairwise_objective(emb, cur);
    if (obj < best_obj) {
      best_obj = obj;
      best = cur;
    }
  }
  Selection sel = finalize(emb, std::move(best), SelectMethod::bruteforce, 0);
  return sel;
}

void write_similarity_matrix_csv(const EmbeddingSet& emb, std::span<const int> S,
                                 const std::string& path) {
  check_subset(emb, S);
  std::ostringstream out;
  out.precision(10);
  out << "id";
  for (int i : S) out << ',' << emb.ids[static_cast<size_t>(i)];
  out << '\n';
  for (size_t a = 0; a < S.size(); ++a) {
    out << emb.ids[static_cast<size_t>(S[a])];
    for (size_t b = 0; b < S.size(); ++b) {
      double v = a == b ? 1.0
                        : dot(emb.row(static_cast<size_t>(S[a])), emb.row(static_cast<size_t>(S[b])));
      out << ',' << v;
    }
    out << '\n';
  }
  write_text_file_atomic(path, out.str());
}

EmbeddingSet load_embeddings_jsonl(const std::string& path) {
  auto lines = split_lines(read_text_file(path));
  EmbeddingSet emb;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": parse error: " + e.what());
    }
    if (!j.contains("id") || !j.contains("embedding") || !j["embedding"].is_array()) {
      throw std::runtime_error(path + ":" + std::to_string(i + 1) +
                               ": record needs id and embedding fields");
    }
    std::vector<double> vec = j["embedding"].get<std::vector<double>>();
    if (emb.dim == 0) emb.dim = vec.size();
    if (vec.size() != emb.dim) {
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": dimension mismatch (" +
                               std::to_string(vec.size()) + " vs " + std::to_string(emb.dim) + ")");
    }
    emb.ids.push_back(j["id"].get<std::string>());
    emb.data.insert(emb.data.end(), vec.begin(), vec.end());
  }
  emb.validate();
  return normalize_rows(std::move(emb));
}

void save_embeddings_jsonl(const std::string& path, const EmbeddingSet& emb) {
  std::string out;
  for (size_t i = 0; i < emb.size(); ++i) {
    nlohmann::json j;
    j["id"] = emb.ids[i];
    auto r = emb.row(i);
    j["embedding"] = std::vector<double>(r.begin(), r.end());
    out += j.dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

nlohmann::json selection_to_json(const Selection& sel, const EmbeddingSet& emb) {
  nlohmann::json j;
  j["method"] = select_method_name(sel.method);
  j["k"] = sel.indices.size();
  j["seed"] = sel.seed;
  j["indices"] = sel.indices;
  std::vector<std::string> ids;
  ids.reserve(sel.indices.size());
  for (int i : sel.indices) ids.push_back(emb.ids[static_cast<size_t>(i)]);
  j["ids"] = ids;
  j["objective"] = sel.objective;
  if (sel.indices.size() >= 2) {
    j["mean_similarity"] = mean_pairwise_similarity(emb, sel.indices);
  } else {
    j["mean_similarity"] = nullptr;
  }
  if (!sel.warning.empty()) j["warning"] = sel.warning;
  return j;
}

}  // namespace speedkit
