#pragma once

// Skip-gram with negative sampling over concept sequences, and the
// embedding-distance queries built on it.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/links.hpp"

namespace linkmine::embed {

struct SkipgramOptions {
  int dims = 100;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  double min_learning_rate_fraction = 1e-4;
  std::uint64_t seed = 1;
  int threads = 1;  // > 1: unsynchronized parallel updates, not reproducible
};

class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::vector<std::string> concepts, RowMatrix vectors)
      : concepts_(std::move(concepts)), vectors_(std::move(vectors)) {
    if (concepts_.size() != vectors_.rows()) throw InvalidInput("embedding: row count mismatch");
    if (!std::is_sorted(concepts_.begin(), concepts_.end()) ||
        std::adjacent_find(concepts_.begin(), concepts_.end()) != concepts_.end())
      throw InvalidInput("embedding: concepts must be sorted and unique");
  }

  std::size_t size() const { return concepts_.size(); }
  std::size_t dims() const { return vectors_.cols(); }
  const std::vector<std::string>& concepts() const { return concepts_; }
  const RowMatrix& matrix() const { return vectors_; }

  std::optional<std::size_t> index(const std::string& c) const {
    auto it = std::lower_bound(concepts_.begin(), concepts_.end(), c);
    if (it == concepts_.end() || *it != c) return std::nullopt;
    return static_cast<std::size_t>(it - concepts_.begin());
  }

  std::optional<std::span<const double>> vector(const std::string& c) const {
    if (auto i = index(c)) return vectors_.row(*i);
    return std::nullopt;
  }

  SkipgramOptions options;  // how the vectors were trained

 private:
  std::vector<std::string> concepts_;
  RowMatrix vectors_;
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without overflow
inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Loss for one (center, context) pair with the given negatives:
/// -log s(center . context) - sum log s(-center . negative).
inline double sgns_loss(std::span<const double> center, std::span<const double> context,
                        const std::vector<std::span<const double>>& negatives) {
  double loss = -log_sigmoid(dot(center, context));
  for (const auto& n : negatives) loss -= log_sigmoid(-dot(center, n));
  return loss;
}

struct SgnsGradient {
  std::vector<double> center;
  std::vector<double> context;
  std::vector<std::vector<double>> negatives;
};

inline SgnsGradient sgns_gradient(std::span<const double> center, std::span<const double> context,
                                  const std::vector<std::span<const double>>& negatives) {
  const std::size_t d = center.size();
  SgnsGradient g;
  g.center.assign(d, 0.0);
  const double gp = sigmoid(dot(center, context)) - 1.0;
  g.context.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    g.center[i] += gp * context[i];
    g.context[i] = gp * center[i];
  }
  for (const auto& n : negatives) {
    const double gn = sigmoid(dot(center, n));
    std::vector<double> gv(d);
    for (std::size_t i = 0; i < d; ++i) {
      g.center[i] += gn * n[i];
      gv[i] = gn * center[i];
    }
    g.negatives.push_back(std::move(gv));
  }
  return g;
}

namespace detail {

// Unigram^0.75 sampler over concept indices.
class NegativeSampler {
 public:
  explicit NegativeSampler(const std::vector<std::int64_t>& counts) {
    double s = 0;
    for (auto c : counts) cum_.push_back(s += std::pow(static_cast<double>(c), 0.75));
  }
  std::uint32_t draw(Rng& rng) const {
    const double u = rng.uniform() * cum_.back();
    auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    if (it == cum_.end()) --it;
    return static_cast<std::uint32_t>(it - cum_.begin());
  }

 private:
  std::vector<double> cum_;
};

// Plain double access in the single-threaded path, relaxed atomics otherwise.
struct PlainAccess {
  static double load(const double& x) { return x; }
  static void add(double& x, double v) { x += v; }
};
struct RelaxedAccess {
  static double load(const double& x) {
    return std::atomic_ref<double>(const_cast<double&>(x)).load(std::memory_order_relaxed);
  }
  static void add(double& x, double v) {
    std::atomic_ref<double> r(x);
    r.store(r.load(std::memory_order_relaxed) + v, std::memory_order_relaxed);
  }
};

struct TrainState {
  std::size_t V = 0, dims = 0;
  std::vector<double> in, out;  // V x dims each
  std::vector<std::vector<std::uint32_t>> seqs;
  std::int64_t total_words = 0;
};

template <class Access>
void train_shard(TrainState& st, const NegativeSampler& sampler, const SkipgramOptions& opt,
                 std::size_t begin, std::size_t end, std::size_t stride, Rng rng,
                 std::atomic<std::int64_t>& processed) {
  const std::size_t D = st.dims;
  std::vector<double> u(D), grad_u(D), v(D);
  const double total = static_cast<double>(st.total_words) * opt.epochs;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t s = begin; s < end; s += stride) {
      const auto& seq = st.seqs[s];
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const double progress = static_cast<double>(processed.fetch_add(1, std::memory_order_relaxed)) / total;
        const double lr = opt.learning_rate * std::max(opt.min_learning_rate_fraction, 1.0 - progress);
        const int reduce = static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.window)));
        const int win = opt.window - reduce;
        const std::size_t lo = i >= static_cast<std::size_t>(win) ? i - win : 0;
        const std::size_t hi = std::min(seq.size() - 1, i + static_cast<std::size_t>(win));
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const std::uint32_t center = seq[i], target = seq[j];
          double* uc = &st.in[center * D];
          for (std::size_t t = 0; t < D; ++t) u[t] = Access::load(uc[t]);
          std::fill(grad_u.begin(), grad_u.end(), 0.0);
          for (int n = -1; n < opt.negatives; ++n) {
            std::uint32_t w = target;
            double label = 1.0;
            if (n >= 0) {
              w = sampler.draw(rng);
              if (w == target) continue;
              label = 0.0;
            }
            double* vw = &st.out[w * D];
            double f = 0;
            for (std::size_t t = 0; t < D; ++t) f += u[t] * (v[t] = Access::load(vw[t]));
            // descent step on -log s(+/- f): coefficient (label - s(f))
            const double g = (label - sigmoid(f)) * lr;
            for (std::size_t t = 0; t < D; ++t) {
              grad_u[t] += g * v[t];
              Access::add(vw[t], g * u[t]);
            }
          }
          for (std::size_t t = 0; t < D; ++t) Access::add(uc[t], grad_u[t]);
        }
      }
    }
  }
}

}  // namespace detail

/// Trains on concept sequences (documents in order, tokens in order).
/// Concepts that never occur get no vector.
inline EmbeddingMatrix train_skipgram(const std::vector<std::vector<std::string>>& sequences,
                                      const SkipgramOptions& opt = {}) {
  if (opt.dims < 1 || opt.window < 1 || opt.negatives < 0 || opt.epochs < 0 || opt.threads < 1)
    throw InvalidInput("skipgram: dims, window and threads must be >= 1; negatives and epochs >= 0");
  if (!(opt.learning_rate > 0)) throw InvalidInput("skipgram: learning rate must be positive");

  std::map<std::string, std::int64_t> freq;
  for (const auto& s : sequences)
    for (const auto& t : s) ++freq[t];
  std::vector<std::string> concepts;
  std::vector<std::int64_t> counts;
  std::unordered_map<std::string, std::uint32_t> id;
  for (const auto& [c, n] : freq) {
    id.emplace(c, static_cast<std::uint32_t>(concepts.size()));
    concepts.push_back(c);
    counts.push_back(n);
  }

  detail::TrainState st;
  st.V = concepts.size();
  st.dims = static_cast<std::size_t>(opt.dims);
  Rng init(opt.seed);
  st.in.resize(st.V * st.dims);
  for (auto& x : st.in) x = (init.uniform() - 0.5) / static_cast<double>(opt.dims);
  st.out.assign(st.V * st.dims, 0.0);
  for (const auto& s : sequences) {
    std::vector<std::uint32_t> ids;
    for (const auto& t : s) ids.push_back(id.at(t));
    st.total_words += static_cast<std::int64_t>(ids.size());
    st.seqs.push_back(std::move(ids));
  }

  if (st.V > 0 && st.total_words > 0 && opt.epochs > 0) {
    detail::NegativeSampler sampler(counts);
    std::atomic<std::int64_t> processed{0};
    if (opt.threads == 1) {
      detail::train_shard<detail::PlainAccess>(st, sampler, opt, 0, st.seqs.size(), 1,
                                               Rng(opt.seed ^ 0x5DEECE66DULL), processed);
    } else {
      std::vector<std::thread> pool;
      const auto T = static_cast<std::size_t>(opt.threads);
      for (std::size_t t = 0; t < T; ++t)
        pool.emplace_back([&, t] {
          detail::train_shard<detail::RelaxedAccess>(st, sampler, opt, t, st.seqs.size(), T,
                                                     Rng(opt.seed ^ (0x5DEECE66DULL + t)), processed);
        });
      for (auto& th : pool) th.join();
    }
  }

  RowMatrix m(st.V, st.dims);
  for (std::size_t i = 0; i < st.V; ++i)
    for (std::size_t t = 0; t < st.dims; ++t) m(i, t) = st.in[i * st.dims + t];
  EmbeddingMatrix e(std::move(concepts), std::move(m));
  e.options = opt;
  return e;
}

/// 1 - cos(u, v), clamped to [0, 2]. Zero vectors are rejected.
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw InvalidInput("cosine_distance: dimension mismatch");
  const double uu = dot(u, u), vv = dot(v, v);
  if (uu == 0 || vv == 0) throw InvalidInput("cosine_distance: zero-norm vector");
  const double d = 1.0 - dot(u, v) / std::sqrt(uu * vv);
  return std::clamp(d, 0.0, 2.0);
}

struct DistalResult {
  double mean_distance = kNaN;  // undefined when every link was skipped
  std::int64_t skipped = 0;
};

inline DistalResult distal_novelty(const links::NoveltyRecord& r, const EmbeddingMatrix& emb,
                                   const links::ConceptIndex& index) {
  DistalResult out;
  double sum = 0;
  std::int64_t used = 0;
  for (links::PairKey k : r.new_links) {
    auto a = emb.vector(index.name(links::pair_first(k)));
    auto b = emb.vector(index.name(links::pair_second(k)));
    if (!a || !b) {
      ++out.skipped;
      continue;
    }
    sum += cosine_distance(*a, *b);
    ++used;
  }
  if (used) out.mean_distance = sum / static_cast<double>(used);
  return out;
}

/// The n closest concepts to `query`, ascending distance, ties by concept order.
inline std::vector<std::pair<std::string, double>> nearest_neighbors(const std::string& query,
                                                                     const EmbeddingMatrix& emb, std::size_t n) {
  auto q = emb.index(query);
  if (!q) throw InvalidInput("nearest_neighbors: unknown concept '" + query + "'");
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < emb.size(); ++i)
    if (i != *q) all.emplace_back(cosine_distance(emb.matrix().row(*q), emb.matrix().row(i)), i);
  std::sort(all.begin(), all.end());
  if (all.size() > n) all.resize(n);
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [d, i] : all) out.emplace_back(emb.concepts()[i], d);
  return out;
}

// ---- text format -----------------------------------------------------------

inline void write_embeddings(std::ostream& os, const EmbeddingMatrix& e) {
  os << e.size() << ' ' << e.dims() << '\n';
  for (std::size_t i = 0; i < e.size(); ++i) {
    os << e.concepts()[i];
    for (double x : e.matrix().row(i)) os << ' ' << format_double(x);
    os << '\n';
  }
}

inline EmbeddingMatrix read_embeddings(std::istream& in, const std::string& what = "embeddings") {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(what + ": empty file");
  auto head = split(trim(line), ' ');
  long long V = 0, dims = 0;
  if (head.size() != 2 || !parse_int(head[0], V) || !parse_int(head[1], dims) || V < 0 || dims < 1)
    throw InvalidInput(what + ": first line must be 'V dims'");
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto f = split(trim(line), ' ');
    if (static_cast<long long>(f.size()) != dims + 1)
      throw InvalidInput(what + ": expected " + std::to_string(dims) + " values for '" + f[0] + "'");
    std::vector<double> v(static_cast<std::size_t>(dims));
    for (long long t = 0; t < dims; ++t)
      if (!parse_double(f[static_cast<std::size_t>(t) + 1], v[static_cast<std::size_t>(t)]) ||
          !std::isfinite(v[static_cast<std::size_t>(t)]))
        throw InvalidInput(what + ": bad value for '" + f[0] + "'");
    rows.emplace_back(f[0], std::move(v));
  }
  if (static_cast<long long>(rows.size()) != V) throw InvalidInput(what + ": row count differs from header");
  std::sort(rows.begin(), rows.end());
  std::vector<std::string> names;
  RowMatrix m(rows.size(), static_cast<std::size_t>(dims));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    names.push_back(rows[i].first);
    for (std::size_t t = 0; t < m.cols(); ++t) m(i, t) = rows[i].second[t];
  }
  return EmbeddingMatrix(std::move(names), std::move(m));
}

}  // namespace linkmine::embed
