#pragma once

// LDA topic fitting, FREX concept extraction and topic-model validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "linkmine/common.hpp"
#include "linkmine/corpus.hpp"
#include "linkmine/csv.hpp"
#include "linkmine/textprep.hpp"

namespace linkmine::topics {

struct TopicModel {
  int K = 0;
  std::vector<std::string> terms;    // V, sorted; column order of beta
  std::vector<std::string> doc_ids;  // D; row order of theta
  RowMatrix beta;                    // K x V
  RowMatrix theta;                   // D x K
  std::uint64_t seed = 0;
  int iterations = 0;
  double alpha = 0.0;
  double eta = 0.0;

  std::size_t V() const { return terms.size(); }
  std::size_t D() const { return doc_ids.size(); }

  std::optional<std::size_t> term_index(const std::string& t) const {
    auto it = std::lower_bound(terms.begin(), terms.end(), t);
    if (it == terms.end() || *it != t) return std::nullopt;
    return static_cast<std::size_t>(it - terms.begin());
  }
};

struct LdaOptions {
  int K = 20;
  std::uint64_t seed = 1;
  int iterations = 20;
  double alpha = -1.0;  // negative: 50 / K
  double eta = 0.01;
};

/// Collapsed Gibbs sampling. `vocabulary`, when given, fixes the term set
/// (tokens outside it are ignored); otherwise it is every token in `streams`.
/// Estimates come from the final sample.
inline TopicModel fit_lda(const std::vector<textprep::TokenStream>& streams, const LdaOptions& opt,
                          const std::vector<std::string>* vocabulary = nullptr) {
  if (opt.K < 2) throw InvalidInput("fit_lda: K must be >= 2");
  if (opt.iterations < 0) throw InvalidInput("fit_lda: iterations must be >= 0");
  if (streams.empty()) throw InvalidInput("fit_lda: empty corpus");

  TopicModel m;
  m.K = opt.K;
  m.seed = opt.seed;
  m.iterations = opt.iterations;
  m.alpha = opt.alpha < 0 ? 50.0 / opt.K : opt.alpha;
  m.eta = opt.eta;
  if (m.alpha <= 0 || m.eta <= 0) throw InvalidInput("fit_lda: priors must be positive");

  if (vocabulary) {
    std::set<std::string> v(vocabulary->begin(), vocabulary->end());
    m.terms.assign(v.begin(), v.end());
  } else {
    std::set<std::string> v;
    for (const auto& s : streams) v.insert(s.tokens.begin(), s.tokens.end());
    m.terms.assign(v.begin(), v.end());
  }
  const std::size_t V = m.terms.size();
  const std::size_t K = static_cast<std::size_t>(opt.K);
  if (V == 0) throw InvalidInput("fit_lda: empty corpus");
  if (K > V)
    throw InvalidInput("fit_lda: K = " + std::to_string(K) + " exceeds vocabulary size " +
                       std::to_string(V));

  std::unordered_map<std::string, std::uint32_t> index;
  for (std::size_t v = 0; v < V; ++v) index.emplace(m.terms[v], static_cast<std::uint32_t>(v));

  const std::size_t D = streams.size();
  std::vector<std::vector<std::uint32_t>> words(D);
  std::size_t n_tokens = 0;
  for (std::size_t d = 0; d < D; ++d) {
    m.doc_ids.push_back(streams[d].doc_id);
    for (const auto& t : streams[d].tokens) {
      auto it = index.find(t);
      if (it != index.end()) words[d].push_back(it->second);
    }
    n_tokens += words[d].size();
  }
  if (n_tokens == 0) throw InvalidInput("fit_lda: empty corpus");

  // word-major topic counts keep the inner loop contiguous
  std::vector<std::int32_t> n_wk(V * K, 0), n_dk(D * K, 0), n_k(K, 0);
  std::vector<std::vector<std::uint32_t>> z(D);
  Rng rng(opt.seed);
  for (std::size_t d = 0; d < D; ++d) {
    z[d].resize(words[d].size());
    for (std::size_t i = 0; i < words[d].size(); ++i) {
      const auto k = static_cast<std::uint32_t>(rng.below(K));
      z[d][i] = k;
      ++n_wk[words[d][i] * K + k];
      ++n_dk[d * K + k];
      ++n_k[k];
    }
  }

  const double v_eta = static_cast<double>(V) * m.eta;
  std::vector<double> cum(K);
  for (int it = 0; it < opt.iterations; ++it) {
    for (std::size_t d = 0; d < D; ++d) {
      std::int32_t* doc = &n_dk[d * K];
      for (std::size_t i = 0; i < words[d].size(); ++i) {
        const std::uint32_t w = words[d][i];
        std::int32_t* wk = &n_wk[w * K];
        const std::uint32_t old = z[d][i];
        --wk[old];
        --doc[old];
        --n_k[old];
        double total = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          total += (doc[k] + m.alpha) * (wk[k] + m.eta) / (n_k[k] + v_eta);
          cum[k] = total;
        }
        const double u = rng.uniform() * total;
        std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
        if (k >= K) k = K - 1;
        z[d][i] = static_cast<std::uint32_t>(k);
        ++wk[k];
        ++doc[k];
        ++n_k[k];
      }
    }
  }

  m.beta = RowMatrix(K, V);
  for (std::size_t k = 0; k < K; ++k) {
    const double denom = n_k[k] + v_eta;
    for (std::size_t v = 0; v < V; ++v) m.beta(k, v) = (n_wk[v * K + k] + m.eta) / denom;
  }
  m.theta = RowMatrix(D, K);
  const double k_alpha = static_cast<double>(K) * m.alpha;
  for (std::size_t d = 0; d < D; ++d) {
    const double denom = static_cast<double>(words[d].size()) + k_alpha;
    for (std::size_t k = 0; k < K; ++k) m.theta(d, k) = (n_dk[d * K + k] + m.alpha) / denom;
  }
  return m;
}

// ---- FREX ------------------------------------------------------------------

/// beta(k,v) / sum over topics of beta(., v).
inline RowMatrix exclusivity_matrix(const RowMatrix& beta) {
  RowMatrix ex(beta.rows(), beta.cols());
  for (std::size_t v = 0; v < beta.cols(); ++v) {
    double s = 0.0;
    for (std::size_t k = 0; k < beta.rows(); ++k) s += beta(k, v);
    for (std::size_t k = 0; k < beta.rows(); ++k) ex(k, v) = s > 0 ? beta(k, v) / s : 0.0;
  }
  return ex;
}

/// Empirical CDF of each entry within its row: #{j : x_j <= x_i} / n.
inline std::vector<double> row_ecdf(std::span<const double> row) {
  const std::size_t n = row.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && row[order[j + 1]] == row[order[i]]) ++j;
    const double f = static_cast<double>(j + 1) / static_cast<double>(n);
    for (std::size_t t = i; t <= j; ++t) out[order[t]] = f;
    i = j + 1;
  }
  return out;
}

/// FREX(k,v) = 1 / (w / ECDF(exclusivity) + (1 - w) / ECDF(beta)).
inline RowMatrix frex_matrix(const RowMatrix& beta, double frex_weight) {
  if (!(frex_weight >= 0.0 && frex_weight <= 1.0)) throw InvalidInput("frex weight must be in [0,1]");
  const RowMatrix ex = exclusivity_matrix(beta);
  RowMatrix out(beta.rows(), beta.cols());
  for (std::size_t k = 0; k < beta.rows(); ++k) {
    const auto fe = row_ecdf(ex.row(k));
    const auto fb = row_ecdf(beta.row(k));
    for (std::size_t v = 0; v < beta.cols(); ++v)
      out(k, v) = 1.0 / (frex_weight / fe[v] + (1.0 - frex_weight) / fb[v]);
  }
  return out;
}

/// Column indices of `row` sorted by value descending, ties by index.
inline std::vector<std::size_t> rank_descending(std::span<const double> row) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return idx;
}

struct ConceptVocabulary {
  std::vector<std::string> concepts;                // sorted union
  std::vector<std::vector<std::string>> per_topic;  // FREX order
  double frex_weight = 0.5;
  int top_n = 0;

  bool contains(const std::string& t) const {
    return std::binary_search(concepts.begin(), concepts.end(), t);
  }
};

inline ConceptVocabulary frex_extract(const TopicModel& m, double frex_weight, int top_n) {
  if (top_n < 1) throw InvalidInput("frex top_n must be >= 1");
  ConceptVocabulary cv;
  cv.frex_weight = frex_weight;
  cv.top_n = top_n;
  const RowMatrix fx = frex_matrix(m.beta, frex_weight);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(top_n), m.V());
  std::set<std::string> all;
  for (std::size_t k = 0; k < fx.rows(); ++k) {
    auto order = rank_descending(fx.row(k));
    std::vector<std::string> list;
    for (std::size_t i = 0; i < take; ++i) list.push_back(m.terms[order[i]]);
    all.insert(list.begin(), list.end());
    cv.per_topic.push_back(std::move(list));
  }
  cv.concepts.assign(all.begin(), all.end());
  return cv;
}

inline void write_concepts(std::ostream& os, const ConceptVocabulary& cv) {
  for (const auto& c : cv.concepts) os << c << '\n';
}

inline std::vector<std::string> read_concepts(std::istream& in) {
  std::set<std::string> s;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty()) s.insert(t);
  }
  return {s.begin(), s.end()};
}

// ---- internal validation ---------------------------------------------------

/// Top `top_m` term indices of each topic by beta (ties by term index).
inline std::vector<std::vector<std::size_t>> top_terms(const TopicModel& m, int top_m) {
  std::vector<std::vector<std::size_t>> out;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(top_m), m.V());
  for (std::size_t k = 0; k < m.beta.rows(); ++k) {
    auto order = rank_descending(m.beta.row(k));
    order.resize(take);
    out.push_back(std::move(order));
  }
  return out;
}

/// Document co-occurrence coherence: for each pair of top words with the
/// higher-ranked word `hi`, log[(D(hi, lo) + 1) / D(hi)].
inline std::vector<double> semantic_coherence(const TopicModel& m,
                                              const std::vector<textprep::TokenStream>& streams,
                                              int top_m) {
  if (top_m < 2) throw InvalidInput("coherence: top_m must be >= 2");
  const auto tops = top_terms(m, top_m);
  std::set<std::size_t> needed;
  for (const auto& t : tops) needed.insert(t.begin(), t.end());
  std::unordered_map<std::string, std::size_t> wanted;
  for (auto v : needed) wanted.emplace(m.terms[v], v);
  std::map<std::size_t, std::vector<std::uint32_t>> docs_of;  // sorted doc lists
  for (std::size_t d = 0; d < streams.size(); ++d) {
    std::set<std::size_t> seen;
    for (const auto& t : streams[d].tokens) {
      auto it = wanted.find(t);
      if (it != wanted.end()) seen.insert(it->second);
    }
    for (auto v : seen) docs_of[v].push_back(static_cast<std::uint32_t>(d));
  }
  auto df = [&](std::size_t v) -> std::size_t {
    auto it = docs_of.find(v);
    return it == docs_of.end() ? 0 : it->second.size();
  };
  auto co_df = [&](std::size_t a, std::size_t b) -> std::size_t {
    auto ia = docs_of.find(a), ib = docs_of.find(b);
    if (ia == docs_of.end() || ib == docs_of.end()) return 0;
    std::size_t n = 0;
    auto x = ia->second.begin(), y = ib->second.begin();
    while (x != ia->second.end() && y != ib->second.end()) {
      if (*x < *y) {
        ++x;
      } else if (*y < *x) {
        ++y;
      } else {
        ++n, ++x, ++y;
      }
    }
    return n;
  };
  std::vector<double> out;
  for (const auto& t : tops) {
    double c = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::size_t d_hi = df(t[i]);
      if (d_hi == 0)
        throw InvalidInput("coherence: top word '" + m.terms[t[i]] + "' occurs in no document");
      for (std::size_t j = i + 1; j < t.size(); ++j)
        c += std::log((static_cast<double>(co_df(t[i], t[j])) + 1.0) / static_cast<double>(d_hi));
    }
    out.push_back(c);
  }
  return out;
}

/// Mean exclusivity of each topic's top `top_m` words by beta.
inline std::vector<double> exclusivity_score(const TopicModel& m, int top_m) {
  if (top_m < 1) throw InvalidInput("exclusivity: top_m must be >= 1");
  const RowMatrix ex = exclusivity_matrix(m.beta);
  std::vector<double> out;
  const auto tops = top_terms(m, top_m);
  for (std::size_t k = 0; k < tops.size(); ++k) {
    double s = 0.0;
    for (auto v : tops[k]) s += ex(k, v);
    out.push_back(s / static_cast<double>(tops[k].size()));
  }
  return out;
}

// ---- external validation ---------------------------------------------------

struct Confusion {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct MccResult {
  double mcc = 0.0;
  bool degenerate = false;  // zero denominator; mcc reported as 0
  Confusion confusion;
  std::size_t sampled = 0;
};

inline MccResult matthews(const Confusion& c) {
  MccResult r;
  r.confusion = c;
  const double a = static_cast<double>(c.tp + c.fp), b = static_cast<double>(c.tp + c.fn);
  const double e = static_cast<double>(c.tn + c.fp), f = static_cast<double>(c.tn + c.fn);
  const double den = a * b * e * f;
  if (den == 0.0) {
    r.degenerate = true;
    return r;
  }
  r.mcc = (static_cast<double>(c.tp) * static_cast<double>(c.tn) -
           static_cast<double>(c.fp) * static_cast<double>(c.fn)) /
          std::sqrt(den);
  return r;
}

/// Compares two dyad networks over the same n items (row-major upper triangles).
inline MccResult network_mcc(const std::vector<char>& first, const std::vector<char>& second) {
  if (first.size() != second.size()) throw InvalidInput("network_mcc: size mismatch");
  Confusion c;
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i] && second[i])
      ++c.tp;
    else if (first[i])
      ++c.fp;
    else if (second[i])
      ++c.fn;
    else
      ++c.tn;
  }
  return matthews(c);
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  if (aa == 0 || bb == 0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

/// Unordered pairs of distinct normalized terms from a document's fields and keywords.
inline std::set<std::pair<std::string, std::string>> document_bigrams(const corpus::DocumentRecord& d) {
  std::set<std::string> terms;
  for (const auto* list : {&d.fields_listed, &d.keywords})
    for (const auto& t : *list) {
      auto n = to_lower_ascii(trim(t));
      if (!n.empty()) terms.insert(std::move(n));
    }
  std::set<std::pair<std::string, std::string>> out;
  for (auto a = terms.begin(); a != terms.end(); ++a)
    for (auto b = std::next(a); b != terms.end(); ++b) out.emplace(*a, *b);
  return out;
}

/// Topic network (theta cosine above the sample median) vs. field/keyword
/// bigram network. Only documents present in the model are eligible; they
/// are ordered by doc_id before the seeded draw.
inline MccResult external_mcc(const TopicModel& m, const std::vector<corpus::DocumentRecord>& docs,
                              std::size_t sample_n, std::uint64_t seed) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t d = 0; d < m.D(); ++d) row_of.emplace(m.doc_ids[d], d);
  std::vector<const corpus::DocumentRecord*> pool;
  for (const auto& d : docs)
    if (row_of.count(d.doc_id)) pool.push_back(&d);
  std::sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->doc_id < b->doc_id; });
  pool.erase(std::unique(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->doc_id == b->doc_id; }),
             pool.end());
  Rng rng(seed);
  const std::size_t n = std::min(sample_n, pool.size());
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(n);

  std::vector<double> sims;
  std::vector<std::set<std::pair<std::string, std::string>>> grams;
  for (auto* d : pool) grams.push_back(document_bigrams(*d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      sims.push_back(cosine_similarity(m.theta.row(row_of[pool[i]->doc_id]),
                                       m.theta.row(row_of[pool[j]->doc_id])));
  MccResult r;
  r.sampled = n;
  if (sims.empty()) {
    r.degenerate = true;
    return r;
  }
  std::vector<double> sorted = sims;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t h = sorted.size() / 2;
  const double median = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);

  std::vector<char> topic_net, gram_net;
  std::size_t p = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++p) {
      topic_net.push_back(sims[p] > median);
      bool shared = false;
      for (const auto& g : grams[i])
        if (grams[j].count(g)) {
          shared = true;
          break;
        }
      gram_net.push_back(shared);
    }
  auto out = network_mcc(topic_net, gram_net);
  out.sampled = n;
  return out;
}

// ---- consistency -----------------------------------------------------------

/// Argmax topic of each theta row (lowest topic on ties).
inline std::map<std::string, int> argmax_labels(const TopicModel& m) {
  std::map<std::string, int> out;
  for (std::size_t d = 0; d < m.D(); ++d) {
    auto row = m.theta.row(d);
    out[m.doc_ids[d]] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Fowlkes-Mallows index over document pairs. Two all-singleton partitions
/// agree perfectly and score 1.
template <class Label>
double fm_consistency(const std::map<std::string, Label>& a, const std::map<std::string, Label>& b) {
  if (a.size() < 2) throw InvalidInput("fm_consistency: need at least 2 documents");
  if (a.size() != b.size()) throw InvalidInput("fm_consistency: assignments cover different documents");
  std::map<std::pair<Label, Label>, std::int64_t> cells;
  std::map<Label, std::int64_t> rows, cols;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) throw InvalidInput("fm_consistency: assignments cover different documents");
    ++cells[{ia->second, ib->second}];
    ++rows[ia->second];
    ++cols[ib->second];
  }
  auto pairs = [](std::int64_t n) { return static_cast<double>(n) * static_cast<double>(n - 1) / 2.0; };
  double both = 0, in_a = 0, in_b = 0;
  for (const auto& [k, n] : cells) both += pairs(n);
  for (const auto& [k, n] : rows) in_a += pairs(n);
  for (const auto& [k, n] : cols) in_b += pairs(n);
  if (in_a == 0 && in_b == 0) return 1.0;
  if (in_a == 0 || in_b == 0) return 0.0;
  return both / std::sqrt(in_a * in_b);
}

// ---- persistence -----------------------------------------------------------

inline void write_beta(std::ostream& os, const TopicModel& m) {
  std::vector<std::string> header{"topic"};
  header.insert(header.end(), m.terms.begin(), m.terms.end());
  csv::write_row(os, header);
  for (std::size_t k = 0; k < m.beta.rows(); ++k) {
    std::vector<std::string> row{std::to_string(k)};
    for (double x : m.beta.row(k)) row.push_back(format_double(x));
    csv::write_row(os, row);
  }
}

inline void write_theta(std::ostream& os, const TopicModel& m) {
  std::vector<std::string> header{"doc_id"};
  for (int k = 0; k < m.K; ++k) header.push_back(std::to_string(k));
  csv::write_row(os, header);
  for (std::size_t d = 0; d < m.theta.rows(); ++d) {
    std::vector<std::string> row{m.doc_ids[d]};
    for (double x : m.theta.row(d)) row.push_back(format_double(x));
    csv::write_row(os, row);
  }
}

inline nlohmann::json manifest(const TopicModel& m) {
  return {{"K", m.K},         {"V", m.V()},           {"D", m.D()},     {"seed", m.seed},
          {"iterations", m.iterations}, {"alpha", m.alpha}, {"eta", m.eta}};
}

namespace detail {
inline RowMatrix parse_numeric_block(const csv::Table& t, const std::string& what) {
  RowMatrix out(t.rows.size(), t.header.size() - 1);
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 1; c < t.header.size(); ++c)
      if (!parse_double(t.rows[r][c], out(r, c - 1)))
        throw InvalidInput(what + ": bad number at row " + std::to_string(r + 1));
  return out;
}
}  // namespace detail

inline TopicModel read_model(const std::string& beta_path, const std::string& theta_path,
                             const std::string& manifest_path) {
  TopicModel m;
  std::ifstream mf(manifest_path);
  if (!mf) throw InvalidInput("cannot open " + manifest_path);
  const auto j = nlohmann::json::parse(mf);
  m.K = j.at("K").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.iterations = j.at("iterations").get<int>();
  m.alpha = j.at("alpha").get<double>();
  m.eta = j.at("eta").get<double>();
  const auto b = csv::read_file(beta_path);
  if (b.header.empty() || b.header[0] != "topic") throw InvalidInput(beta_path + ": expected 'topic' column");
  m.terms.assign(b.header.begin() + 1, b.header.end());
  m.beta = detail::parse_numeric_block(b, beta_path);
  const auto t = csv::read_file(theta_path);
  if (t.header.empty() || t.header[0] != "doc_id") throw InvalidInput(theta_path + ": expected 'doc_id' column");
  for (const auto& row : t.rows) m.doc_ids.push_back(row[0]);
  m.theta = detail::parse_numeric_block(t, theta_path);
  if (m.beta.rows() != static_cast<std::size_t>(m.K) || m.theta.cols() != static_cast<std::size_t>(m.K))
    throw InvalidInput("topic model files disagree on K");
  return m;
}

}  // namespace linkmine::topics
