#pragma once

// Temporal concept-pair ledger: co-occurrence, PMI filtering, first
// introductions, novelty and uptake.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/csv.hpp"

namespace linkmine::links {

using ConceptId = std::uint32_t;
using PairKey = std::uint64_t;

/// Canonical key for the unordered pair {a, b}, a != b.
inline PairKey make_pair_key(ConceptId a, ConceptId b) {
  if (a == b) throw InvalidInput("concept pair needs two distinct concepts");
  if (a > b) std::swap(a, b);
  return (static_cast<PairKey>(a) << 32) | b;
}
inline ConceptId pair_first(PairKey k) { return static_cast<ConceptId>(k >> 32); }
inline ConceptId pair_second(PairKey k) { return static_cast<ConceptId>(k & 0xFFFFFFFFu); }

/// Concept strings in sorted order; a concept's id is its rank.
class ConceptIndex {
 public:
  ConceptIndex() = default;
  explicit ConceptIndex(std::vector<std::string> concepts) : names_(std::move(concepts)) {
    std::sort(names_.begin(), names_.end());
    names_.erase(std::unique(names_.begin(), names_.end()), names_.end());
    for (std::size_t i = 0; i < names_.size(); ++i) ids_.emplace(names_[i], static_cast<ConceptId>(i));
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(ConceptId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<ConceptId> id(const std::string& s) const {
    auto it = ids_.find(s);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, ConceptId> ids_;
};

/// Distinct vocabulary concepts of one document, sorted by id.
inline std::vector<ConceptId> doc_concepts(const std::vector<std::string>& tokens, const ConceptIndex& index) {
  std::vector<ConceptId> out;
  for (const auto& t : tokens)
    if (auto id = index.id(t)) out.push_back(*id);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct DocConcepts {
  std::string doc_id;
  Year year = 0;
  std::vector<ConceptId> concepts;  // distinct, sorted
};

/// Document co-occurrence counts. Pairs are stored sorted with, per pair,
/// a sparse ascending list of (year, document count).
struct Cooccurrence {
  std::size_t n_docs = 0;
  std::vector<std::int64_t> concept_df;  // documents containing each concept
  std::vector<PairKey> pairs;
  std::vector<std::size_t> offsets;      // pairs.size() + 1 entries into years/counts
  std::vector<Year> years;
  std::vector<std::int64_t> counts;
  std::vector<std::int64_t> pair_df;     // documents containing the pair

  std::optional<std::size_t> find(PairKey k) const {
    auto it = std::lower_bound(pairs.begin(), pairs.end(), k);
    if (it == pairs.end() || *it != k) return std::nullopt;
    return static_cast<std::size_t>(it - pairs.begin());
  }

  /// year -> count for one pair (empty if the pair never co-occurs).
  std::map<Year, std::int64_t> yearly(PairKey k) const {
    std::map<Year, std::int64_t> out;
    if (auto i = find(k))
      for (std::size_t j = offsets[*i]; j < offsets[*i + 1]; ++j) out[years[j]] = counts[j];
    return out;
  }
};

namespace detail {
template <class F>
void for_each_pair(const std::vector<ConceptId>& c, F&& f) {
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j) f((static_cast<PairKey>(c[i]) << 32) | c[j]);
}
}  // namespace detail

/// Counts each pair once per document in which both concepts appear.
inline Cooccurrence build_cooccurrence(const std::vector<DocConcepts>& docs, std::size_t n_concepts) {
  Cooccurrence c;
  c.n_docs = docs.size();
  c.concept_df.assign(n_concepts, 0);
  struct Use {
    PairKey key;
    Year year;
    bool operator<(const Use& o) const { return key != o.key ? key < o.key : year < o.year; }
  };
  std::vector<Use> uses;
  for (const auto& d : docs) {
    for (std::size_t i = 0; i < d.concepts.size(); ++i) {
      if (d.concepts[i] >= n_concepts) throw InvalidInput("concept id out of range in " + d.doc_id);
      if (i && d.concepts[i] <= d.concepts[i - 1])
        throw InvalidInput("concepts of " + d.doc_id + " must be distinct and sorted");
      ++c.concept_df[d.concepts[i]];
    }
    detail::for_each_pair(d.concepts, [&](PairKey k) { uses.push_back({k, d.year}); });
  }
  std::sort(uses.begin(), uses.end());
  std::size_t i = 0;
  while (i < uses.size()) {
    const PairKey k = uses[i].key;
    c.pairs.push_back(k);
    c.offsets.push_back(c.years.size());
    std::int64_t df = 0;
    while (i < uses.size() && uses[i].key == k) {
      const Year y = uses[i].year;
      std::int64_t n = 0;
      while (i < uses.size() && uses[i].key == k && uses[i].year == y) ++n, ++i;
      c.years.push_back(y);
      c.counts.push_back(n);
      df += n;
    }
    c.pair_df.push_back(df);
  }
  c.offsets.push_back(c.years.size());
  return c;
}

/// log10( Pr(a,b) / (Pr(a) Pr(b)) ) with document probabilities.
inline double pmi_score(PairKey k, const Cooccurrence& c) {
  const ConceptId a = pair_first(k), b = pair_second(k);
  if (a >= c.concept_df.size() || b >= c.concept_df.size()) throw InvalidInput("pmi: unknown concept");
  const double n = static_cast<double>(c.n_docs);
  const double fa = static_cast<double>(c.concept_df[a]), fb = static_cast<double>(c.concept_df[b]);
  if (fa == 0 || fb == 0) throw InvalidInput("pmi: concept with zero document frequency");
  auto i = c.find(k);
  if (!i) throw InvalidInput("pmi: pair never co-occurs");
  const double fab = static_cast<double>(c.pair_df[*i]);
  return std::log10((fab / n) / ((fa / n) * (fb / n)));
}

struct Admissible {
  std::vector<PairKey> pairs;  // sorted by key
  std::vector<double> pmi;     // aligned with pairs

  bool contains(PairKey k) const { return std::binary_search(pairs.begin(), pairs.end(), k); }
  std::size_t size() const { return pairs.size(); }
};

inline constexpr std::int64_t kUnlimited = std::numeric_limits<std::int64_t>::max();

/// Drops pairs with a concept in fewer than `min_term_docs` documents, then
/// keeps the `top_rank` highest-PMI pairs (ties by pair id).
inline Admissible filter_significant(const Cooccurrence& c, std::int64_t min_term_docs = 10,
                                     std::int64_t top_rank = kUnlimited) {
  if (top_rank < 0) throw InvalidInput("top_rank must be >= 0");
  std::vector<std::pair<double, PairKey>> ranked;
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    const PairKey k = c.pairs[i];
    if (c.concept_df[pair_first(k)] < min_term_docs || c.concept_df[pair_second(k)] < min_term_docs)
      continue;
    ranked.emplace_back(pmi_score(k, c), k);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  if (static_cast<std::uint64_t>(top_rank) < ranked.size()) ranked.resize(static_cast<std::size_t>(top_rank));
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second < y.second; });
  Admissible out;
  for (const auto& [p, k] : ranked) {
    out.pairs.push_back(k);
    out.pmi.push_back(p);
  }
  return out;
}

// ---- introductions ---------------------------------------------------------

struct LedgerOptions {
  int burn_in_years = 5;
  std::optional<Year> analysis_end;  // last year receiving credit; default: last corpus year
  std::optional<int> uptake_horizon;  // years after introduction that count; default: all
};

struct LedgerEntry {
  PairKey pair = 0;
  Year first_year = 0;
  std::vector<std::string> introducers;  // sorted doc ids, all dated first_year
  std::map<Year, std::int64_t> yearly;
};

struct NoveltyRecord {
  std::string doc_id;
  Year year = 0;
  bool in_window = false;  // eligible for novelty credit
  std::int64_t n_concepts = 0;
  std::vector<PairKey> new_links;  // sorted
  std::int64_t n_new_links = 0;
  std::int64_t total_uptake = 0;
  double uptake_per_new_link = kNaN;  // undefined without new links
  double distal_novelty = kNaN;
  std::int64_t distal_skipped = 0;  // new links lacking an embedding
};

struct LinkLedger {
  std::vector<LedgerEntry> entries;  // admissible co-occurring pairs, sorted by pair
  Year first_corpus_year = 0, credit_start = 0, credit_end = 0;
  std::optional<int> uptake_horizon;

  const LedgerEntry* find(PairKey k) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), k,
                               [](const LedgerEntry& e, PairKey key) { return e.pair < key; });
    return (it != entries.end() && it->pair == k) ? &*it : nullptr;
  }

  /// Uses of the pair in years strictly after its introduction (within the horizon).
  std::int64_t uses_after_intro(const LedgerEntry& e) const {
    std::int64_t s = 0;
    for (auto it = e.yearly.upper_bound(e.first_year); it != e.yearly.end(); ++it) {
      if (uptake_horizon && it->first > e.first_year + *uptake_horizon) break;
      s += it->second;
    }
    return s;
  }

  /// Share of credited pairs with more than one introducer.
  double concurrent_fraction() const {
    std::int64_t credited = 0, concurrent = 0;
    for (const auto& e : entries) {
      if (e.introducers.empty()) continue;
      ++credited;
      if (e.introducers.size() > 1) ++concurrent;
    }
    return credited ? static_cast<double>(concurrent) / static_cast<double>(credited) : 0.0;
  }
};

struct IntroductionResult {
  LinkLedger ledger;
  std::vector<NoveltyRecord> records;  // input document order
};

/// Total later-year uses of the document's new links over n_new_links.
inline double uptake_per_new_link(const NoveltyRecord& r, const LinkLedger& ledger) {
  if (r.new_links.empty()) return kNaN;
  std::int64_t total = 0;
  for (PairKey k : r.new_links) {
    const auto* e = ledger.find(k);
    if (!e) throw InvalidInput("uptake: new link of " + r.doc_id + " missing from the ledger");
    total += ledger.uses_after_intro(*e);
  }
  return static_cast<double>(total) / static_cast<double>(r.new_links.size());
}

/// A pair's introduction year is the earliest year it co-occurs. Every
/// document of that year using the pair is an introducer, provided the year
/// lies in the credit window [first corpus year + burn_in, analysis_end].
inline IntroductionResult detect_introductions(const std::vector<DocConcepts>& docs, const Cooccurrence& c,
                                               const Admissible& admissible, const LedgerOptions& opt = {}) {
  if (opt.burn_in_years < 0) throw InvalidInput("burn_in_years must be >= 0");
  if (opt.uptake_horizon && *opt.uptake_horizon < 1) throw InvalidInput("uptake horizon must be >= 1");
  IntroductionResult res;
  auto& L = res.ledger;
  L.uptake_horizon = opt.uptake_horizon;
  if (!docs.empty()) {
    auto [lo, hi] = std::minmax_element(docs.begin(), docs.end(),
                                        [](const auto& a, const auto& b) { return a.year < b.year; });
    L.first_corpus_year = lo->year;
    L.credit_start = lo->year + opt.burn_in_years;
    L.credit_end = opt.analysis_end.value_or(hi->year);
  }

  for (std::size_t a = 0; a < admissible.pairs.size(); ++a) {
    const PairKey k = admissible.pairs[a];
    auto i = c.find(k);
    if (!i) continue;
    LedgerEntry e;
    e.pair = k;
    for (std::size_t j = c.offsets[*i]; j < c.offsets[*i + 1]; ++j) e.yearly[c.years[j]] = c.counts[j];
    e.first_year = e.yearly.begin()->first;
    L.entries.push_back(std::move(e));
  }

  std::vector<std::size_t> order(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) order[d] = d;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return docs[x].year != docs[y].year ? docs[x].year < docs[y].year : docs[x].doc_id < docs[y].doc_id;
  });

  res.records.resize(docs.size());
  for (std::size_t d : order) {
    const auto& doc = docs[d];
    auto& r = res.records[d];
    r.doc_id = doc.doc_id;
    r.year = doc.year;
    r.n_concepts = static_cast<std::int64_t>(doc.concepts.size());
    r.in_window = doc.year >= L.credit_start && doc.year <= L.credit_end;
    if (!r.in_window) continue;
    detail::for_each_pair(doc.concepts, [&](PairKey k) {
      auto it = std::lower_bound(L.entries.begin(), L.entries.end(), k,
                                 [](const LedgerEntry& e, PairKey key) { return e.pair < key; });
      if (it == L.entries.end() || it->pair != k || it->first_year != doc.year) return;
      it->introducers.push_back(doc.doc_id);
      r.new_links.push_back(k);
    });
  }
  for (auto& e : L.entries) std::sort(e.introducers.begin(), e.introducers.end());
  for (auto& r : res.records) {
    r.n_new_links = static_cast<std::int64_t>(r.new_links.size());
    if (r.n_new_links == 0) continue;
    for (PairKey k : r.new_links) r.total_uptake += L.uses_after_intro(*L.find(k));
    r.uptake_per_new_link = static_cast<double>(r.total_uptake) / static_cast<double>(r.n_new_links);
  }
  return res;
}

// ---- export ----------------------------------------------------------------

/// `concept_a,concept_b,first_year,total_uses_after_intro`
inline void write_ledger(std::ostream& os, const LinkLedger& L, const ConceptIndex& index) {
  csv::write_row(os, {"concept_a", "concept_b", "first_year", "total_uses_after_intro"});
  for (const auto& e : L.entries)
    csv::write_row(os, {index.name(pair_first(e.pair)), index.name(pair_second(e.pair)),
                        std::to_string(e.first_year), std::to_string(L.uses_after_intro(e))});
}

/// One row per (document, new link).
inline void write_new_links(std::ostream& os, const std::vector<NoveltyRecord>& records,
                            const ConceptIndex& index) {
  csv::write_row(os, {"doc_id", "concept_a", "concept_b"});
  for (const auto& r : records)
    for (PairKey k : r.new_links)
      csv::write_row(os, {r.doc_id, index.name(pair_first(k)), index.name(pair_second(k))});
}

}  // namespace linkmine::links
