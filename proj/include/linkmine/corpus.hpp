#pragma once

// Document records, ingest, cohort weights and career outcome labels.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "linkmine/common.hpp"
#include "linkmine/csv.hpp"

namespace linkmine::corpus {

struct DocumentRecord {
  std::string doc_id;
  std::string author_id;
  std::string first_name;
  std::string last_name;
  std::vector<std::string> advisor_ids;  // ordered by primacy
  Year year = 0;
  std::string institution;
  std::string discipline;
  std::vector<std::string> keywords;
  std::vector<std::string> fields_listed;
  std::string abstract;

  const std::string* primary_advisor() const {
    return advisor_ids.empty() ? nullptr : &advisor_ids.front();
  }

  bool operator==(const DocumentRecord&) const = default;
};

inline nlohmann::json to_json(const DocumentRecord& d) {
  nlohmann::json j;
  j["doc_id"] = d.doc_id;
  j["author_id"] = d.author_id;
  j["first_name"] = d.first_name;
  j["last_name"] = d.last_name;
  j["advisor_ids"] = d.advisor_ids;
  j["year"] = d.year;
  j["institution"] = d.institution;
  j["discipline"] = d.discipline;
  j["keywords"] = d.keywords;
  j["fields_listed"] = d.fields_listed;
  j["abstract"] = d.abstract;
  return j;
}

struct IngestOptions {
  Year year_min = 1900;
  Year year_max = 2100;
};

class DuplicateDocument : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string require_string(const nlohmann::json& j, const char* key, bool allow_empty) {
  auto it = j.find(key);
  if (it == j.end()) throw InvalidInput(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw InvalidInput(std::string("field '") + key + "' is not a string");
  std::string v = it->get<std::string>();
  if (!allow_empty && trim(v).empty())
    throw InvalidInput(std::string("field '") + key + "' is empty");
  return v;
}

inline std::vector<std::string> require_string_list(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw InvalidInput(std::string("missing field '") + key + "'");
  if (!it->is_array()) throw InvalidInput(std::string("field '") + key + "' is not a list");
  std::vector<std::string> out;
  for (const auto& e : *it) {
    if (!e.is_string())
      throw InvalidInput(std::string("field '") + key + "' has a non-string entry");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

/// Parses and validates one wire record. Throws InvalidInput with the reason.
inline DocumentRecord parse_record(std::string_view line, const IngestOptions& opt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidInput("record is not a JSON object");
  DocumentRecord d;
  d.doc_id = detail::require_string(j, "doc_id", false);
  d.author_id = detail::require_string(j, "author_id", false);
  d.first_name = detail::require_string(j, "first_name", true);
  d.last_name = detail::require_string(j, "last_name", true);
  d.advisor_ids = detail::require_string_list(j, "advisor_ids");
  auto y = j.find("year");
  if (y == j.end()) throw InvalidInput("missing field 'year'");
  if (!y->is_number_integer()) throw InvalidInput("field 'year' is not an integer");
  d.year = y->get<int>();
  if (d.year < opt.year_min || d.year > opt.year_max)
    throw InvalidInput("year " + std::to_string(d.year) + " outside corpus range [" +
                       std::to_string(opt.year_min) + ", " + std::to_string(opt.year_max) + "]");
  d.institution = detail::require_string(j, "institution", false);
  d.discipline = detail::require_string(j, "discipline", false);
  d.keywords = detail::require_string_list(j, "keywords");
  d.fields_listed = detail::require_string_list(j, "fields_listed");
  d.abstract = detail::require_string(j, "abstract", false);
  return d;
}

struct Rejection {
  std::size_t line = 0;
  std::string doc_id;  // empty when unreadable
  std::string reason;
};

struct IngestReport {
  std::size_t accepted = 0;
  std::size_t unchanged = 0;  // identical re-ingested records
  std::vector<Rejection> rejections;
};

/// Immutable-after-ingest document store, ordered by (year, doc_id).
class CorpusStore {
 public:
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const std::vector<DocumentRecord>& documents() const { return docs_; }

  const DocumentRecord* find(std::string_view doc_id) const {
    auto it = index_.find(std::string(doc_id));
    return it == index_.end() ? nullptr : &docs_[it->second];
  }

  /// Inserts a record. Identical duplicates are no-ops (returns false);
  /// a differing record under an existing doc_id throws DuplicateDocument.
  bool insert(DocumentRecord d) {
    if (auto* existing = find(d.doc_id)) {
      if (*existing == d) return false;
      throw DuplicateDocument("duplicate doc_id '" + d.doc_id + "' with different content");
    }
    auto pos = std::lower_bound(docs_.begin(), docs_.end(), d, order);
    docs_.insert(pos, std::move(d));
    reindex();
    return true;
  }

  /// Bulk insert with a single re-sort; same duplicate semantics as insert().
  std::size_t insert_all(std::vector<DocumentRecord> batch) {
    std::size_t added = 0;
    std::unordered_map<std::string, std::size_t> seen;
    std::vector<DocumentRecord> fresh;
    for (auto& d : batch) {
      if (auto* existing = find(d.doc_id)) {
        if (*existing == d) continue;
        throw DuplicateDocument("duplicate doc_id '" + d.doc_id + "' with different content");
      }
      auto [it, inserted] = seen.emplace(d.doc_id, fresh.size());
      if (!inserted) {
        if (fresh[it->second] == d) continue;
        throw DuplicateDocument("duplicate doc_id '" + d.doc_id + "' with different content");
      }
      fresh.push_back(std::move(d));
    }
    added = fresh.size();
    for (auto& d : fresh) docs_.push_back(std::move(d));
    std::sort(docs_.begin(), docs_.end(), order);
    reindex();
    return added;
  }

  void save(std::ostream& os) const {
    for (const auto& d : docs_) os << to_json(d).dump() << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    save(os);
  }

  /// Loads a store written by save(); every line must be valid.
  static CorpusStore load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    CorpusStore s;
    std::vector<DocumentRecord> batch;
    std::string line;
    std::size_t n = 0;
    IngestOptions any{std::numeric_limits<int>::min(), std::numeric_limits<int>::max()};
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      try {
        batch.push_back(parse_record(line, any));
      } catch (const InvalidInput& e) {
        throw InvalidInput(path + ": line " + std::to_string(n) + ": " + e.what());
      }
    }
    s.insert_all(std::move(batch));
    return s;
  }

  Year min_year() const { return docs_.empty() ? 0 : docs_.front().year; }
  Year max_year() const { return docs_.empty() ? 0 : docs_.back().year; }

 private:
  static bool order(const DocumentRecord& a, const DocumentRecord& b) {
    return a.year != b.year ? a.year < b.year : a.doc_id < b.doc_id;
  }
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < docs_.size(); ++i) index_[docs_[i].doc_id] = i;
  }

  std::vector<DocumentRecord> docs_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reads JSONL records into `store`. Malformed lines are logged and skipped;
/// a doc_id re-used with different content throws DuplicateDocument.
inline IngestReport ingest_documents(std::istream& in, CorpusStore& store,
                                     const IngestOptions& opt = {}) {
  IngestReport report;
  std::vector<DocumentRecord> batch;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      batch.push_back(parse_record(line, opt));
    } catch (const InvalidInput& e) {
      Rejection r{lineno, {}, e.what()};
      try {
        auto j = nlohmann::json::parse(line);
        if (j.is_object() && j.contains("doc_id") && j["doc_id"].is_string())
          r.doc_id = j["doc_id"].get<std::string>();
      } catch (...) {
      }
      report.rejections.push_back(std::move(r));
    }
  }
  const std::size_t before = store.size();
  const std::size_t offered = batch.size();
  store.insert_all(std::move(batch));
  report.accepted = store.size() - before;
  report.unchanged = offered - report.accepted;
  return report;
}

inline void write_rejections(std::ostream& os, const std::vector<Rejection>& rs) {
  csv::write_row(os, {"line", "doc_id", "reason"});
  for (const auto& r : rs) csv::write_row(os, {std::to_string(r.line), r.doc_id, r.reason});
}

// ---------------------------------------------------------------------------
// Cohort weights

struct CellKey {
  std::string institution;
  Year year = 0;
  auto operator<=>(const CellKey&) const = default;
};

inline std::string to_string(const CellKey& c) {
  return "(" + c.institution + ", " + std::to_string(c.year) + ")";
}

enum class CohortScope { sample, population };

struct CohortCountTable {
  CohortScope scope = CohortScope::sample;
  std::map<CellKey, std::int64_t> entries;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& [k, v] : entries) t += v;
    return t;
  }

  void add(const CellKey& k, std::int64_t n) {
    if (n < 0) throw InvalidInput("negative cohort count for " + to_string(k));
    entries[k] += n;
  }

  /// `institution,year,count`
  static CohortCountTable read_csv(std::istream& in, CohortScope scope) {
    auto t = csv::read(in, "cohort table");
    csv::expect_header(t, {"institution", "year", "count"}, "cohort table");
    CohortCountTable out;
    out.scope = scope;
    for (const auto& row : t.rows) {
      long long y = 0, n = 0;
      if (!parse_int(row[1], y) || !parse_int(row[2], n))
        throw InvalidInput("cohort table: bad year/count in row '" + join(row, ",") + "'");
      out.add({trim(row[0]), static_cast<Year>(y)}, n);
    }
    return out;
  }

  static CohortCountTable read_csv_file(const std::string& path, CohortScope scope) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    return read_csv(in, scope);
  }

  void write_csv(std::ostream& os) const {
    csv::write_row(os, {"institution", "year", "count"});
    for (const auto& [k, v] : entries)
      csv::write_row(os, {k.institution, std::to_string(k.year), std::to_string(v)});
  }

  /// Counts documents per (institution, year) within [from, to].
  static CohortCountTable from_corpus(const CorpusStore& store, Year from, Year to) {
    CohortCountTable out;
    out.scope = CohortScope::sample;
    for (const auto& d : store.documents())
      if (d.year >= from && d.year <= to) out.add({d.institution, d.year}, 1);
    return out;
  }
};

using WeightMap = std::map<CellKey, double>;

/// weight(u,y) = [sample(u,y)/sample_total] / [population(u,y)/population_total].
/// With `invert`, the reciprocal (inverse-probability form) is returned.
inline WeightMap compute_weights(const CohortCountTable& sample, const CohortCountTable& population,
                                 bool invert = false) {
  const double st = static_cast<double>(sample.total());
  const double pt = static_cast<double>(population.total());
  if (st <= 0) throw InvalidInput("sample cohort table is empty");
  std::vector<std::string> bad;
  for (const auto& [k, n] : sample.entries) {
    auto it = population.entries.find(k);
    if (it == population.entries.end() || it->second <= 0) bad.push_back(to_string(k));
  }
  if (!bad.empty())
    throw InvalidInput("population count missing or zero for sampled cells: " + join(bad, ", "));
  WeightMap w;
  for (const auto& [k, n] : sample.entries) {
    const double share_s = static_cast<double>(n) / st;
    const double share_p = static_cast<double>(population.entries.at(k)) / pt;
    w[k] = invert ? share_p / share_s : share_s / share_p;
  }
  return w;
}

inline void write_weights(std::ostream& os, const WeightMap& w) {
  csv::write_row(os, {"institution", "year", "weight"});
  for (const auto& [k, v] : w)
    csv::write_row(os, {k.institution, std::to_string(k.year), format_double(v)});
}

// ---------------------------------------------------------------------------
// Career outcome labels

/// Graduation year of each author: the year of their earliest document.
inline std::map<std::string, Year> graduation_years(const CorpusStore& store) {
  std::map<std::string, Year> out;
  for (const auto& d : store.documents()) {
    auto [it, inserted] = out.emplace(d.author_id, d.year);
    if (!inserted) it->second = std::min(it->second, d.year);
  }
  return out;
}

/// True iff the author is primary advisor of a document dated in
/// (graduation year, lookahead_end]. Authors graduating after grad_cutoff
/// are outside the followed cohorts and are omitted.
inline std::map<std::string, bool> label_research_faculty(const CorpusStore& store, Year grad_cutoff,
                                                          Year lookahead_end) {
  const auto grads = graduation_years(store);
  std::map<std::string, bool> out;
  for (const auto& [author, y] : grads)
    if (y <= grad_cutoff) out[author] = false;
  for (const auto& d : store.documents()) {
    const std::string* adv = d.primary_advisor();
    if (!adv || d.year > lookahead_end) continue;
    auto g = grads.find(*adv);
    if (g == grads.end()) continue;
    auto it = out.find(*adv);
    if (it != out.end() && d.year > g->second) it->second = true;
  }
  return out;
}

/// author_id -> publication years.
struct PublicationTable {
  std::map<std::string, std::vector<Year>> years;

  /// `author_id,year`
  static PublicationTable read_csv(std::istream& in) {
    auto t = csv::read(in, "publication table");
    csv::expect_header(t, {"author_id", "year"}, "publication table");
    PublicationTable p;
    for (const auto& row : t.rows) {
      long long y = 0;
      if (!parse_int(row[1], y))
        throw InvalidInput("publication table: bad year in row '" + join(row, ",") + "'");
      p.years[trim(row[0])].push_back(static_cast<Year>(y));
    }
    for (auto& [a, ys] : p.years) std::sort(ys.begin(), ys.end());
    return p;
  }

  static PublicationTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    return read_csv(in);
  }
};

/// True iff a publication falls in (grad, grad + window_years] or the author
/// is research faculty. Labels are produced for the authors in `faculty`.
inline std::map<std::string, bool> label_continued_research(const CorpusStore& store,
                                                            const PublicationTable& pubs,
                                                            const std::map<std::string, bool>& faculty,
                                                            int window_years = 5) {
  const auto grads = graduation_years(store);
  std::map<std::string, bool> out;
  for (const auto& [author, is_faculty] : faculty) {
    bool published = false;
    auto g = grads.find(author);
    auto p = pubs.years.find(author);
    if (g != grads.end() && p != pubs.years.end()) {
      for (Year y : p->second)
        if (y > g->second && y <= g->second + window_years) {
          published = true;
          break;
        }
    }
    out[author] = published || is_faculty;
  }
  return out;
}

}  // namespace linkmine::corpus
