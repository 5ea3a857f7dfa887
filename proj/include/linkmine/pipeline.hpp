#pragma once

// End-to-end orchestration. Each stage reads the persisted outputs of the
// stages before it, so subcommands can be run one at a time and every
// reported number can be recomputed from files in the run directory.
//
// Layout: corpus-wide artifacts (corpus store, token streams, demographic
// labels, weights) live in the run root. Scenario-dependent artifacts live
// in a scenario directory: the run root for the main scenario, and
// sweep/<label>/ for sweep scenarios.

#include <openssl/evp.h>

#include <boost/version.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <mutex>
#include <thread>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/config.hpp"
#include "linkmine/corpus.hpp"
#include "linkmine/csv.hpp"
#include "linkmine/demog.hpp"
#include "linkmine/embed.hpp"
#include "linkmine/links.hpp"
#include "linkmine/stats.hpp"
#include "linkmine/textprep.hpp"
#include "linkmine/topics.hpp"

namespace linkmine::pipeline {

namespace fs = std::filesystem;
using config::PipelineConfig;
using config::Scenario;

inline constexpr const char* kVersion = "0.1.0";

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error(stage + ": " + cause), stage_(std::move(stage)), cause_(cause) {}
  const std::string& stage() const { return stage_; }
  const std::string& cause() const { return cause_; }

 private:
  std::string stage_, cause_;
};

/// Runs `f`, tagging any failure with the stage name.
template <class F>
auto run_stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const config::ConfigError&) {
    throw;  // reported as a configuration problem, not a stage failure
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

/// Where progress lines go; null silences them.
inline std::ostream*& progress() {
  static std::ostream* os = nullptr;
  return os;
}

inline void note(const std::string& msg) {
  if (auto* os = progress()) *os << msg << '\n';
}

struct Layout {
  fs::path root;      // corpus-wide artifacts
  fs::path scenario;  // scenario-dependent artifacts

  static Layout main(const PipelineConfig& c) { return {c.out_dir, c.out_dir}; }
  static Layout swept(const PipelineConfig& c, const Scenario& s) {
    return {c.out_dir, c.out_dir / "sweep" / config::scenario_label(s)};
  }
};

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  return os;
}

inline std::ifstream open_in(const fs::path& p) {
  if (!fs::exists(p)) throw InvalidInput("missing artifact " + p.string());
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + p.string());
  return in;
}

inline csv::Table read_csv(const fs::path& p) {
  auto in = open_in(p);
  return csv::read(in, p.string());
}

inline std::string cell(double v) { return std::isfinite(v) ? format_double(v) : "NA"; }
inline std::string cell(std::optional<bool> b) { return b ? (*b ? "1" : "0") : "NA"; }

inline std::size_t column(const csv::Table& t, const std::string& name, const fs::path& where) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw InvalidInput(where.string() + ": no column '" + name + "'");
}

inline corpus::CorpusStore load_store(const Layout& l) {
  const auto p = l.root / "corpus.jsonl";
  if (!fs::exists(p)) throw InvalidInput("missing artifact " + p.string());
  return corpus::CorpusStore::load(p.string());
}

inline std::vector<textprep::TokenStream> load_streams(const Layout& l) {
  auto in = open_in(l.root / "streams.txt");
  return textprep::read_streams(in, (l.root / "streams.txt").string());
}

inline Year last_year(const corpus::CorpusStore& s) {
  if (s.empty()) throw InvalidInput("corpus is empty");
  return s.documents().back().year;
}

inline Year first_year(const corpus::CorpusStore& s) {
  if (s.empty()) throw InvalidInput("corpus is empty");
  return s.documents().front().year;
}

inline std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

}  // namespace detail

// ---- corpus-wide stages -------------------------------------------------------

inline void check_inputs(const PipelineConfig& c) {
  const auto missing = c.missing_inputs();
  if (!missing.empty()) throw config::ConfigError("missing input files: " + join(missing, ", "));
}

inline corpus::IngestReport stage_ingest(const PipelineConfig& c) {
  check_inputs(c);
  auto in = detail::open_in(c.corpus);
  corpus::CorpusStore store;
  auto rep = corpus::ingest_documents(in, store, {c.year_min, c.year_max});
  fs::create_directories(c.out_dir);
  store.save((c.out_dir / "corpus.jsonl").string());
  auto os = detail::open_out(c.out_dir / "rejections.csv");
  corpus::write_rejections(os, rep.rejections);
  note("ingest: " + std::to_string(store.size()) + " documents, " + std::to_string(rep.rejections.size()) +
       " rejected");
  return rep;
}

inline void stage_prep(const PipelineConfig& c) {
  const Layout l = Layout::main(c);
  const auto store = detail::load_store(l);
  std::vector<textprep::TokenStream> raw;
  raw.reserve(store.size());
  for (const auto& d : store.documents()) raw.push_back(textprep::normalize_tokenize(d.doc_id, d.abstract));
  const auto stemmed = textprep::stem_and_prune(raw);
  const auto phrased = textprep::mine_phrases(stemmed.streams, c.phrases);
  auto s = detail::open_out(l.root / "streams.txt");
  textprep::write_streams(s, phrased.streams);
  auto v = detail::open_out(l.root / "vocabulary.csv");
  textprep::write_vocabulary(v, textprep::count_tokens(phrased.streams));
  auto p = detail::open_out(l.root / "phrases.csv");
  textprep::write_phrases(p, phrased.vocabulary);
  note("prep: " + std::to_string(phrased.vocabulary.phrases.size()) + " phrases");
}

inline void stage_demog(const PipelineConfig& c) {
  check_inputs(c);
  const Layout l = Layout::main(c);
  const auto store = detail::load_store(l);
  using demog::TableKind;
  const auto gender = demog::read_name_table_file(c.gender_table.string(), TableKind::FirstNameGender);
  const auto race = demog::read_name_table_file(c.race_table.string(), TableKind::SurnameRace);
  std::optional<demog::NameFrequencyTable> gender2, race2;
  if (c.gender_secondary) gender2 = demog::read_name_table_file(c.gender_secondary->string(), TableKind::FirstNameGender);
  if (c.race_secondary) race2 = demog::read_name_table_file(c.race_secondary->string(), TableKind::FullNameRace);

  std::vector<demog::Student> students;
  std::set<std::string> seen;
  for (const auto& d : store.documents()) {
    if (!seen.insert(d.author_id).second) continue;  // earliest document defines the student
    demog::Student s;
    s.author_id = d.author_id;
    s.discipline = d.discipline;
    s.year = d.year;
    s.gender = demog::assign_gender(d.first_name, gender, c.thresholds, gender2 ? &*gender2 : nullptr);
    s.race = demog::assign_race(d.last_name, race, c.thresholds, race2 ? &*race2 : nullptr,
                                demog::canonical_full_name(d.first_name, d.last_name));
    students.push_back(std::move(s));
  }
  {
    auto os = detail::open_out(l.root / "labels.csv");
    demog::write_labels(os, students);
  }
  {
    const auto rep = demog::representation_stats(students);
    auto os = detail::open_out(l.root / "representation.csv");
    csv::write_row(os, {"author_id", "pct_same_gender", "pct_same_race", "gender_minority", "racial_minority"});
    for (std::size_t i = 0; i < students.size(); ++i)
      csv::write_row(os, {students[i].author_id, detail::cell(rep[i].pct_same_gender), detail::cell(rep[i].pct_same_race),
                          detail::cell(rep[i].gender_minority), detail::cell(rep[i].racial_minority)});
  }
  {
    const auto u = demog::unknown_shares(students);
    auto os = detail::open_out(l.root / "demog_summary.csv");
    csv::write_row(os, {"students", "unknown_gender_share", "unknown_race_share"});
    csv::write_row(os, {std::to_string(u.n), detail::cell(u.gender), detail::cell(u.race)});
  }

  // career outcomes
  const Year last = detail::last_year(store);
  const Year cutoff = c.grad_cutoff.value_or(c.analysis_end.value_or(last));
  const auto faculty = corpus::label_research_faculty(store, cutoff, c.lookahead_end.value_or(last));
  std::optional<std::map<std::string, bool>> continued;
  if (c.publications) {
    const auto pubs = corpus::PublicationTable::read_csv_file(c.publications->string());
    continued = corpus::label_continued_research(store, pubs, faculty, c.publication_window);
  }
  {
    auto os = detail::open_out(l.root / "careers.csv");
    csv::write_row(os, {"author_id", "research_faculty", "continued_research"});
    for (const auto& [a, f] : faculty)
      csv::write_row(os, {a, f ? "1" : "0", continued ? (continued->at(a) ? "1" : "0") : "NA"});
  }

  // survey weights over the credited cohorts
  const Year from = detail::first_year(store) + c.burn_in_years, to = c.analysis_end.value_or(last);
  const auto sample = corpus::CohortCountTable::from_corpus(store, from, to);
  corpus::WeightMap w;
  if (c.population_cohorts) {
    const auto pop = corpus::CohortCountTable::read_csv_file(c.population_cohorts->string(), corpus::CohortScope::population);
    w = corpus::compute_weights(sample, pop, c.invert_weights);
  } else {
    for (const auto& [k, n] : sample.entries) w[k] = 1.0;
  }
  auto os = detail::open_out(l.root / "weights.csv");
  corpus::write_weights(os, w);
  const auto u = demog::unknown_shares(students);
  note("demog: " + std::to_string(students.size()) + " students, unknown gender " + detail::cell(u.gender) +
       ", unknown race " + detail::cell(u.race));
}

// ---- scenario stages ------------------------------------------------------------

inline void stage_topics(const PipelineConfig& c, const Scenario& sc, const Layout& l) {
  const auto streams = detail::load_streams(l);
  topics::LdaOptions o;
  o.K = sc.k;
  o.seed = c.seed;
  o.iterations = c.iterations;
  const auto m = topics::fit_lda(streams, o);
  {
    auto os = detail::open_out(l.scenario / "beta.csv");
    topics::write_beta(os, m);
  }
  {
    auto os = detail::open_out(l.scenario / "theta.csv");
    topics::write_theta(os, m);
  }
  {
    auto os = detail::open_out(l.scenario / "topic_model.json");
    os << topics::manifest(m).dump(2) << '\n';
  }
  const auto coherence = topics::semantic_coherence(m, streams, c.coherence_top_m);
  const auto exclusivity = topics::exclusivity_score(m, c.coherence_top_m);
  const auto tops = topics::top_terms(m, c.coherence_top_m);
  {
    auto os = detail::open_out(l.scenario / "topic_validation.csv");
    csv::write_row(os, {"topic", "semantic_coherence", "exclusivity", "top_terms"});
    for (std::size_t k = 0; k < tops.size(); ++k) {
      std::vector<std::string> words;
      for (auto v : tops[k]) words.push_back(m.terms[v]);
      csv::write_row(os, {std::to_string(k), detail::cell(coherence[k]), detail::cell(exclusivity[k]), join(words, " ")});
    }
  }
  const auto store = detail::load_store(l);
  const auto mcc = topics::external_mcc(m, store.documents(), c.mcc_sample, c.seed);
  auto os = detail::open_out(l.scenario / "topic_mcc.csv");
  csv::write_row(os, {"sampled", "mcc", "degenerate", "tp", "fp", "fn", "tn"});
  csv::write_row(os, {std::to_string(mcc.sampled), detail::cell(mcc.mcc), mcc.degenerate ? "1" : "0",
                      std::to_string(mcc.confusion.tp), std::to_string(mcc.confusion.fp),
                      std::to_string(mcc.confusion.fn), std::to_string(mcc.confusion.tn)});
  note("topics " + config::scenario_label(sc) + ": K=" + std::to_string(m.K) + ", V=" + std::to_string(m.V()) +
       ", external mcc " + detail::cell(mcc.mcc));
}

inline void stage_concepts(const PipelineConfig& c, const Scenario& sc, const Layout& l) {
  const auto m = topics::read_model((l.scenario / "beta.csv").string(), (l.scenario / "theta.csv").string(),
                                    (l.scenario / "topic_model.json").string());
  const auto cv = topics::frex_extract(m, sc.frex_weight, c.top_n);
  {
    auto os = detail::open_out(l.scenario / "concepts.txt");
    topics::write_concepts(os, cv);
  }
  auto os = detail::open_out(l.scenario / "concepts_by_topic.csv");
  csv::write_row(os, {"topic", "rank", "concept"});
  for (std::size_t k = 0; k < cv.per_topic.size(); ++k)
    for (std::size_t r = 0; r < cv.per_topic[k].size(); ++r)
      csv::write_row(os, {std::to_string(k), std::to_string(r + 1), cv.per_topic[k][r]});
  note("concepts " + config::scenario_label(sc) + ": " + std::to_string(cv.concepts.size()));
}

struct LinkData {
  links::ConceptIndex index;
  std::vector<textprep::TokenStream> streams;
  std::vector<links::DocConcepts> docs;
  links::Cooccurrence cooccurrence;
  links::Admissible admissible;
  links::IntroductionResult result;
};

inline links::LedgerOptions ledger_options(const PipelineConfig& c) {
  links::LedgerOptions o;
  o.burn_in_years = c.burn_in_years;
  o.analysis_end = c.analysis_end;
  o.uptake_horizon = c.uptake_horizon;
  return o;
}

inline LinkData compute_links(const PipelineConfig& c, const Layout& l) {
  LinkData out;
  out.streams = detail::load_streams(l);
  {
    auto in = detail::open_in(l.scenario / "concepts.txt");
    out.index = links::ConceptIndex(topics::read_concepts(in));
  }
  const auto store = detail::load_store(l);
  std::map<std::string, Year> year_of;
  for (const auto& d : store.documents()) year_of.emplace(d.doc_id, d.year);
  for (const auto& s : out.streams) {
    auto y = year_of.find(s.doc_id);
    if (y == year_of.end()) throw InvalidInput("streams mention unknown document " + s.doc_id);
    out.docs.push_back({s.doc_id, y->second, links::doc_concepts(s.tokens, out.index)});
  }
  out.cooccurrence = links::build_cooccurrence(out.docs, out.index.size());
  out.admissible = links::filter_significant(out.cooccurrence, c.min_term_docs, c.top_rank);
  out.result = links::detect_introductions(out.docs, out.cooccurrence, out.admissible, ledger_options(c));
  return out;
}

inline void stage_links(const PipelineConfig& c, const Layout& l) {
  const auto ld = compute_links(c, l);
  const auto& L = ld.result.ledger;
  {
    auto os = detail::open_out(l.scenario / "ledger.csv");
    links::write_ledger(os, L, ld.index);
  }
  {
    auto os = detail::open_out(l.scenario / "new_links.csv");
    links::write_new_links(os, ld.result.records, ld.index);
  }
  std::int64_t credited = 0;
  for (const auto& e : L.entries) credited += !e.introducers.empty();
  auto os = detail::open_out(l.scenario / "links_summary.csv");
  csv::write_row(os, {"concepts", "cooccurring_pairs", "admissible_pairs", "credited_pairs", "concurrent_fraction",
                      "credit_start", "credit_end"});
  csv::write_row(os, {std::to_string(ld.index.size()), std::to_string(ld.cooccurrence.pairs.size()),
                      std::to_string(ld.admissible.size()), std::to_string(credited),
                      detail::cell(L.concurrent_fraction()), std::to_string(L.credit_start), std::to_string(L.credit_end)});
  note("links: " + std::to_string(credited) + " credited pairs of " + std::to_string(ld.admissible.size()));
}

inline void stage_embed(const PipelineConfig& c, const Layout& l) {
  const auto streams = detail::load_streams(l);
  auto in = detail::open_in(l.scenario / "concepts.txt");
  const links::ConceptIndex index(topics::read_concepts(in));
  std::vector<std::vector<std::string>> seqs;
  seqs.reserve(streams.size());
  for (const auto& s : streams) {
    std::vector<std::string> seq;
    for (const auto& t : s.tokens)
      if (index.id(t)) seq.push_back(t);
    seqs.push_back(std::move(seq));
  }
  auto opt = c.skipgram;
  opt.seed = c.seed;
  const auto emb = embed::train_skipgram(seqs, opt);
  auto os = detail::open_out(l.scenario / "embeddings.txt");
  embed::write_embeddings(os, emb);
  note("embed: " + std::to_string(emb.size()) + " vectors of " + std::to_string(emb.dims()));
}

inline void stage_novelty(const PipelineConfig& c, const Layout& l) {
  const auto ld = compute_links(c, l);
  auto in = detail::open_in(l.scenario / "embeddings.txt");
  const auto emb = embed::read_embeddings(in, (l.scenario / "embeddings.txt").string());
  auto os = detail::open_out(l.scenario / "novelty.csv");
  csv::write_row(os, {"doc_id", "year", "n_concepts", "n_new_links", "total_uptake", "uptake_per_new_link",
                      "distal_novelty", "distal_skipped"});
  std::size_t rows = 0;
  for (const auto& r : ld.result.records) {
    if (!r.in_window) continue;
    const auto dn = embed::distal_novelty(r, emb, ld.index);
    csv::write_row(os, {r.doc_id, std::to_string(r.year), std::to_string(r.n_concepts), std::to_string(r.n_new_links),
                        std::to_string(r.total_uptake), detail::cell(r.uptake_per_new_link),
                        detail::cell(dn.mean_distance), std::to_string(dn.skipped)});
    ++rows;
  }
  note("novelty: " + std::to_string(rows) + " documents in the credit window");
}

/// Per-document analysis table: novelty measures joined with corpus
/// metadata, demographic labels, representation, careers and weights.
inline stats::DataTable build_analysis(const Layout& l) {
  const auto novelty = detail::read_csv(l.scenario / "novelty.csv");
  const auto store = detail::load_store(l);
  std::map<std::string, demog::AuthorLabel> labels;
  {
    auto in = detail::open_in(l.root / "labels.csv");
    labels = demog::read_labels(in, (l.root / "labels.csv").string());
  }
  auto keyed = [](const csv::Table& t) {
    std::map<std::string, const std::vector<std::string>*> m;
    for (const auto& r : t.rows) m[r[0]] = &r;
    return m;
  };
  const auto rep_t = detail::read_csv(l.root / "representation.csv");
  const auto car_t = detail::read_csv(l.root / "careers.csv");
  const auto wt_t = detail::read_csv(l.root / "weights.csv");
  const auto rep = keyed(rep_t), car = keyed(car_t);
  std::map<corpus::CellKey, std::string> weight;
  for (const auto& r : wt_t.rows) {
    long long y = 0;
    if (!parse_int(r[1], y)) throw InvalidInput("weights.csv: bad year");
    weight[{r[0], static_cast<Year>(y)}] = r[2];
  }

  std::vector<std::string> names{"doc_id",      "author_id",          "year",          "institution",
                                 "discipline",  "n_concepts",         "n_new_links",   "total_uptake",
                                 "uptake_per_new_link", "distal_novelty", "distal_skipped", "log_new_links",
                                 "gender",      "race",               "woman",         "urm",
                                 "asian",       "pct_same_gender",    "pct_same_race", "gender_minority",
                                 "racial_minority", "research_faculty", "continued_research", "weight"};
  std::map<std::string, std::vector<std::string>> cols;
  for (const auto& n : names) cols[n];
  for (const auto& row : novelty.rows) {
    const auto* d = store.find(row[0]);
    if (!d) throw InvalidInput("novelty.csv mentions unknown document " + row[0]);
    auto put = [&](const char* n, std::string v) { cols[n].push_back(std::move(v)); };
    put("doc_id", row[0]);
    put("author_id", d->author_id);
    put("year", row[1]);
    put("institution", d->institution);
    put("discipline", d->discipline);
    put("n_concepts", row[2]);
    put("n_new_links", row[3]);
    put("total_uptake", row[4]);
    put("uptake_per_new_link", row[5]);
    put("distal_novelty", row[6]);
    put("distal_skipped", row[7]);
    double links = 0;
    parse_double(row[3], links);
    put("log_new_links", format_double(std::log1p(links)));
    const auto lab = labels.count(d->author_id) ? labels.at(d->author_id) : demog::AuthorLabel{};
    put("gender", demog::to_string(lab.gender));
    put("race", demog::to_string(lab.race));
    put("woman", lab.gender == demog::Gender::Unknown ? "NA" : lab.gender == demog::Gender::Woman ? "1" : "0");
    put("urm", lab.race == demog::Race::Unknown ? "NA" : lab.race == demog::Race::Urm ? "1" : "0");
    put("asian", lab.race == demog::Race::Unknown ? "NA" : lab.race == demog::Race::Asian ? "1" : "0");
    auto r = rep.find(d->author_id);
    for (int k = 0; k < 4; ++k) {
      static const char* kRep[] = {"pct_same_gender", "pct_same_race", "gender_minority", "racial_minority"};
      put(kRep[k], r == rep.end() ? "NA" : (*r->second)[static_cast<std::size_t>(k) + 1]);
    }
    auto cr = car.find(d->author_id);
    put("research_faculty", cr == car.end() ? "NA" : (*cr->second)[1]);
    put("continued_research", cr == car.end() ? "NA" : (*cr->second)[2]);
    auto w = weight.find({d->institution, d->year});
    put("weight", w == weight.end() ? "NA" : w->second);
  }
  stats::DataTable t;
  for (const auto& n : names) t.add_text(n, std::move(cols[n]));
  return t;
}

inline void stage_regress(const PipelineConfig& c, const Layout& l) {
  const auto data = build_analysis(l);
  {
    auto os = detail::open_out(l.scenario / "analysis.csv");
    data.write_csv(os);
  }
  if (data.rows() == 0) throw InvalidInput("no documents in the credit window");
  auto coef = detail::open_out(l.scenario / "coefficients.csv");
  auto fits = detail::open_out(l.scenario / "fits.csv");
  auto ame = detail::open_out(l.scenario / "ame.csv");
  auto curves = detail::open_out(l.scenario / "ame_curves.csv");
  auto irr = detail::open_out(l.scenario / "irr.csv");
  auto slopes = detail::open_out(l.scenario / "slope_tests.csv");
  auto slope_curves = detail::open_out(l.scenario / "slope_curves.csv");
  csv::write_row(coef, {"model", "term", "estimate", "std_error", "z", "p_value"});
  csv::write_row(fits, {"model", "family", "n", "excluded", "dropped_cells", "loglik", "alpha", "alpha_se", "r_squared",
                        "iterations", "converged", "separation"});
  csv::write_row(ame, {"model", "variable", "binary", "ame", "std_error"});
  csv::write_row(curves, {"model", "variable", "x", "prediction", "std_error"});
  csv::write_row(irr, {"model", "term", "irr", "lower", "upper", "p_value"});
  csv::write_row(slopes, {"model", "group", "continuous", "interaction", "estimate", "std_error", "p_value", "median",
                          "sd", "gap_at_median", "gap_at_median_2sd"});
  csv::write_row(slope_curves, {"model", "group", "group_value", "continuous", "x", "prediction", "std_error"});

  for (const auto& spec : c.models) {
    run_stage("model " + spec.name, [&] {
      const auto d = stats::build_design(data, spec);
      stats::FitOptions fo;
      fo.se = spec.se;
      const auto f = stats::fit(d, fo);
      stats::write_coefficients(coef, spec.name, f, false);
      std::vector<std::string> dropped;
      for (const auto& dc : f.dropped) dropped.push_back(dc.factor + "[" + dc.level + "]");
      csv::write_row(fits, {spec.name, stats::to_string(f.family), std::to_string(f.n), std::to_string(d.excluded),
                            join(dropped, " "), detail::cell(f.loglik), detail::cell(f.alpha), detail::cell(f.alpha_se),
                            detail::cell(f.r_squared), std::to_string(f.iterations), f.converged ? "1" : "0",
                            f.separation ? "1" : "0"});
      for (const auto& var : spec.covariates) {
        const auto a = stats::average_marginal_effect(f, d, var, c.ame_grid_points);
        csv::write_row(ame, {spec.name, var, a.binary ? "1" : "0", detail::cell(a.estimate), detail::cell(a.std_error)});
        for (const auto& p : a.grid)
          csv::write_row(curves, {spec.name, var, detail::cell(p.x), detail::cell(p.prediction), detail::cell(p.std_error)});
      }
      if (f.family == stats::Family::NegBin)
        for (const auto& r : stats::irr_table(f))
          csv::write_row(irr, {spec.name, r.term, detail::cell(r.irr), detail::cell(r.lower), detail::cell(r.upper),
                               detail::cell(r.p_value)});
      for (const auto& st : c.slope_tests) {
        if (st.model != spec.name) continue;
        const auto t = stats::interaction_slope_test(f, d, st.group, st.continuous, c.ame_grid_points);
        csv::write_row(slopes, {spec.name, st.group, st.continuous, t.interaction.term, detail::cell(t.interaction.estimate),
                                detail::cell(t.interaction.std_error), detail::cell(t.interaction.p_value),
                                detail::cell(t.median), detail::cell(t.sd), detail::cell(t.gap_at_median),
                                detail::cell(t.gap_at_median_2sd)});
        for (int g = 0; g < 2; ++g)
          for (const auto& p : g ? t.group1 : t.group0)
            csv::write_row(slope_curves, {spec.name, st.group, std::to_string(g), st.continuous, detail::cell(p.x),
                                          detail::cell(p.prediction), detail::cell(p.std_error)});
      }
      note("regress " + spec.name + ": n=" + std::to_string(f.n) + (f.converged ? "" : " (not converged)"));
      return 0;
    });
  }
}

// ---- report ------------------------------------------------------------------------

struct Summary {
  std::string variable;
  std::size_t n = 0;
  double mean = kNaN, median = kNaN, sd = kNaN;
};

/// Mean, median and sample SD over the finite values.
inline Summary summarize(const std::string& name, const std::vector<double>& values) {
  Summary s;
  s.variable = name;
  std::vector<double> v;
  for (double x : values)
    if (std::isfinite(x)) v.push_back(x);
  s.n = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  const std::size_t m = v.size();
  s.median = m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
  if (m > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(m - 1));
  }
  return s;
}

inline const std::vector<std::string>& report_inputs() {
  static const std::vector<std::string> files{"novelty.csv", "new_links.csv", "ledger.csv", "coefficients.csv",
                                              "irr.csv",     "ame.csv",       "ame_curves.csv"};
  return files;
}

struct UptakeShare {
  std::int64_t new_links = 0, never_reused = 0;
  double share = kNaN;
};

/// Distinct credited links and how many were never used after introduction,
/// counted from the exported ledger.
inline UptakeShare never_reused_share(const csv::Table& new_links, const csv::Table& ledger) {
  std::set<std::pair<std::string, std::string>> credited;
  for (const auto& r : new_links.rows) credited.emplace(r[1], r[2]);
  UptakeShare u;
  for (const auto& r : ledger.rows) {
    if (!credited.count({r[0], r[1]})) continue;
    ++u.new_links;
    u.never_reused += r[3] == "0";
  }
  if (u.new_links) u.share = static_cast<double>(u.never_reused) / static_cast<double>(u.new_links);
  return u;
}

inline void export_report(const PipelineConfig& c, const Layout& l) {
  std::vector<std::string> missing;
  for (const auto& f : report_inputs())
    if (!fs::exists(l.scenario / f)) missing.push_back(f);
  if (!missing.empty())
    throw InvalidInput("incomplete run in " + l.scenario.string() + "; missing " + join(missing, ", "));
  const stats::DataTable nov(detail::read_csv(l.scenario / "novelty.csv"));
  if (nov.rows() == 0) throw InvalidInput("run has no documents in the credit window; nothing to report");

  {
    auto os = detail::open_out(l.scenario / "descriptives.csv");
    csv::write_row(os, {"variable", "n", "mean", "median", "sd"});
    for (const char* v : {"n_concepts", "n_new_links", "uptake_per_new_link", "distal_novelty"}) {
      const auto s = summarize(v, nov.numeric(v));
      csv::write_row(os, {s.variable, std::to_string(s.n), detail::cell(s.mean), detail::cell(s.median), detail::cell(s.sd)});
    }
  }
  {
    const auto years = nov.numeric("year");
    const auto links = nov.numeric("n_new_links"), uptake = nov.numeric("uptake_per_new_link"),
               distal = nov.numeric("distal_novelty");
    std::map<int, std::array<std::vector<double>, 3>> by_year;
    for (std::size_t i = 0; i < years.size(); ++i) {
      auto& b = by_year[static_cast<int>(years[i])];
      b[0].push_back(links[i]);
      b[1].push_back(uptake[i]);
      b[2].push_back(distal[i]);
    }
    auto os = detail::open_out(l.scenario / "over_time.csv");
    csv::write_row(os, {"year", "documents", "mean_n_new_links", "mean_uptake_per_new_link", "mean_distal_novelty"});
    for (const auto& [y, b] : by_year)
      csv::write_row(os, {std::to_string(y), std::to_string(b[0].size()), detail::cell(summarize("", b[0]).mean),
                          detail::cell(summarize("", b[1]).mean), detail::cell(summarize("", b[2]).mean)});
  }
  {
    const auto u = never_reused_share(detail::read_csv(l.scenario / "new_links.csv"), detail::read_csv(l.scenario / "ledger.csv"));
    auto os = detail::open_out(l.scenario / "uptake_share.csv");
    csv::write_row(os, {"new_links", "never_reused", "share_never_reused"});
    csv::write_row(os, {std::to_string(u.new_links), std::to_string(u.never_reused), detail::cell(u.share)});
  }
  {
    const auto coef = detail::read_csv(l.scenario / "coefficients.csv");
    auto os = detail::open_out(l.scenario / "key_effects.csv");
    csv::write_row(os, {"model", "term", "estimate", "std_error", "p_value", "exp_estimate"});
    for (const auto& kt : c.key_terms)
      for (const auto& r : coef.rows)
        if (r[0] == kt.model && r[1] == kt.term) {
          double b = kNaN;
          parse_double(r[2], b);
          csv::write_row(os, {r[0], r[1], r[2], r[3], r[5], detail::cell(std::exp(b))});
        }
  }
  note("report written to " + l.scenario.string());
}

// ---- manifest, full runs and sweeps -------------------------------------------------

inline void write_manifest(const PipelineConfig& c, const Scenario& sc) {
  nlohmann::ordered_json j;
  j["tool"] = "linkmine";
  j["version"] = kVersion;
  j["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
                    {"boost", BOOST_LIB_VERSION},
                    {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                          std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                          std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  j["seed"] = c.seed;
  j["scenario"] = {{"k", sc.k}, {"frex_weight", sc.frex_weight}};
  j["config_sha256"] = detail::sha256_file(c.source);
  j["input_sha256"] = nlohmann::ordered_json::object();
  j["input_sha256"]["corpus"] = detail::sha256_file(c.corpus);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(c.out_dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  auto& out = j["outputs"] = nlohmann::ordered_json::object();
  for (const auto& f : files) out[fs::relative(f, c.out_dir).generic_string()] = detail::sha256_file(f);
  auto os = detail::open_out(c.out_dir / "manifest.json");
  os << j.dump(2) << '\n';
}

/// Scenario stages, topics through regression.
inline void run_scenario(const PipelineConfig& c, const Scenario& sc, const Layout& l) {
  run_stage("topics", [&] { stage_topics(c, sc, l); return 0; });
  run_stage("concepts", [&] { stage_concepts(c, sc, l); return 0; });
  run_stage("links", [&] { stage_links(c, l); return 0; });
  run_stage("embed", [&] { stage_embed(c, l); return 0; });
  run_stage("novelty", [&] { stage_novelty(c, l); return 0; });
  run_stage("regress", [&] { stage_regress(c, l); return 0; });
}

/// Every stage for the main scenario, then the report and the manifest.
inline void run_pipeline(const PipelineConfig& c) {
  run_stage("config", [&] { check_inputs(c); return 0; });
  const Layout l = Layout::main(c);
  run_stage("ingest", [&] { return stage_ingest(c); });
  run_stage("prep", [&] { stage_prep(c); return 0; });
  run_stage("demog", [&] { stage_demog(c); return 0; });
  run_scenario(c, c.main, l);
  run_stage("report", [&] { export_report(c, l); return 0; });
  run_stage("manifest", [&] { write_manifest(c, c.main); return 0; });
}

struct SweepCell {
  Scenario scenario;
  std::string model, term;
  double estimate = kNaN, std_error = kNaN, p_value = kNaN;
};

/// Terms tracked across scenarios: the configured key terms, or every
/// covariate of every model.
inline std::vector<config::KeyTerm> sweep_terms(const PipelineConfig& c) {
  if (!c.key_terms.empty()) return c.key_terms;
  std::vector<config::KeyTerm> out;
  for (const auto& m : c.models)
    for (const auto& v : m.covariates) out.push_back({m.name, v});
  return out;
}

inline std::vector<SweepCell> read_sweep_cells(const PipelineConfig& c, const Scenario& sc, const Layout& l) {
  const auto coef = detail::read_csv(l.scenario / "coefficients.csv");
  std::vector<SweepCell> out;
  for (const auto& kt : sweep_terms(c)) {
    SweepCell cell{sc, kt.model, kt.term};
    for (const auto& r : coef.rows)
      if (r[0] == kt.model && r[1] == kt.term) {
        parse_double(r[2], cell.estimate);
        parse_double(r[3], cell.std_error);
        parse_double(r[5], cell.p_value);
      }
    out.push_back(cell);
  }
  return out;
}

inline std::string stars(double p) {
  if (!std::isfinite(p)) return "";
  return p < 0.001 ? "***" : p < 0.01 ? "**" : p < 0.05 ? "*" : "";
}

/// Fits every scenario of the grid (corpus-wide stages must exist) and
/// writes the sign/significance grid to sweep.csv.
inline std::vector<SweepCell> run_sweep(const PipelineConfig& c) {
  const auto grid = c.sweep();
  std::vector<std::string> errors(grid.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= grid.size()) return;
        i = next++;
      }
      try {
        run_scenario(c, grid[i], Layout::swept(c, grid[i]));
      } catch (const std::exception& e) {
        errors[i] = config::scenario_label(grid[i]) + ": " + e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto jobs = std::min<std::size_t>(static_cast<std::size_t>(c.jobs), grid.size());
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw StageError("sweep", e);

  std::vector<SweepCell> cells;
  for (const auto& sc : grid)
    for (auto& cell : read_sweep_cells(c, sc, Layout::swept(c, sc))) cells.push_back(std::move(cell));
  auto os = detail::open_out(c.out_dir / "sweep.csv");
  csv::write_row(os, {"k", "frex_weight", "model", "term", "estimate", "std_error", "p_value", "sign", "significance"});
  for (const auto& x : cells)
    csv::write_row(os, {std::to_string(x.scenario.k), format_double(x.scenario.frex_weight), x.model, x.term,
                        detail::cell(x.estimate), detail::cell(x.std_error), detail::cell(x.p_value),
                        !std::isfinite(x.estimate) ? "NA" : x.estimate > 0 ? "+" : x.estimate < 0 ? "-" : "0",
                        stars(x.p_value)});
  return cells;
}

}  // namespace linkmine::pipeline
