#pragma once

// Synthetic corpus with a planted subgroup effect, for smoke runs and
// end-to-end checks. Documents draw from disjoint topic vocabularies; some
// words are borrowed from foreign topics (creating cross-topic links), and
// later documents reuse earlier borrowings. Women borrow at a higher rate,
// and their borrowings are reused less.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/corpus.hpp"
#include "linkmine/csv.hpp"
#include "linkmine/snowball.hpp"
#include "linkmine/stopwords.hpp"

namespace linkmine::synth {

struct SynthOptions {
  std::uint64_t seed = 7;
  int first_year = 1981;
  int years = 20;
  int docs_per_year = 400;
  int topics = 20;
  int words_per_topic = 40;
  int generic_words = 15;
  int tokens_per_doc = 30;
  double generic_share = 0.15;
  double foreign_rate = 0.8;        // borrowed words per document
  double foreign_multiplier = 2.0;  // applied for women
  double reuse_rate = 2.0;          // reuse draws per document
  double reuse_weight = 0.5;        // relative pull of women's borrowings
  double woman_share = 0.4;
  int institutions = 12;
  int disciplines = 5;
  double phrase_share = 0.6;        // documents containing their topic's phrase
  double faculty_share = 0.08;
  double publication_share = 0.3;
};

struct Author {
  std::string id;
  bool woman = false;
  int race = 0;  // 0 white, 1 asian, 2 hispanic, 3 black
  int grad_year = 0;
};

struct SynthCorpus {
  std::vector<corpus::DocumentRecord> docs;
  std::vector<Author> authors;  // aligned with docs
  std::vector<std::vector<std::string>> topic_words;
  std::vector<std::pair<std::string, std::string>> phrases;  // per topic
  std::vector<std::string> generic;
  // name tables as CSV rows
  std::vector<std::vector<std::string>> gender_rows, gender_secondary_rows, race_rows, race_secondary_rows;
  std::vector<std::vector<std::string>> population_rows, publication_rows;
};

namespace detail {

// Pseudo-words that tokenize to themselves and are fixed points of the stemmer.
class WordMaker {
 public:
  explicit WordMaker(Rng& rng) : rng_(rng) {}

  std::string word(int syllables) {
    static constexpr std::string_view kCons = "bdfgklmnprstvz";
    static constexpr std::string_view kVow = "aiou";
    for (;;) {
      std::string w;
      for (int s = 0; s < syllables; ++s) {
        w += kCons[rng_.below(kCons.size())];
        w += kVow[rng_.below(kVow.size())];
      }
      w += kCons[rng_.below(kCons.size())];
      if (used_.count(w) || textprep_stop(w) || snowball::stem(w) != w) continue;
      used_.insert(w);
      return w;
    }
  }

  std::string name() {
    std::string w = word(2);
    w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
  }

 private:
  static bool textprep_stop(const std::string& w) { return is_stop_word(w); }
  Rng& rng_;
  std::set<std::string> used_;
};

inline std::string fmt(double v) { return format_double(std::round(v * 1000) / 1000); }
// Rounds down so that rounded shares never sum above one.
inline std::string fmt_down(double v) { return format_double(std::floor(v * 1000) / 1000); }

}  // namespace detail

inline SynthCorpus generate(const SynthOptions& opt = {}) {
  Rng rng(opt.seed);
  detail::WordMaker maker(rng);
  SynthCorpus out;

  for (int t = 0; t < opt.topics; ++t) {
    std::vector<std::string> ws;
    for (int i = 0; i < opt.words_per_topic; ++i) ws.push_back(maker.word(2));
    out.topic_words.push_back(std::move(ws));
    out.phrases.emplace_back(maker.word(2), maker.word(2));
  }
  for (int i = 0; i < opt.generic_words; ++i) out.generic.push_back(maker.word(1));

  // Zipf-like within-topic frequencies
  std::vector<double> cum;
  double s = 0;
  for (int i = 0; i < opt.words_per_topic; ++i) cum.push_back(s += 1.0 / std::pow(i + 1.0, 0.6));
  auto zipf = [&] {
    const double u = rng.uniform() * cum.back();
    return static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
  };

  // names: female, male and ambiguous first names; surnames per race group
  std::vector<std::string> female, male, ambiguous;
  for (int i = 0; i < 40; ++i) {
    female.push_back(maker.name());
    male.push_back(maker.name());
  }
  for (int i = 0; i < 8; ++i) ambiguous.push_back(maker.name());
  for (const auto& n : female) out.gender_rows.push_back({n, detail::fmt(0.93 + 0.06 * rng.uniform()), ""});
  for (const auto& n : male) out.gender_rows.push_back({n, detail::fmt(0.01 + 0.06 * rng.uniform()), ""});
  for (const auto& n : ambiguous) out.gender_rows.push_back({n, detail::fmt(0.4 + 0.2 * rng.uniform()), ""});
  for (auto& r : out.gender_rows) {
    double f;
    parse_double(r[1], f);
    r[2] = detail::fmt(1 - f);
  }
  std::vector<std::vector<std::string>> surnames(4);
  // columns: white, black, asian, hispanic, native, other
  const double profile[4][6] = {{0.86, 0.08, 0.01, 0.02, 0.01, 0.02},
                                {0.05, 0.01, 0.90, 0.01, 0.0, 0.03},
                                {0.12, 0.02, 0.01, 0.82, 0.01, 0.02},
                                {0.32, 0.62, 0.0, 0.02, 0.01, 0.03}};
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 30; ++i) {
      surnames[g].push_back(maker.name());
      std::vector<std::string> row{surnames[g].back()};
      double total = 0;
      std::vector<double> f(6);
      for (int c = 0; c < 6; ++c) total += (f[c] = profile[g][c] * (0.9 + 0.2 * rng.uniform()));
      for (double v : f) row.push_back(detail::fmt_down(v / total));
      out.race_rows.push_back(std::move(row));
    }

  std::vector<std::string> inst;
  for (int i = 0; i < opt.institutions; ++i) inst.push_back("U" + std::string(i < 9 ? "0" : "") + std::to_string(i + 1));
  std::vector<double> inst_cum;
  s = 0;
  for (int i = 0; i < opt.institutions; ++i) inst_cum.push_back(s += 1.0 + 0.5 * (i % 3));

  // reuse registry per home topic: borrowed word and its pull
  struct Borrow {
    std::string word;
    double weight;
  };
  std::vector<std::vector<Borrow>> registry(static_cast<std::size_t>(opt.topics)), pending(registry.size());
  std::vector<std::vector<double>> reg_cum(registry.size());
  std::vector<std::size_t> faculty;  // indices of future advisors
  std::map<std::pair<std::string, int>, std::int64_t> cohort;

  int serial = 0;
  for (int yi = 0; yi < opt.years; ++yi) {
    const int year = opt.first_year + yi;
    for (std::size_t t = 0; t < registry.size(); ++t) {
      for (auto& b : pending[t]) registry[t].push_back(std::move(b));
      pending[t].clear();
      reg_cum[t].clear();
      double c = 0;
      for (const auto& b : registry[t]) reg_cum[t].push_back(c += b.weight);
    }
    for (int k = 0; k < opt.docs_per_year; ++k, ++serial) {
      corpus::DocumentRecord d;
      Author a;
      char buf[32];
      std::snprintf(buf, sizeof buf, "d%05d", serial);
      d.doc_id = buf;
      std::snprintf(buf, sizeof buf, "a%05d", serial);
      a.id = d.author_id = buf;
      a.grad_year = d.year = year;
      a.woman = rng.bernoulli(opt.woman_share);
      const double ru = rng.uniform();
      a.race = ru < 0.6 ? 0 : ru < 0.8 ? 1 : ru < 0.92 ? 2 : 3;
      if (rng.bernoulli(0.04)) {
        d.first_name = ambiguous[rng.below(ambiguous.size())];
      } else {
        const auto& pool = a.woman ? female : male;
        d.first_name = pool[rng.below(pool.size())];
      }
      d.last_name = surnames[a.race][rng.below(surnames[a.race].size())];

      const auto topic = static_cast<std::size_t>(rng.below(opt.topics));
      const auto u = rng.uniform() * inst_cum.back();
      d.institution = inst[static_cast<std::size_t>(std::upper_bound(inst_cum.begin(), inst_cum.end(), u) - inst_cum.begin())];
      d.discipline = "field" + std::to_string(topic % static_cast<std::size_t>(opt.disciplines) + 1);
      d.fields_listed = {d.discipline, "area" + std::to_string(topic + 1)};
      d.keywords = {out.topic_words[topic][0], out.topic_words[topic][1 + rng.below(3)]};
      ++cohort[{d.institution, year}];

      std::vector<std::string> tokens;
      const int n_tok = opt.tokens_per_doc - 5 + static_cast<int>(rng.below(11));
      for (int i = 0; i < n_tok; ++i) {
        if (rng.bernoulli(opt.generic_share))
          tokens.push_back(out.generic[rng.below(out.generic.size())]);
        else
          tokens.push_back(out.topic_words[topic][zipf()]);
      }
      const double rate = opt.foreign_rate * (a.woman ? opt.foreign_multiplier : 1.0);
      const auto n_foreign = rng.poisson(rate);
      for (std::int64_t i = 0; i < n_foreign; ++i) {
        auto other = static_cast<std::size_t>(rng.below(opt.topics - 1));
        if (other >= topic) ++other;
        const auto& w = out.topic_words[other][rng.below(opt.words_per_topic)];
        tokens.push_back(w);
        pending[topic].push_back({w, a.woman ? opt.reuse_weight : 1.0});
      }
      if (!registry[topic].empty()) {
        const auto n_reuse = rng.poisson(opt.reuse_rate);
        for (std::int64_t i = 0; i < n_reuse; ++i) {
          const double v = rng.uniform() * reg_cum[topic].back();
          const auto j = static_cast<std::size_t>(std::upper_bound(reg_cum[topic].begin(), reg_cum[topic].end(), v) -
                                                  reg_cum[topic].begin());
          tokens.push_back(registry[topic][std::min(j, registry[topic].size() - 1)].word);
        }
      }
      rng.shuffle(tokens);
      if (rng.bernoulli(opt.phrase_share)) {
        const auto at = rng.below(tokens.size() + 1);
        tokens.insert(tokens.begin() + static_cast<long>(at), {out.phrases[topic].first, out.phrases[topic].second});
      }

      // prose: stop words, numbers and punctuation around the content words
      static const char* kGlue[] = {"the", "of", "and", "in", "for", "with", "this", "we"};
      std::string text;
      int sentence = 0;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::string word = tokens[i];
        if (sentence == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
        if (!text.empty()) text += ' ';
        text += word;
        const bool phrase_next = i + 1 < tokens.size() && tokens[i] == out.phrases[topic].first &&
                                 tokens[i + 1] == out.phrases[topic].second;
        if (phrase_next) {
          ++sentence;
          continue;
        }
        if (++sentence >= 7 && rng.bernoulli(0.3)) {
          text += rng.bernoulli(0.2) ? " in " + std::to_string(10 + rng.below(90)) + "." : ".";
          sentence = 0;
        } else if (rng.bernoulli(0.35)) {
          text += ' ';
          text += kGlue[rng.below(8)];
        } else if (rng.bernoulli(0.05)) {
          text += ',';
        }
      }
      d.abstract = text + ".";

      // advisors: future faculty who graduated at least three years earlier
      std::vector<std::size_t> eligible;
      for (std::size_t f : faculty)
        if (out.authors[f].grad_year <= year - 3) eligible.push_back(f);
      if (!eligible.empty() && rng.bernoulli(0.7))
        d.advisor_ids.push_back(out.authors[eligible[rng.below(eligible.size())]].id);
      else
        d.advisor_ids.push_back("ext" + std::to_string(rng.below(500)));
      if (rng.bernoulli(0.3)) d.advisor_ids.push_back("ext" + std::to_string(rng.below(500)));

      const bool future_faculty = rng.bernoulli(opt.faculty_share);
      if (future_faculty) faculty.push_back(out.authors.size());
      if (future_faculty || rng.bernoulli(opt.publication_share))
        out.publication_rows.push_back({a.id, std::to_string(year + 1 + static_cast<int>(rng.below(5)))});
      if (rng.bernoulli(0.2)) out.publication_rows.push_back({a.id, std::to_string(year + 6 + static_cast<int>(rng.below(5)))});

      out.docs.push_back(std::move(d));
      out.authors.push_back(std::move(a));
    }
  }

  for (const auto& n : ambiguous)
    if (rng.bernoulli(0.5)) out.gender_secondary_rows.push_back({n, detail::fmt(rng.bernoulli(0.5) ? 0.9 : 0.1)});
  for (std::size_t i = 0; i < out.docs.size(); i += 37) {
    const auto& d = out.docs[i];
    if (out.authors[i].race != 2) continue;
    out.race_secondary_rows.push_back(
        {to_lower_ascii(d.first_name + " " + d.last_name), "0.1", "0.02", "0.01", "0.85"});
  }
  for (const auto& [k, n] : cohort) {
    const double factor = 0.8 + 0.8 * rng.uniform();
    out.population_rows.push_back({k.first, std::to_string(k.second),
                                   std::to_string(static_cast<std::int64_t>(std::round(n * factor * 10)))});
  }
  return out;
}

namespace detail {

inline void write_csv(const std::filesystem::path& p, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  csv::write_row(os, header);
  for (const auto& r : rows) csv::write_row(os, r);
}

}  // namespace detail

/// Writes corpus, name tables, cohort counts, publications and a pipeline
/// config (`fixture.ini`) into `dir`.
inline void write_fixture(const std::filesystem::path& dir, const SynthCorpus& c, const SynthOptions& opt) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "corpus.jsonl", std::ios::binary);
    for (const auto& d : c.docs) os << corpus::to_json(d).dump() << '\n';
  }
  detail::write_csv(dir / "gender.csv", {"name", "female", "male"}, c.gender_rows);
  detail::write_csv(dir / "gender_secondary.csv", {"name", "female"}, c.gender_secondary_rows);
  detail::write_csv(dir / "race.csv", {"name", "white", "black", "asian", "hispanic", "native", "other"}, c.race_rows);
  detail::write_csv(dir / "race_secondary.csv", {"name", "white", "black", "asian", "hispanic"}, c.race_secondary_rows);
  detail::write_csv(dir / "population_cohorts.csv", {"institution", "year", "count"}, c.population_rows);
  detail::write_csv(dir / "publications.csv", {"author_id", "year"}, c.publication_rows);

  const int last = opt.first_year + opt.years - 1;
  std::ofstream ini(dir / "fixture.ini", std::ios::binary);
  ini << "# synthetic fixture; paths are relative to this file\n"
      << "[paths]\n"
      << "corpus = corpus.jsonl\n"
      << "gender_table = gender.csv\n"
      << "gender_secondary = gender_secondary.csv\n"
      << "race_table = race.csv\n"
      << "race_secondary = race_secondary.csv\n"
      << "population_cohorts = population_cohorts.csv\n"
      << "publications = publications.csv\n"
      << "out_dir = run\n\n"
      << "[run]\n"
      << "seed = 11\n"
      << "year_min = " << opt.first_year << "\n"
      << "year_max = " << last << "\n"
      << "burn_in_years = 5\n"
      << "analysis_end = " << last - 3 << "\n"
      << "grad_cutoff = " << last - 3 << "\n"
      << "lookahead_end = " << last << "\n\n"
      << "[textprep]\n"
      << "phrase_min_count = 40\n"
      << "phrase_threshold = 5\n\n"
      << "[topics]\n"
      << "k = " << opt.topics << "\n"
      << "frex_weight = 0.5\n"
      << "sweep_k = " << opt.topics - 4 << "," << opt.topics - 2 << "," << opt.topics << "\n"
      << "sweep_frex_weight = 0.25,0.5,0.75\n"
      << "top_n = " << opt.words_per_topic << "\n"
      << "iterations = 30\n\n"
      << "[links]\n"
      << "min_term_docs = 10\n\n"
      << "[embed]\n"
      << "dims = 50\n"
      << "epochs = 3\n\n"
      << "[model.novelty]\n"
      << "family = negbin\n"
      << "outcome = n_new_links\n"
      << "covariates = woman,urm,asian\n"
      << "fixed_effects = institution,discipline,year\n"
      << "weights = weight\n"
      << "filter = novelty\n\n"
      << "[model.uptake]\n"
      << "family = negbin\n"
      << "outcome = total_uptake\n"
      << "offset = n_new_links\n"
      << "covariates = woman,urm,asian\n"
      << "fixed_effects = institution,discipline,year\n"
      << "weights = weight\n"
      << "filter = uptake\n\n"
      << "[model.distal]\n"
      << "family = ols\n"
      << "outcome = distal_novelty\n"
      << "covariates = woman,urm,asian\n"
      << "fixed_effects = institution,discipline,year\n"
      << "weights = weight\n"
      << "filter = distal\n\n"
      << "[model.faculty]\n"
      << "family = logistic\n"
      << "outcome = research_faculty\n"
      << "covariates = gender_minority,racial_minority,log_new_links\n"
      << "interactions = gender_minority:log_new_links\n"
      << "fixed_effects = discipline,year\n"
      << "weights = weight\n"
      << "filter = novelty\n\n"
      << "[report]\n"
      << "key_terms = novelty:woman,uptake:woman,distal:woman,faculty:gender_minority\n"
      << "slope_tests = faculty:gender_minority:log_new_links\n";
}

}  // namespace linkmine::synth
