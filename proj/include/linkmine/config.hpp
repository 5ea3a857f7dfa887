#pragma once

// Plain-text INI configuration for a pipeline run. Relative paths resolve
// against the directory holding the config file.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/demog.hpp"
#include "linkmine/embed.hpp"
#include "linkmine/links.hpp"
#include "linkmine/stats.hpp"
#include "linkmine/textprep.hpp"

namespace linkmine::config {

namespace fs = std::filesystem;

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Scenario {
  int k = 20;
  double frex_weight = 0.5;
  bool operator==(const Scenario&) const = default;
};

/// Directory name of a scenario, e.g. "k20_w0.5".
inline std::string scenario_label(const Scenario& s) { return "k" + std::to_string(s.k) + "_w" + format_double(s.frex_weight); }

inline Scenario parse_scenario(std::string_view s) {
  const auto parts = split(s, ',');
  long long k = 0;
  double w = 0;
  if (parts.size() != 2 || !parse_int(trim(parts[0]), k) || !parse_double(trim(parts[1]), w))
    throw ConfigError("scenario must look like 'K,frex_weight', got '" + std::string(s) + "'");
  if (k < 2) throw ConfigError("scenario K must be >= 2");
  if (w < 0 || w > 1) throw ConfigError("scenario frex weight must lie in [0,1]");
  return {static_cast<int>(k), w};
}

struct KeyTerm {
  std::string model, term;
};

struct SlopeSpec {
  std::string model, group, continuous;
};

struct PipelineConfig {
  fs::path source;  // the config file itself

  // inputs
  fs::path corpus, gender_table, race_table;
  std::optional<fs::path> gender_secondary, race_secondary, population_cohorts, publications;
  fs::path out_dir;

  // run
  std::uint64_t seed = 1;
  Year year_min = 1900, year_max = 2100;
  int burn_in_years = 5;
  std::optional<Year> analysis_end;
  std::optional<int> uptake_horizon;
  std::optional<Year> grad_cutoff, lookahead_end;
  int publication_window = 5;
  bool invert_weights = false;
  int jobs = 1;  // scenarios fitted concurrently during a sweep

  // text preparation
  textprep::PhraseOptions phrases;

  // topics
  Scenario main;
  std::vector<int> sweep_k;
  std::vector<double> sweep_frex;
  int top_n = 40;
  int iterations = 20;
  int coherence_top_m = 10;
  std::size_t mcc_sample = 200;

  // links
  std::int64_t min_term_docs = 10;
  std::int64_t top_rank = links::kUnlimited;

  embed::SkipgramOptions skipgram;  // seed comes from the run seed

  demog::ThresholdConfig thresholds;

  std::vector<stats::ModelSpec> models;
  std::vector<KeyTerm> key_terms;
  std::vector<SlopeSpec> slope_tests;
  int ame_grid_points = 20;

  std::vector<Scenario> sweep() const {
    std::vector<Scenario> out;
    for (int k : sweep_k)
      for (double w : sweep_frex) out.push_back({k, w});
    return out;
  }

  /// Input files that do not exist.
  std::vector<std::string> missing_inputs() const {
    std::vector<std::string> out;
    auto need = [&](const fs::path& p) {
      if (!fs::exists(p)) out.push_back(p.string());
    };
    need(corpus);
    need(gender_table);
    need(race_table);
    for (const auto* p : {&gender_secondary, &race_secondary, &population_cohorts, &publications})
      if (*p) need(**p);
    return out;
  }
};

namespace detail {

using boost::property_tree::ptree;

inline std::vector<std::string> list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& p : split(s, ','))
    if (auto t = trim(p); !t.empty()) out.push_back(std::move(t));
  return out;
}

class Reader {
 public:
  explicit Reader(const ptree& root) : root_(root) {}

  std::optional<std::string> text(const std::string& section, const std::string& key) const {
    // section names such as "model.novelty" contain the default path separator
    auto sec = root_.get_child_optional(ptree::path_type(section, '/'));
    if (!sec) return std::nullopt;
    auto v = sec->get_optional<std::string>(ptree::path_type(key, '/'));
    if (!v) return std::nullopt;
    auto t = trim(*v);
    if (t.empty()) return std::nullopt;
    return t;
  }

  std::string require(const std::string& section, const std::string& key) const {
    auto v = text(section, key);
    if (!v) throw ConfigError("missing [" + section + "] " + key);
    return *v;
  }

  template <class T>
  T number(const std::string& section, const std::string& key, T fallback) const {
    auto v = text(section, key);
    if (!v) return fallback;
    return parse<T>(section, key, *v);
  }

  template <class T>
  std::optional<T> maybe(const std::string& section, const std::string& key) const {
    auto v = text(section, key);
    if (!v) return std::nullopt;
    return parse<T>(section, key, *v);
  }

  bool flag(const std::string& section, const std::string& key, bool fallback) const {
    auto v = text(section, key);
    if (!v) return fallback;
    const auto l = to_lower_ascii(*v);
    if (l == "true" || l == "yes" || l == "1") return true;
    if (l == "false" || l == "no" || l == "0") return false;
    throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + *v + "'");
  }

  template <class T>
  static T parse(const std::string& section, const std::string& key, const std::string& v) {
    if constexpr (std::is_floating_point_v<T>) {
      double d = 0;
      if (!parse_double(v, d)) throw ConfigError("[" + section + "] " + key + ": expected a number, got '" + v + "'");
      return static_cast<T>(d);
    } else {
      long long n = 0;
      if (!parse_int(v, n)) throw ConfigError("[" + section + "] " + key + ": expected an integer, got '" + v + "'");
      return static_cast<T>(n);
    }
  }

 private:
  const ptree& root_;
};

inline stats::ModelSpec read_model(const Reader& r, const std::string& section, std::string name) {
  stats::ModelSpec m;
  m.name = std::move(name);
  try {
    m.family = stats::parse_family(r.require(section, "family"));
  } catch (const InvalidInput& e) {
    throw ConfigError("[" + section + "] " + e.what());
  }
  m.outcome = r.require(section, "outcome");
  m.covariates = list(r.text(section, "covariates").value_or(""));
  for (const auto& i : list(r.text(section, "interactions").value_or(""))) m.interactions.push_back(stats::parse_interaction(i));
  m.fixed_effects = list(r.text(section, "fixed_effects").value_or(""));
  m.offset = r.text(section, "offset");
  m.weights = r.text(section, "weights");
  m.filters = list(r.text(section, "filter").value_or(""));
  if (auto se = r.text(section, "se")) {
    if (*se == "classical")
      m.se = stats::SeType::Classical;
    else if (*se != "robust")
      throw ConfigError("[" + section + "] se must be robust or classical");
  }
  for (const auto& ref : list(r.text(section, "reference_levels").value_or(""))) {
    const auto kv = split(ref, '=');
    if (kv.size() != 2) throw ConfigError("[" + section + "] reference_levels entries look like factor=level");
    m.reference_levels[trim(kv[0])] = trim(kv[1]);
  }
  return m;
}

}  // namespace detail

inline PipelineConfig parse(std::istream& in, const fs::path& source) {
  detail::ptree root;
  try {
    boost::property_tree::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  const detail::Reader r(root);
  PipelineConfig c;
  c.source = source;
  const fs::path base = source.has_parent_path() ? source.parent_path() : fs::path(".");
  auto path = [&](const std::string& key) { return base / r.require("paths", key); };
  auto maybe_path = [&](const std::string& key) -> std::optional<fs::path> {
    if (auto v = r.text("paths", key)) return base / *v;
    return std::nullopt;
  };
  c.corpus = path("corpus");
  c.gender_table = path("gender_table");
  c.race_table = path("race_table");
  c.gender_secondary = maybe_path("gender_secondary");
  c.race_secondary = maybe_path("race_secondary");
  c.population_cohorts = maybe_path("population_cohorts");
  c.publications = maybe_path("publications");
  c.out_dir = base / r.text("paths", "out_dir").value_or("run");

  c.seed = r.number<std::uint64_t>("run", "seed", 1);
  c.year_min = r.number<Year>("run", "year_min", 1900);
  c.year_max = r.number<Year>("run", "year_max", 2100);
  c.burn_in_years = r.number<int>("run", "burn_in_years", 5);
  c.analysis_end = r.maybe<Year>("run", "analysis_end");
  c.uptake_horizon = r.maybe<int>("run", "uptake_horizon");
  c.grad_cutoff = r.maybe<Year>("run", "grad_cutoff");
  c.lookahead_end = r.maybe<Year>("run", "lookahead_end");
  c.publication_window = r.number<int>("run", "publication_window", 5);
  c.invert_weights = r.flag("run", "invert_weights", false);
  c.jobs = r.number<int>("run", "jobs", 1);
  if (c.burn_in_years < 0) throw ConfigError("[run] burn_in_years must be >= 0");
  if (c.jobs < 1) throw ConfigError("[run] jobs must be >= 1");

  c.phrases.min_count = r.number<std::int64_t>("textprep", "phrase_min_count", 10);
  c.phrases.sig_threshold = r.number<double>("textprep", "phrase_threshold", 5.0);
  c.phrases.rounds = r.number<int>("textprep", "phrase_rounds", 2);

  c.main = {r.number<int>("topics", "k", 20), r.number<double>("topics", "frex_weight", 0.5)};
  for (const auto& s : detail::list(r.text("topics", "sweep_k").value_or(std::to_string(c.main.k))))
    c.sweep_k.push_back(detail::Reader::parse<int>("topics", "sweep_k", s));
  for (const auto& s : detail::list(r.text("topics", "sweep_frex_weight").value_or(format_double(c.main.frex_weight))))
    c.sweep_frex.push_back(detail::Reader::parse<double>("topics", "sweep_frex_weight", s));
  if (c.sweep_k.empty() || c.sweep_frex.empty()) throw ConfigError("scenario grid is empty");
  for (int k : c.sweep_k)
    if (k < 2) throw ConfigError("[topics] every K must be >= 2");
  for (double w : c.sweep_frex)
    if (w < 0 || w > 1) throw ConfigError("[topics] frex weights must lie in [0,1]");
  c.top_n = r.number<int>("topics", "top_n", 40);
  c.iterations = r.number<int>("topics", "iterations", 20);
  c.coherence_top_m = r.number<int>("topics", "coherence_top_m", 10);
  c.mcc_sample = r.number<std::size_t>("topics", "mcc_sample", 200);

  c.min_term_docs = r.number<std::int64_t>("links", "min_term_docs", 10);
  if (auto t = r.text("links", "top_rank"); t && *t != "unlimited")
    c.top_rank = detail::Reader::parse<std::int64_t>("links", "top_rank", *t);

  auto& e = c.skipgram;
  e.dims = r.number<int>("embed", "dims", e.dims);
  e.window = r.number<int>("embed", "window", e.window);
  e.negatives = r.number<int>("embed", "negatives", e.negatives);
  e.epochs = r.number<int>("embed", "epochs", e.epochs);
  e.learning_rate = r.number<double>("embed", "learning_rate", e.learning_rate);
  e.threads = r.number<int>("embed", "threads", 1);

  auto& t = c.thresholds;
  t.female = r.number<double>("demog", "female_threshold", t.female);
  t.male = r.number<double>("demog", "male_threshold", t.male);
  t.secondary_gender = r.number<double>("demog", "secondary_gender_threshold", t.secondary_gender);
  const char* race_keys[] = {"white_threshold", "asian_threshold", "hispanic_threshold", "other_threshold"};
  for (int g = 0; g < demog::kRaceGroups; ++g) t.race[g] = r.number<double>("demog", race_keys[g], t.race[g]);
  try {
    t.validate();
  } catch (const InvalidInput& ex) {
    throw ConfigError(std::string("[demog] ") + ex.what());
  }

  for (const auto& [section, _] : root)
    if (section.rfind("model.", 0) == 0) c.models.push_back(detail::read_model(r, section, section.substr(6)));
  for (const auto& kt : detail::list(r.text("report", "key_terms").value_or(""))) {
    const auto p = split(kt, ':');
    if (p.size() != 2) throw ConfigError("[report] key_terms entries look like model:term");
    c.key_terms.push_back({trim(p[0]), trim(p[1])});
  }
  for (const auto& st : detail::list(r.text("report", "slope_tests").value_or(""))) {
    const auto p = split(st, ':');
    if (p.size() != 3) throw ConfigError("[report] slope_tests entries look like model:group:continuous");
    c.slope_tests.push_back({trim(p[0]), trim(p[1]), trim(p[2])});
  }
  c.ame_grid_points = r.number<int>("report", "ame_grid_points", 20);
  return c;
}

inline PipelineConfig load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  return parse(in, file);
}

}  // namespace linkmine::config
