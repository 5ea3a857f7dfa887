#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "linkmine/config.hpp"
#include "linkmine/pipeline.hpp"
#include "linkmine/synth.hpp"

using namespace linkmine;
namespace fs = std::filesystem;
namespace lp = linkmine::pipeline;

namespace {

synth::SynthOptions small_options() {
  synth::SynthOptions o;
  o.years = 12;
  o.docs_per_year = 150;
  o.topics = 8;
  o.words_per_topic = 20;
  o.institutions = 6;
  o.disciplines = 4;
  return o;
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("linkmine_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// A fixture directory with a completed main run, shared across tests.
const config::PipelineConfig& completed_run() {
  static const config::PipelineConfig cfg = [] {
    const auto dir = fresh_dir("pipeline_run");
    const auto opt = small_options();
    synth::write_fixture(dir, synth::generate(opt), opt);
    auto c = config::load(dir / "fixture.ini");
    c.sweep_k = {6, 8};
    c.sweep_frex = {0.5};
    lp::run_pipeline(c);
    lp::run_sweep(c);
    return c;
  }();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double num(const std::string& s) {
  double v = kNaN;
  parse_double(s, v);
  return v;
}

}  // namespace

// ---- synthetic generator -------------------------------------------------------

TEST(Synth, DeterministicAndStemStable) {
  const auto o = small_options();
  const auto a = synth::generate(o), b = synth::generate(o);
  ASSERT_EQ(a.docs.size(), 12u * 150u);
  EXPECT_EQ(a.docs, b.docs);
  auto o2 = o;
  o2.seed = 99;
  EXPECT_NE(synth::generate(o2).docs, a.docs);
  for (const auto& words : a.topic_words)
    for (const auto& w : words) {
      EXPECT_EQ(snowball::stem(w), w);
      EXPECT_FALSE(is_stop_word(w));
      EXPECT_EQ(textprep::normalize_tokenize(w), std::vector<std::string>{w});
    }
}

TEST(Synth, PlantedBorrowingRate) {
  // count words from a foreign topic per document, by group
  auto o = small_options();
  o.reuse_rate = 0;
  const auto c = synth::generate(o);
  std::map<std::string, int> topic_of;
  for (std::size_t t = 0; t < c.topic_words.size(); ++t)
    for (const auto& w : c.topic_words[t]) topic_of[w] = static_cast<int>(t);
  double foreign[2] = {0, 0}, docs[2] = {0, 0};
  for (std::size_t i = 0; i < c.docs.size(); ++i) {
    std::map<int, int> counts;
    const auto toks = textprep::normalize_tokenize(c.docs[i].abstract);
    for (const auto& t : toks)
      if (auto it = topic_of.find(t); it != topic_of.end()) ++counts[it->second];
    int home = -1, best = -1;
    for (const auto& [t, n] : counts)
      if (n > best) best = n, home = t;
    int f = 0;
    for (const auto& t : toks)
      if (auto it = topic_of.find(t); it != topic_of.end() && it->second != home) ++f;
    foreign[c.authors[i].woman] += f;
    docs[c.authors[i].woman] += 1;
  }
  const double ratio = (foreign[1] / docs[1]) / (foreign[0] / docs[0]);
  EXPECT_NEAR(ratio, o.foreign_multiplier, 0.25);
}

// ---- configuration ------------------------------------------------------------

TEST(Config, MissingCorpusIsAConfigErrorWithNoPartialRun) {
  const auto dir = fresh_dir("config_missing");
  const auto opt = small_options();
  synth::write_fixture(dir, synth::generate(opt), opt);
  fs::remove(dir / "corpus.jsonl");
  const auto c = config::load(dir / "fixture.ini");
  EXPECT_THROW(lp::run_pipeline(c), config::ConfigError);
  EXPECT_FALSE(fs::exists(c.out_dir));
}

TEST(Config, ParsesSectionsAndRejectsBadValues) {
  std::istringstream good(R"([paths]
corpus = c.jsonl
gender_table = g.csv
race_table = r.csv
[run]
seed = 5
burn_in_years = 3
[topics]
k = 12
sweep_k = 10, 12
sweep_frex_weight = 0.3
[links]
top_rank = 1000
[model.m1]
family = logistic
outcome = y
covariates = a, b
interactions = a:b
fixed_effects = year
)");
  const auto c = config::parse(good, "/data/x.ini");
  EXPECT_EQ(c.corpus, fs::path("/data/c.jsonl"));
  EXPECT_EQ(c.out_dir, fs::path("/data/run"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.burn_in_years, 3);
  EXPECT_EQ(c.top_rank, 1000);
  EXPECT_EQ(c.sweep().size(), 2u);
  ASSERT_EQ(c.models.size(), 1u);
  EXPECT_EQ(c.models[0].name, "m1");
  EXPECT_EQ(c.models[0].covariates, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(c.models[0].interactions.at(0), (std::pair<std::string, std::string>{"a", "b"}));

  auto bad = [](const std::string& extra) {
    std::istringstream in("[paths]\ncorpus=c\ngender_table=g\nrace_table=r\n" + extra);
    return config::parse(in, "x.ini");
  };
  EXPECT_THROW(bad("[run]\nseed = many\n"), config::ConfigError);
  EXPECT_THROW(bad("[topics]\nsweep_frex_weight = 1.5\n"), config::ConfigError);
  EXPECT_THROW(bad("[topics]\nsweep_k = ,\n"), config::ConfigError);
  EXPECT_THROW(bad("[model.x]\noutcome = y\n"), config::ConfigError);
  EXPECT_THROW(bad("[demog]\nfemale_threshold = 2\n"), config::ConfigError);
  std::istringstream no_corpus("[paths]\ngender_table=g\nrace_table=r\n");
  EXPECT_THROW(config::parse(no_corpus, "x.ini"), config::ConfigError);
  EXPECT_THROW(config::parse_scenario("20"), config::ConfigError);
  EXPECT_EQ(config::parse_scenario("18, 0.25"), (config::Scenario{18, 0.25}));
}

TEST(Stage, FailuresCarryTheStageName) {
  try {
    lp::run_stage("links", []() -> int { throw InvalidInput("boom"); });
    FAIL();
  } catch (const lp::StageError& e) {
    EXPECT_EQ(e.stage(), "links");
    EXPECT_EQ(e.cause(), "boom");
  }
}

TEST(Stage, LaterStageWithoutInputsNamesTheMissingArtifact) {
  const auto dir = fresh_dir("stage_missing");
  const auto opt = small_options();
  synth::write_fixture(dir, synth::generate(opt), opt);
  const auto c = config::load(dir / "fixture.ini");
  try {
    lp::run_stage("prep", [&] { lp::stage_prep(c); return 0; });
    FAIL();
  } catch (const lp::StageError& e) {
    EXPECT_EQ(e.stage(), "prep");
    EXPECT_NE(e.cause().find("corpus.jsonl"), std::string::npos);
  }
}

// ---- full run -------------------------------------------------------------------

TEST(Run, EmitsEveryArtifactAndAConsistentManifest) {
  const auto& c = completed_run();
  for (const char* f : {"corpus.jsonl", "rejections.csv", "streams.txt", "vocabulary.csv", "phrases.csv", "beta.csv",
                        "theta.csv", "topic_model.json", "topic_validation.csv", "topic_mcc.csv", "concepts.txt",
                        "ledger.csv", "new_links.csv", "embeddings.txt", "novelty.csv", "labels.csv",
                        "representation.csv", "careers.csv", "weights.csv", "analysis.csv", "coefficients.csv",
                        "fits.csv", "ame.csv", "ame_curves.csv", "irr.csv", "slope_tests.csv", "descriptives.csv",
                        "over_time.csv", "uptake_share.csv", "key_effects.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(c.out_dir / f)) << f;
  std::ifstream mf(c.out_dir / "manifest.json");
  const auto j = nlohmann::json::parse(mf);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), c.seed);
  for (const auto& [rel, hash] : j.at("outputs").items()) {
    if (rel.rfind("sweep", 0) == 0) continue;  // written after the manifest
    EXPECT_EQ(hash.get<std::string>(), lp::detail::sha256_file(c.out_dir / rel)) << rel;
  }
}

TEST(Run, DescriptivesMatchRecomputationFromNoveltyExport) {
  const auto& c = completed_run();
  const auto nov = csv::read_file((c.out_dir / "novelty.csv").string());
  const auto desc = csv::read_file((c.out_dir / "descriptives.csv").string());
  ASSERT_EQ(desc.rows.size(), 4u);
  for (const auto& row : desc.rows) {
    std::size_t col = 0;
    while (nov.header[col] != row[0]) ++col;
    std::vector<double> v;
    for (const auto& r : nov.rows)
      if (r[col] != "NA") v.push_back(num(r[col]));
    // two-pass mean and SD, middle-element median
    double mean = 0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    std::sort(v.begin(), v.end());
    const double median = v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2;
    EXPECT_EQ(std::stoul(row[1]), v.size()) << row[0];
    EXPECT_NEAR(num(row[2]), mean, 1e-9 * std::max(1.0, std::abs(mean))) << row[0];
    EXPECT_DOUBLE_EQ(num(row[3]), median) << row[0];
    EXPECT_NEAR(num(row[4]), std::sqrt(ss / static_cast<double>(v.size() - 1)), 1e-9) << row[0];
  }
}

TEST(Run, NeverReusedShareMatchesLedgerRecount) {
  const auto& c = completed_run();
  const auto ld = lp::compute_links(c, lp::Layout::main(c));
  std::int64_t credited = 0, unused = 0;
  for (const auto& e : ld.result.ledger.entries) {
    if (e.introducers.empty()) continue;
    ++credited;
    // count later-year uses straight from the yearly tallies
    std::int64_t later = 0;
    for (const auto& [y, n] : e.yearly)
      if (y > e.first_year) later += n;
    unused += later == 0;
  }
  const auto share = csv::read_file((c.out_dir / "uptake_share.csv").string());
  EXPECT_EQ(std::stoll(share.rows[0][0]), credited);
  EXPECT_EQ(std::stoll(share.rows[0][1]), unused);
  EXPECT_DOUBLE_EQ(num(share.rows[0][2]), static_cast<double>(unused) / static_cast<double>(credited));
}

TEST(Run, OverTimeMeansMatchNoveltyExport) {
  const auto& c = completed_run();
  const auto nov = csv::read_file((c.out_dir / "novelty.csv").string());
  std::map<std::string, std::pair<double, int>> by_year;
  for (const auto& r : nov.rows) {
    by_year[r[1]].first += num(r[3]);
    by_year[r[1]].second += 1;
  }
  const auto ot = csv::read_file((c.out_dir / "over_time.csv").string());
  ASSERT_EQ(ot.rows.size(), by_year.size());
  for (const auto& r : ot.rows) {
    const auto& [sum, n] = by_year.at(r[0]);
    EXPECT_EQ(std::stoi(r[1]), n);
    EXPECT_NEAR(num(r[2]), sum / n, 1e-9);
  }
}

TEST(Run, AnalysisTableJoinsLabelsAndWeights) {
  const auto& c = completed_run();
  const auto a = stats::read_table_file((c.out_dir / "analysis.csv").string());
  const auto nov = csv::read_file((c.out_dir / "novelty.csv").string());
  EXPECT_EQ(a.rows(), nov.rows.size());
  const auto woman = a.numeric("woman"), links = a.numeric("n_new_links"), logl = a.numeric("log_new_links");
  const auto& gender = a.text("gender");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    EXPECT_EQ(std::isnan(woman[i]), gender[i] == "unknown");
    if (gender[i] == "woman") EXPECT_EQ(woman[i], 1.0);
    EXPECT_DOUBLE_EQ(logl[i], std::log1p(links[i]));
  }
  for (double w : a.numeric("weight")) EXPECT_GT(w, 0.0);
}

TEST(Run, RepeatedRunIsByteIdentical) {
  const auto& c = completed_run();
  auto again = c;
  again.out_dir = c.out_dir.parent_path() / "pipeline_run_again";
  fs::remove_all(again.out_dir);
  lp::run_pipeline(again);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(again.out_dir)) {
    if (!e.is_regular_file()) continue;
    EXPECT_EQ(slurp(e.path()), slurp(c.out_dir / e.path().filename())) << e.path().filename();
    ++compared;
  }
  EXPECT_GT(compared, 25u);
}

TEST(Sweep, GridCellsMatchPerScenarioRefits) {
  const auto& c = completed_run();
  const auto sweep = csv::read_file((c.out_dir / "sweep.csv").string());
  ASSERT_EQ(sweep.rows.size(), 2 * c.key_terms.size());
  for (const auto& row : sweep.rows) {
    const config::Scenario sc{std::stoi(row[0]), num(row[1])};
    const auto l = lp::Layout::swept(c, sc);
    const auto data = stats::read_table_file((l.scenario / "analysis.csv").string());
    const auto& spec = *std::find_if(c.models.begin(), c.models.end(), [&](const auto& m) { return m.name == row[2]; });
    const auto fit = stats::fit_model(data, spec);
    const auto w = stats::wald_test(fit, row[3]);
    EXPECT_NEAR(num(row[4]), w.estimate, 1e-12 * std::max(1.0, std::abs(w.estimate)));
    EXPECT_NEAR(num(row[6]), w.p_value, 1e-12);
    EXPECT_EQ(row[7], w.estimate > 0 ? "+" : "-");
    EXPECT_EQ(row[8], lp::stars(w.p_value));
  }
}

TEST(Report, RefusesIncompleteAndEmptyRuns) {
  const auto& c = completed_run();
  const auto dir = fresh_dir("report_incomplete");
  for (const auto& f : lp::report_inputs()) fs::copy_file(c.out_dir / f, dir / f);
  fs::remove(dir / "ledger.csv");
  fs::remove(dir / "irr.csv");
  const lp::Layout l{dir, dir};
  try {
    lp::export_report(c, l);
    FAIL();
  } catch (const InvalidInput& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("ledger.csv"), std::string::npos);
    EXPECT_NE(msg.find("irr.csv"), std::string::npos);
  }
  fs::copy_file(c.out_dir / "ledger.csv", dir / "ledger.csv");
  fs::copy_file(c.out_dir / "irr.csv", dir / "irr.csv");
  {
    std::ofstream os(dir / "novelty.csv", std::ios::trunc);
    os << "doc_id,year,n_concepts,n_new_links,total_uptake,uptake_per_new_link,distal_novelty,distal_skipped\n";
  }
  EXPECT_THROW(lp::export_report(c, l), InvalidInput);
}

TEST(Report, SummaryHelperHandlesMissingValues) {
  const auto s = lp::summarize("x", {3, kNaN, 1, 2, 10});
  EXPECT_EQ(s.n, 4u);
  EXPECT_DOUBLE_EQ(s.mean, 4.0);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.sd, std::sqrt((1 + 9 + 4 + 36) / 3.0));
  EXPECT_EQ(lp::summarize("y", {}).n, 0u);
  EXPECT_TRUE(std::isnan(lp::summarize("y", {}).mean));
}
