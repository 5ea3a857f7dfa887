// Command-line driver: one subcommand per pipeline stage, plus full runs,
// scenario sweeps, reports and synthetic fixture generation.

#include <CLI11.hpp>

#include <iostream>

#include "linkmine/config.hpp"
#include "linkmine/pipeline.hpp"
#include "linkmine/synth.hpp"

namespace {

using namespace linkmine;
namespace lp = linkmine::pipeline;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> scenario;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "pipeline config (INI)")->required();
    app->add_option("--seed", seed, "override the run seed");
    app->add_option("--out-dir", out_dir, "override the run directory");
    app->add_option("--scenario", scenario, "topic scenario as K,frex_weight");
  }

  config::PipelineConfig load() const {
    auto c = config::load(config);
    if (seed) c.seed = *seed;
    if (out_dir) c.out_dir = *out_dir;
    if (scenario) c.main = config::parse_scenario(*scenario);
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linkmine: concept-link novelty and uptake from dissertation abstracts"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress lines");

  Common common;
  std::string current;
  std::function<void(const config::PipelineConfig&)> action;
  auto stage = [&](const std::string& name, const std::string& help,
                   std::function<void(const config::PipelineConfig&)> f) {
    auto* sub = app.add_subcommand(name, help);
    common.attach(sub);
    sub->callback([&, name, f] {
      current = name;
      action = f;
    });
  };

  auto main_layout = [](const config::PipelineConfig& c) { return lp::Layout::main(c); };
  stage("ingest", "validate and store the corpus", [](const auto& c) { lp::stage_ingest(c); });
  stage("prep", "tokenize, stem and mine phrases", [](const auto& c) { lp::stage_prep(c); });
  stage("topics", "fit the topic model", [&](const auto& c) { lp::stage_topics(c, c.main, main_layout(c)); });
  stage("concepts", "select the concept vocabulary", [&](const auto& c) { lp::stage_concepts(c, c.main, main_layout(c)); });
  stage("links", "build the link ledger", [&](const auto& c) { lp::stage_links(c, main_layout(c)); });
  stage("embed", "train concept embeddings", [&](const auto& c) { lp::stage_embed(c, main_layout(c)); });
  stage("novelty", "per-document novelty measures", [&](const auto& c) { lp::stage_novelty(c, main_layout(c)); });
  stage("demog", "name-based labels, representation, careers, weights", [](const auto& c) { lp::stage_demog(c); });
  stage("regress", "fit the configured models", [&](const auto& c) { lp::stage_regress(c, main_layout(c)); });
  stage("report", "summary tables from a completed run", [&](const auto& c) { lp::export_report(c, main_layout(c)); });
  stage("sweep", "fit every scenario of the grid", [](const auto& c) { lp::run_sweep(c); });
  stage("run", "every stage, report and manifest", [](const auto& c) { lp::run_pipeline(c); });

  synth::SynthOptions so;
  std::string synth_out;
  auto* syn = app.add_subcommand("synth", "write a synthetic fixture with a planted subgroup effect");
  syn->add_option("-o,--out", synth_out, "output directory")->required();
  syn->add_option("--seed", so.seed, "generator seed");
  syn->add_option("--docs-per-year", so.docs_per_year, "documents per year");
  syn->add_option("--years", so.years, "number of years");
  syn->callback([&] { current = "synth"; });

  CLI11_PARSE(app, argc, argv);
  if (!quiet) lp::progress() = &std::cerr;

  try {
    if (current == "synth") {
      synth::write_fixture(synth_out, synth::generate(so), so);
      return 0;
    }
    const auto cfg = common.load();
    if (current != "run") lp::run_stage(current, [&] { action(cfg); return 0; });
    else action(cfg);
    return 0;
  } catch (const config::ConfigError& e) {
    std::cerr << "[config] error: " << e.what() << '\n';
    return 2;
  } catch (const lp::StageError& e) {
    std::cerr << "[" << e.stage() << "] error: " << e.cause() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[" << (current.empty() ? "cli" : current) << "] error: " << e.what() << '\n';
    return 1;
  }
}
