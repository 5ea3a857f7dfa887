#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "linkmine/stats.hpp"

using namespace linkmine;
using namespace linkmine::stats;

namespace {

DataTable table(std::initializer_list<std::pair<std::string, std::vector<double>>> numeric,
                std::initializer_list<std::pair<std::string, std::vector<std::string>>> text = {}) {
  DataTable t;
  for (const auto& [n, v] : numeric) t.add_numeric(n, v);
  for (const auto& [n, v] : text) t.add_text(n, v);
  return t;
}

ModelSpec spec(Family f, std::string y, std::vector<std::string> x) {
  ModelSpec s;
  s.name = "m";
  s.family = f;
  s.outcome = std::move(y);
  s.covariates = std::move(x);
  return s;
}

struct NbSample {
  DataTable data;
  double b0, b1, alpha;
};

NbSample nb_sample(std::size_t n, double b0, double b1, double alpha, std::uint64_t seed, bool with_offset) {
  Rng rng(seed);
  std::vector<double> x(n), t(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    t[i] = with_offset ? 1.0 + static_cast<double>(rng.below(5)) : 1.0;
    const double mu = std::exp(b0 + b1 * x[i] + std::log(t[i]));
    y[i] = static_cast<double>(alpha > 0 ? rng.negative_binomial(mu, alpha) : rng.poisson(mu));
  }
  return {table({{"y", y}, {"x", x}, {"t", t}}), b0, b1, alpha};
}

DataTable logistic_sample(std::size_t n, double b0, double b1, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    y[i] = rng.bernoulli(inv_logit(b0 + b1 * x[i])) ? 1 : 0;
  }
  return table({{"y", y}, {"x", x}});
}

bool non_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[i - 1]) return false;
  return true;
}

}  // namespace

// ---- design ------------------------------------------------------------------

TEST(Design, TwoLevelFactorGivesOneDummy) {
  auto t = table({{"y", {1, 2, 3, 4}}}, {{"inst", {"b", "a", "b", "a"}}});
  auto s = spec(Family::Ols, "y", {});
  s.fixed_effects = {"inst"};
  auto d = build_design(t, s);
  ASSERT_EQ(d.columns, (std::vector<std::string>{"(Intercept)", "inst[b]"}));
  Eigen::MatrixXd expected(4, 2);
  expected << 1, 1, 1, 0, 1, 1, 1, 0;
  EXPECT_EQ(d.X, expected);
}

TEST(Design, MatchesHandConstruction) {
  auto t = table({{"y", {1, 0, 1, 1, 0, 1}}, {"x", {0.5, -1, 2, 0, 1, 3}}, {"g", {1, 0, 1, 0, 0, 1}},
                  {"w", {1, 2, 1, 2, 1, 5}}},
                 {{"disc", {"bio", "chem", "chem", "bio", "phys", "phys"}}});
  auto s = spec(Family::Ols, "y", {"x", "g"});
  s.interactions = {{"g", "x"}};
  s.fixed_effects = {"disc"};
  s.weights = "w";
  auto d = build_design(t, s);
  ASSERT_EQ(d.columns, (std::vector<std::string>{"(Intercept)", "x", "g", "g:x", "disc[chem]", "disc[phys]"}));
  Eigen::MatrixXd expected(6, 6);
  expected << 1, 0.5, 1, 0.5, 0, 0,  //
      1, -1, 0, 0, 1, 0,             //
      1, 2, 1, 2, 1, 0,              //
      1, 0, 0, 0, 0, 0,              //
      1, 1, 0, 0, 0, 1,              //
      1, 3, 1, 3, 0, 1;
  EXPECT_EQ(d.X, expected);
  EXPECT_NEAR(d.weights.mean(), 1.0, 1e-15);
  EXPECT_NEAR(d.weights(5) / d.weights(0), 5.0, 1e-12);
}

TEST(Design, LogisticDropsConstantCells) {
  auto t = table({{"y", {1, 1, 1, 0, 1, 0, 1, 0}}, {"x", {1, 2, 3, 4, 5, 6, 7, 8}}},
                 {{"inst", {"u1", "u1", "u1", "u2", "u2", "u3", "u3", "u2"}}});
  auto s = spec(Family::Logistic, "y", {"x"});
  s.fixed_effects = {"inst"};
  auto d = build_design(t, s);
  ASSERT_EQ(d.dropped.size(), 1u);
  EXPECT_EQ(d.dropped[0].level, "u1");
  EXPECT_EQ(d.dropped[0].rows, 3u);
  EXPECT_EQ(d.n(), 5u);
  EXPECT_EQ(d.columns, (std::vector<std::string>{"(Intercept)", "x", "inst[u3]"}));
}

TEST(Design, FiltersAndErrors) {
  auto t = table({{"y", {1, 2, 0, 4, 5}}, {"x", {1, kNaN, 3, 4, 7}}, {"n_new_links", {1, 1, 0, 2, 3}},
                  {"total_uptake", {1, 1, 1, 0, 9}}});
  auto s = spec(Family::Ols, "y", {"x"});
  EXPECT_EQ(build_design(t, s).n(), 4u);  // missing x dropped
  s.filters = {"uptake"};
  EXPECT_EQ(build_design(t, s).n(), 2u);
  s.filters = {"positive:n_new_links"};
  EXPECT_EQ(build_design(t, s).n(), 3u);
  s.filters = {"bogus"};
  EXPECT_THROW(build_design(t, s), InvalidInput);

  auto off = spec(Family::Ols, "y", {"x"});
  off.offset = "n_new_links";
  EXPECT_THROW(build_design(t, off), InvalidInput);

  auto col = table({{"y", {1, 2, 3, 5}}, {"a", {1, 2, 3, 4}}, {"b", {2, 4, 6, 8}}});
  try {
    build_design(col, spec(Family::Ols, "y", {"a", "b"}));
    FAIL() << "expected collinearity error";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_THROW(build_design(t, spec(Family::Logistic, "y", {"x"})), InvalidInput);
}

TEST(Design, ReferenceLevelChangesCoefficientsNotFit) {
  Rng rng(1);
  std::vector<double> y, x;
  std::vector<std::string> g;
  for (int i = 0; i < 300; ++i) {
    const int lvl = static_cast<int>(rng.below(4));
    x.push_back(rng.normal());
    g.push_back("L" + std::to_string(lvl));
    y.push_back(static_cast<double>(rng.poisson(std::exp(0.2 + 0.3 * x.back() + 0.1 * lvl))));
  }
  DataTable t;
  t.add_numeric("y", y);
  t.add_numeric("x", x);
  t.add_text("g", g);
  for (Family fam : {Family::NegBin, Family::Ols}) {
    auto s = spec(fam, "y", {"x"});
    s.fixed_effects = {"g"};
    auto d1 = build_design(t, s);
    s.reference_levels["g"] = "L2";
    auto d2 = build_design(t, s);
    auto f1 = fit(d1), f2 = fit(d2);
    Eigen::VectorXd e1 = d1.X * f1.beta, e2 = d2.X * f2.beta;
    const double diff = (e1 - e2).cwiseAbs().maxCoeff();
    EXPECT_LT(diff, 1e-10);
    EXPECT_GT(std::abs(f1.coef("(Intercept)") - f2.coef("(Intercept)")), 1e-3);
  }
}

// ---- negative binomial -------------------------------------------------------

TEST(NegBin, InterceptOnlyRecoversMean) {
  auto s = nb_sample(2000, 1.1, 0.0, 0.5, 2, false);
  auto y = s.data.numeric("y");
  double m = 0;
  for (double v : y) m += v / static_cast<double>(y.size());
  auto f = fit_model(s.data, spec(Family::NegBin, "y", {}));
  ASSERT_TRUE(f.converged);
  EXPECT_NEAR(std::exp(f.coef("(Intercept)")), m, 1e-6);
  EXPECT_GT(f.alpha, 0);
}

TEST(NegBin, RecoversParametersWithOffset) {
  auto s = nb_sample(20000, 0.5, 0.8, 0.7, 3, true);
  auto ms = spec(Family::NegBin, "y", {"x"});
  ms.offset = "t";
  auto f = fit_model(s.data, ms);
  ASSERT_TRUE(f.converged);
  EXPECT_LT(std::abs(f.coef("(Intercept)") - 0.5), 3 * f.std_error("(Intercept)"));
  EXPECT_LT(std::abs(f.coef("x") - 0.8), 3 * f.std_error("x"));
  EXPECT_LT(std::abs(f.alpha - 0.7) / 0.7, 0.1);
  EXPECT_TRUE(non_decreasing(f.loglik_trace));
  EXPECT_LT(f.max_abs_score, 1e-6 * std::abs(f.loglik));
}

TEST(NegBin, OffsetEqualsConstrainedCovariate) {
  auto s = nb_sample(3000, 0.2, 0.5, 0.4, 4, true);
  std::vector<double> logt;
  for (double v : s.data.numeric("t")) logt.push_back(std::log(v));
  s.data.add_numeric("log_t", logt);
  auto with_offset = spec(Family::NegBin, "y", {"x"});
  with_offset.offset = "t";
  auto a = fit_model(s.data, with_offset);
  auto d = build_design(s.data, spec(Family::NegBin, "y", {"x", "log_t"}));
  FitOptions opt;
  opt.fixed["log_t"] = 1.0;
  auto b = fit(d, opt);
  EXPECT_NEAR(a.loglik, b.loglik, 1e-9);
  EXPECT_NEAR(a.coef("x"), b.coef("x"), 1e-9);
  EXPECT_NEAR(a.coef("(Intercept)"), b.coef("(Intercept)"), 1e-9);
  EXPECT_DOUBLE_EQ(b.coef("log_t"), 1.0);
  EXPECT_DOUBLE_EQ(b.std_error("log_t"), 0.0);
}

TEST(NegBin, PoissonLimit) {
  auto s = nb_sample(20000, 0.3, 0.4, 0.0, 5, false);
  auto f = fit_model(s.data, spec(Family::NegBin, "y", {"x"}));
  EXPECT_TRUE(f.converged);
  EXPECT_LT(f.alpha, 0.05);
  EXPECT_NEAR(f.coef("x"), 0.4, 4 * f.std_error("x"));
}

TEST(NegBin, WeightScaleDoesNotMatter) {
  auto s = nb_sample(1000, 0.5, 0.3, 0.5, 6, false);
  Rng rng(1);
  std::vector<double> w, w3;
  for (std::size_t i = 0; i < 1000; ++i) {
    w.push_back(0.5 + rng.uniform());
    w3.push_back(3 * w.back());
  }
  s.data.add_numeric("w", w);
  s.data.add_numeric("w3", w3);
  auto a = spec(Family::NegBin, "y", {"x"});
  a.weights = "w";
  auto b = a;
  b.weights = "w3";
  auto fa = fit_model(s.data, a), fb = fit_model(s.data, b);
  EXPECT_NEAR(fa.coef("x"), fb.coef("x"), 1e-10);
  EXPECT_NEAR(fa.std_error("x"), fb.std_error("x"), 1e-10);
  EXPECT_THROW(fit_model(table({{"y", {0, 0, 0}}}), spec(Family::NegBin, "y", {})), InvalidInput);
}

// ---- logistic ----------------------------------------------------------------

TEST(Logistic, NullEffect) {
  auto t = logistic_sample(4000, 0.0, 0.0, 7);
  auto f = fit_model(t, spec(Family::Logistic, "y", {"x"}));
  ASSERT_TRUE(f.converged);
  EXPECT_LT(std::abs(f.coef("x")), 3 * f.std_error("x"));
}

TEST(Logistic, RecoveryAndScoreOrthogonality) {
  auto t = logistic_sample(20000, -1.0, 1.2, 8);
  auto f = fit_model(t, spec(Family::Logistic, "y", {"x"}));
  ASSERT_TRUE(f.converged);
  EXPECT_LT(std::abs(f.coef("x") - 1.2), 3 * f.std_error("x"));
  EXPECT_LT(std::abs(f.coef("(Intercept)") + 1.0), 3 * f.std_error("(Intercept)"));
  EXPECT_LT(f.max_abs_score, 1e-6);
  EXPECT_TRUE(non_decreasing(f.loglik_trace));
}

TEST(Logistic, DoublingWeightsChangesNothing) {
  auto t = logistic_sample(2000, 0.3, 0.7, 9);
  Rng rng(2);
  std::vector<double> w, w2;
  for (std::size_t i = 0; i < 2000; ++i) {
    w.push_back(0.2 + rng.uniform());
    w2.push_back(2 * w.back());
  }
  t.add_numeric("w", w);
  t.add_numeric("w2", w2);
  auto a = spec(Family::Logistic, "y", {"x"});
  a.weights = "w";
  auto b = a;
  b.weights = "w2";
  for (SeType se : {SeType::Robust, SeType::Classical}) {
    a.se = b.se = se;
    auto fa = fit_model(t, a), fb = fit_model(t, b);
    EXPECT_NEAR(fa.coef("x"), fb.coef("x"), 1e-12);
    EXPECT_NEAR(fa.std_error("x"), fb.std_error("x"), 1e-12);
  }
}

TEST(Logistic, SeparationIsFlagged) {
  auto t = table({{"y", {0, 0, 0, 0, 1, 1, 1, 1}}, {"x", {1, 2, 3, 4, 5, 6, 7, 8}}});
  auto f = fit_model(t, spec(Family::Logistic, "y", {"x"}));
  EXPECT_TRUE(f.separation);
  EXPECT_FALSE(f.converged);
}

// ---- ols ---------------------------------------------------------------------

TEST(Ols, ExactAndNoisyRecovery) {
  auto exact = table({{"y", {3, 5, 7, 9}}, {"x", {1, 2, 3, 4}}});
  auto f = fit_model(exact, spec(Family::Ols, "y", {"x"}));
  EXPECT_NEAR(f.coef("x"), 2, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);

  Rng rng(10);
  std::vector<double> x, y;
  for (int i = 0; i < 5000; ++i) {
    x.push_back(rng.normal());
    y.push_back(1 + 2 * x.back() + rng.normal());
  }
  auto noisy = table({{"y", y}, {"x", x}});
  for (SeType se : {SeType::Robust, SeType::Classical}) {
    auto s = spec(Family::Ols, "y", {"x"});
    s.se = se;
    auto g = fit_model(noisy, s);
    EXPECT_LT(std::abs(g.coef("x") - 2), 3 * g.std_error("x"));
    EXPECT_NEAR(g.std_error("x"), 1 / std::sqrt(5000.0), 0.003);
  }
}

TEST(Ols, EqualWeightsMatchUnweighted) {
  Rng rng(11);
  std::vector<double> x, y, w(200, 4.0);
  for (int i = 0; i < 200; ++i) {
    x.push_back(rng.normal());
    y.push_back(0.5 * x.back() + rng.normal());
  }
  auto t = table({{"y", y}, {"x", x}, {"w", w}});
  auto a = fit_model(t, spec(Family::Ols, "y", {"x"}));
  auto s = spec(Family::Ols, "y", {"x"});
  s.weights = "w";
  auto b = fit_model(t, s);
  EXPECT_NEAR(a.coef("x"), b.coef("x"), 1e-12);
  EXPECT_NEAR(a.std_error("x"), b.std_error("x"), 1e-12);
}

// ---- marginal effects --------------------------------------------------------

TEST(Ame, OlsEqualsCoefficient) {
  Rng rng(12);
  std::vector<double> x, y, z;
  for (int i = 0; i < 300; ++i) {
    x.push_back(rng.normal());
    z.push_back(rng.normal());
    y.push_back(1 + 0.7 * x.back() - z.back() + rng.normal());
  }
  auto t = table({{"y", y}, {"x", x}, {"z", z}});
  auto d = build_design(t, spec(Family::Ols, "y", {"x", "z"}));
  auto f = fit(d);
  auto a = average_marginal_effect(f, d, "x");
  EXPECT_DOUBLE_EQ(a.estimate, f.coef("x"));
  EXPECT_NEAR(a.std_error, f.std_error("x"), 1e-6);
}

TEST(Ame, ExcludedVariableIsZero) {
  auto t = logistic_sample(500, 0.2, 0.0, 13);
  auto d = build_design(t, spec(Family::Logistic, "y", {}));
  auto f = fit(d);
  auto a = average_marginal_effect(f, d, "x");
  EXPECT_EQ(a.estimate, 0.0);
  EXPECT_EQ(a.std_error, 0.0);
  EXPECT_THROW(average_marginal_effect(f, d, "nowhere"), InvalidInput);
}

TEST(Ame, LogisticMatchesFiniteDifferences) {
  Rng rng(14);
  const int n = 1500;
  std::vector<double> x(n), g(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.normal();
    g[i] = rng.bernoulli(0.4);
    y[i] = rng.bernoulli(inv_logit(-0.5 + 0.8 * x[i] + 0.6 * g[i] - 0.5 * g[i] * x[i]));
  }
  auto t = table({{"y", y}, {"x", x}, {"g", g}});
  auto s = spec(Family::Logistic, "y", {"x", "g"});
  s.interactions = {{"g", "x"}};
  auto d = build_design(t, s);
  auto f = fit(d);
  const double b0 = f.coef("(Intercept)"), bx = f.coef("x"), bg = f.coef("g"), bgx = f.coef("g:x");
  auto p = [&](double xi, double gi) { return 1 / (1 + std::exp(-(b0 + bx * xi + bg * gi + bgx * gi * xi))); };
  const double h = 1e-5;
  double fd = 0, disc = 0;
  for (int i = 0; i < n; ++i) {
    fd += (p(x[i] + h, g[i]) - p(x[i] - h, g[i])) / (2 * h) / n;
    disc += (p(x[i], 1) - p(x[i], 0)) / n;
  }
  auto ax = average_marginal_effect(f, d, "x");
  auto ag = average_marginal_effect(f, d, "g");
  EXPECT_FALSE(ax.binary);
  EXPECT_TRUE(ag.binary);
  EXPECT_NEAR(ax.estimate, fd, 1e-6);
  EXPECT_NEAR(ag.estimate, disc, 1e-12);
  EXPECT_GT(ax.std_error, 0);
  EXPECT_EQ(ag.grid.size(), 2u);
  EXPECT_NEAR(ag.grid[1].prediction - ag.grid[0].prediction, ag.estimate, 1e-12);
}

TEST(Ame, NegBinSlopeAndIrr) {
  auto s = nb_sample(3000, 0.4, 0.6, 0.5, 15, false);
  auto d = build_design(s.data, spec(Family::NegBin, "y", {"x"}));
  auto f = fit(d);
  const auto x = s.data.numeric("x");
  double oracle = 0;
  for (double xi : x) oracle += f.coef("x") * std::exp(f.coef("(Intercept)") + f.coef("x") * xi) / x.size();
  EXPECT_NEAR(average_marginal_effect(f, d, "x").estimate, oracle, 1e-9);
  auto irr = irr_table(f);
  EXPECT_DOUBLE_EQ(irr[1].irr, std::exp(f.coef("x")));
  EXPECT_LT(irr[1].lower, irr[1].irr);
  EXPECT_GT(irr[1].upper, irr[1].irr);
}

// ---- slope tests -------------------------------------------------------------

namespace {

DataTable slope_sample(int n, double gap, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n), g(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.normal();
    g[i] = rng.bernoulli(0.5);
    y[i] = rng.bernoulli(inv_logit(-0.3 + 0.5 * x[i] + 0.2 * g[i] + gap * g[i] * x[i]));
  }
  return table({{"y", y}, {"x", x}, {"g", g}});
}

ModelSpec slope_spec() {
  auto s = spec(Family::Logistic, "y", {"x", "g"});
  s.interactions = {{"g", "x"}};
  return s;
}

}  // namespace

TEST(SlopeTest, NullRejectionRateIsCalibrated) {
  int rejected = 0;
  const int sims = 200;
  for (int k = 0; k < sims; ++k) {
    auto t = slope_sample(800, 0.0, 1000 + k);
    auto d = build_design(t, slope_spec());
    auto f = fit(d);
    rejected += interaction_slope_test(f, d, "g", "x", 5).interaction.p_value < 0.05;
  }
  const double rate = static_cast<double>(rejected) / sims;
  EXPECT_GE(rate, 0.02);
  EXPECT_LE(rate, 0.09);
}

TEST(SlopeTest, PlantedGapRecovered) {
  auto t = slope_sample(20000, -0.4, 16);
  auto d = build_design(t, slope_spec());
  auto f = fit(d);
  auto st = interaction_slope_test(f, d, "g", "x");
  EXPECT_LT(st.interaction.estimate, 0);
  EXPECT_LT(st.interaction.p_value, 0.01);
  // the group gap shrinks (turns negative) as x rises two SDs above the median
  EXPECT_LT(st.gap_at_median_2sd, st.gap_at_median);
  EXPECT_EQ(st.group0.size(), 20u);
  auto plain = build_design(t, spec(Family::Logistic, "y", {"x", "g"}));
  EXPECT_THROW(interaction_slope_test(fit(plain), plain, "g", "x"), InvalidInput);
}

TEST(Export, CoefficientCsv) {
  auto s = nb_sample(500, 0.4, 0.6, 0.5, 17, false);
  auto f = fit_model(s.data, spec(Family::NegBin, "y", {"x"}));
  std::stringstream ss;
  write_coefficients(ss, "novelty", f);
  auto t = csv::read(ss);
  EXPECT_EQ(t.header, (std::vector<std::string>{"model", "term", "estimate", "std_error", "z", "p_value"}));
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[2][1], "alpha");
}
