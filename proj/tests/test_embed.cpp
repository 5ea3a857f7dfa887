#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "linkmine/embed.hpp"

using namespace linkmine;
using namespace linkmine::embed;

namespace {

// Documents drawn mostly from one of `clusters` groups of concepts.
std::vector<std::vector<std::string>> clustered_corpus(int clusters, int per_cluster, int docs, int len,
                                                       double leak, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::string>> out;
  for (int d = 0; d < docs; ++d) {
    const int home = static_cast<int>(rng.below(clusters));
    std::vector<std::string> seq;
    for (int t = 0; t < len; ++t) {
      const int c = rng.bernoulli(leak) ? static_cast<int>(rng.below(clusters)) : home;
      seq.push_back("c" + std::to_string(c) + "_" + std::to_string(rng.below(per_cluster)));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> random_vec(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST(Cosine, WorkedValues) {
  const std::vector<double> e1{1, 0}, e2{0, 1}, neg{-1, 0};
  EXPECT_DOUBLE_EQ(cosine_distance(e1, e1), 0.0);
  EXPECT_DOUBLE_EQ(cosine_distance(e1, e2), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(e1, neg), 2.0);
  const std::vector<double> zero{0, 0};
  EXPECT_THROW(cosine_distance(e1, zero), InvalidInput);
  EXPECT_THROW(cosine_distance(e1, std::vector<double>{1, 0, 0}), InvalidInput);
}

TEST(Cosine, SymmetricAndScaleInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto u = random_vec(rng, 7), v = random_vec(rng, 7);
    const double d = cosine_distance(u, v);
    EXPECT_NEAR(d, cosine_distance(v, u), 1e-15);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
    const double s = 0.01 + 100 * rng.uniform();
    auto us = u;
    for (auto& x : us) x *= s;
    EXPECT_NEAR(cosine_distance(us, v), d, 1e-12);
  }
}

TEST(Sgns, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  const std::size_t d = 6;
  auto center = random_vec(rng, d), context = random_vec(rng, d);
  std::vector<std::vector<double>> negs{random_vec(rng, d), random_vec(rng, d), random_vec(rng, d)};
  auto spans = [&] {
    std::vector<std::span<const double>> s;
    for (const auto& n : negs) s.emplace_back(n);
    return s;
  };
  const auto g = sgns_gradient(center, context, spans());
  const double h = 1e-6;
  auto check = [&](std::vector<double>& x, const std::vector<double>& analytic) {
    for (std::size_t i = 0; i < d; ++i) {
      const double keep = x[i];
      x[i] = keep + h;
      const double up = sgns_loss(center, context, spans());
      x[i] = keep - h;
      const double down = sgns_loss(center, context, spans());
      x[i] = keep;
      EXPECT_NEAR((up - down) / (2 * h), analytic[i], 1e-6);
    }
  };
  check(center, g.center);
  check(context, g.context);
  for (std::size_t k = 0; k < negs.size(); ++k) check(negs[k], g.negatives[k]);
}

TEST(Skipgram, DeterministicForFixedSeed) {
  auto corpus = clustered_corpus(3, 4, 60, 12, 0.1, 2);
  SkipgramOptions opt;
  opt.dims = 16;
  opt.seed = 9;
  auto a = train_skipgram(corpus, opt);
  auto b = train_skipgram(corpus, opt);
  EXPECT_EQ(a.matrix(), b.matrix());
  EXPECT_EQ(a.concepts(), b.concepts());
  opt.seed = 10;
  EXPECT_FALSE(train_skipgram(corpus, opt).matrix() == a.matrix());
}

TEST(Skipgram, SeparatesClusters) {
  auto corpus = clustered_corpus(2, 5, 400, 15, 0.02, 3);
  SkipgramOptions opt;
  opt.dims = 20;
  auto e = train_skipgram(corpus, opt);
  ASSERT_EQ(e.size(), 10u);
  double within = 0, between = 0;
  int nw = 0, nb = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      const double d = cosine_distance(e.matrix().row(i), e.matrix().row(j));
      if (e.concepts()[i][1] == e.concepts()[j][1]) {
        within += d;
        ++nw;
      } else {
        between += d;
        ++nb;
      }
    }
  EXPECT_LT(within / nw + 0.3, between / nb);
}

TEST(Skipgram, AbsentConceptHasNoVector) {
  auto e = train_skipgram({{"alpha", "beta", "alpha"}, {"beta", "gamma"}}, {.dims = 8});
  EXPECT_TRUE(e.vector("gamma").has_value());
  EXPECT_FALSE(e.vector("delta").has_value());
  EXPECT_EQ(e.dims(), 8u);
}

TEST(Skipgram, SingleConceptCorpusIsFinite) {
  for (auto corpus : {std::vector<std::vector<std::string>>{{"solo", "solo", "solo"}, {"solo"}},
                      std::vector<std::vector<std::string>>{{"solo"}}}) {
    auto e = train_skipgram(corpus, {.dims = 10});
    ASSERT_EQ(e.size(), 1u);
    for (double x : e.matrix().data()) EXPECT_TRUE(std::isfinite(x));
  }
  EXPECT_EQ(train_skipgram({}, {.dims = 4}).size(), 0u);
}

TEST(Skipgram, RejectsBadOptions) {
  EXPECT_THROW(train_skipgram({{"a"}}, {.dims = 0}), InvalidInput);
  EXPECT_THROW(train_skipgram({{"a"}}, {.window = 0}), InvalidInput);
  EXPECT_THROW(train_skipgram({{"a"}}, {.learning_rate = 0}), InvalidInput);
}

TEST(Skipgram, ParallelModeProducesFiniteVectors) {
  auto corpus = clustered_corpus(2, 5, 200, 10, 0.05, 4);
  auto e = train_skipgram(corpus, {.dims = 12, .threads = 3});
  EXPECT_EQ(e.size(), 10u);
  for (double x : e.matrix().data()) EXPECT_TRUE(std::isfinite(x));
}

TEST(DistalNovelty, MeanSkipsAndInvariants) {
  links::ConceptIndex idx({"a", "b", "c", "ghost"});
  RowMatrix m(3, 2);
  m(0, 0) = 1;                // a
  m(1, 1) = 1;                // b
  m(2, 0) = -1, m(2, 1) = 0;  // c
  EmbeddingMatrix e({"a", "b", "c"}, m);
  auto key = [&](const char* x, const char* y) { return links::make_pair_key(*idx.id(x), *idx.id(y)); };

  links::NoveltyRecord r;
  r.new_links = {key("a", "b"), key("a", "c"), key("a", "ghost")};
  auto res = distal_novelty(r, e, idx);
  EXPECT_DOUBLE_EQ(res.mean_distance, 1.5);
  EXPECT_EQ(res.skipped, 1);

  std::reverse(r.new_links.begin(), r.new_links.end());
  EXPECT_DOUBLE_EQ(distal_novelty(r, e, idx).mean_distance, 1.5);

  r.new_links = {key("b", "ghost")};
  res = distal_novelty(r, e, idx);
  EXPECT_TRUE(std::isnan(res.mean_distance));
  EXPECT_EQ(res.skipped, 1);
}

TEST(DistalNovelty, BoundedOnTrainedVectors) {
  auto corpus = clustered_corpus(3, 4, 150, 10, 0.1, 6);
  auto e = train_skipgram(corpus, {.dims = 12});
  links::ConceptIndex idx(e.concepts());
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    links::NoveltyRecord r;
    for (int k = 0; k < 4; ++k) {
      auto a = static_cast<links::ConceptId>(rng.below(idx.size()));
      auto b = static_cast<links::ConceptId>(rng.below(idx.size()));
      if (a != b) r.new_links.push_back(links::make_pair_key(std::min(a, b), std::max(a, b)));
    }
    if (r.new_links.empty()) continue;
    auto res = distal_novelty(r, e, idx);
    EXPECT_GE(res.mean_distance, 0.0);
    EXPECT_LE(res.mean_distance, 2.0);
    auto shuffled = r;
    rng.shuffle(shuffled.new_links);
    EXPECT_NEAR(distal_novelty(shuffled, e, idx).mean_distance, res.mean_distance, 1e-12);
  }
}

TEST(DistalNovelty, StableAcrossSeeds) {
  auto corpus = clustered_corpus(4, 6, 600, 20, 0.1, 7);
  links::ConceptIndex idx(train_skipgram(corpus, {.dims = 4, .epochs = 0}).concepts());
  Rng rng(2);
  std::vector<links::NoveltyRecord> records(200);
  for (auto& r : records) {
    for (int k = 0; k < 3; ++k) {
      auto a = static_cast<links::ConceptId>(rng.below(idx.size()));
      auto b = static_cast<links::ConceptId>(rng.below(idx.size()));
      if (a != b) r.new_links.push_back(links::make_pair_key(std::min(a, b), std::max(a, b)));
    }
    if (r.new_links.empty()) r.new_links.push_back(links::make_pair_key(0, 1));
  }
  std::vector<std::vector<double>> scores;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto e = train_skipgram(corpus, {.dims = 20, .seed = seed});
    std::vector<double> s;
    for (const auto& r : records) s.push_back(distal_novelty(r, e, idx).mean_distance);
    scores.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = i + 1; j < scores.size(); ++j) EXPECT_GT(pearson(scores[i], scores[j]), 0.8);
}

TEST(NearestNeighbors, OrderAndTies) {
  RowMatrix m(4, 2);
  m(0, 0) = 1;            // q
  m(1, 1) = 1;            // x: distance 1
  m(2, 1) = -1;           // w: distance 1, ties with x
  m(3, 0) = 1, m(3, 1) = 1;  // z: closest
  EmbeddingMatrix e({"q", "w", "x", "z"}, m);
  auto nn = nearest_neighbors("q", e, 10);
  ASSERT_EQ(nn.size(), 3u);
  EXPECT_EQ(nn[0].first, "z");
  EXPECT_EQ(nn[1].first, "w");
  EXPECT_EQ(nn[2].first, "x");
  EXPECT_DOUBLE_EQ(nn[1].second, 1.0);
  EXPECT_EQ(nearest_neighbors("q", e, 1).size(), 1u);
  EXPECT_THROW(nearest_neighbors("missing", e, 3), InvalidInput);
}

TEST(EmbeddingText, RoundTripsExactly) {
  auto corpus = clustered_corpus(2, 3, 30, 8, 0.1, 8);
  auto e = train_skipgram(corpus, {.dims = 5});
  std::stringstream ss;
  write_embeddings(ss, e);
  std::string first;
  std::getline(ss, first);
  EXPECT_EQ(first, "6 5");
  ss.seekg(0);
  auto back = read_embeddings(ss);
  EXPECT_EQ(back.concepts(), e.concepts());
  EXPECT_EQ(back.matrix(), e.matrix());

  std::stringstream bad("2 3\na 1 2 3\n");
  EXPECT_THROW(read_embeddings(bad), InvalidInput);
  std::stringstream short_row("1 3\na 1 2\n");
  EXPECT_THROW(read_embeddings(short_row), InvalidInput);
}
