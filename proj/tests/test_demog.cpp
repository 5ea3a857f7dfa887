#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "linkmine/demog.hpp"

using namespace linkmine;
using namespace linkmine::demog;

namespace {

NameFrequencyTable gender_table() {
  NameFrequencyTable t(TableKind::FirstNameGender, {"female", "male"});
  t.set("Mary", {0.99, 0.01});
  t.set("John", {0.004, 0.996});
  t.set("Robin", {0.5, 0.5});
  t.set("Kim", {0.72, 0.28});
  return t;
}

NameFrequencyTable race_table() {
  NameFrequencyTable t(TableKind::SurnameRace, {"white", "black", "asian", "hispanic", "native", "other"});
  t.set("Garcia", {0.55, 0.01, 0.01, 0.42, 0.0, 0.01});
  t.set("Nguyen", {0.03, 0.0, 0.95, 0.01, 0.0, 0.01});
  t.set("Yao", {0.10, 0.02, 0.40, 0.01, 0.0, 0.02});
  t.set("Smith", {0.70, 0.23, 0.01, 0.02, 0.01, 0.03});
  return t;
}

}  // namespace

TEST(Names, Canonicalization) {
  EXPECT_EQ(canonical_surname("  Garcia-Lopez "), "garcia");
  EXPECT_EQ(canonical_surname("Van Dyke"), "van");
  EXPECT_EQ(canonical_first_name(" MARY "), "mary");
  EXPECT_EQ(canonical_full_name(" Ana  Maria ", "Lopez"), "ana maria lopez");
  auto t = race_table();
  EXPECT_NE(t.find("GARCIA-Marquez"), nullptr);
}

TEST(Names, TableValidation) {
  NameFrequencyTable t(TableKind::FirstNameGender, {"female", "male"});
  EXPECT_THROW(t.set("x", {1.2, 0.0}), InvalidInput);
  EXPECT_THROW(t.set("x", {0.7, 0.6}), InvalidInput);
  EXPECT_THROW(t.set("x", {0.7}), InvalidInput);
  std::stringstream ss("name,female,male\nMary,0.99,0.01\nAlex,0.4,0.6\n");
  auto r = read_name_table(ss, TableKind::FirstNameGender);
  EXPECT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r.fraction("alex", r.category("male")), 0.6);
  std::stringstream bad("first,female\nMary,0.99\n");
  EXPECT_THROW(read_name_table(bad, TableKind::FirstNameGender), InvalidInput);
}

TEST(Gender, ThresholdAndSecondary) {
  auto t = gender_table();
  ThresholdConfig cfg;
  EXPECT_EQ(assign_gender("Mary", t, cfg), Gender::Woman);
  EXPECT_EQ(assign_gender("John", t, cfg), Gender::Man);
  EXPECT_EQ(assign_gender("Kim", t, cfg), Gender::Woman);  // 0.72 >= 0.7145
  EXPECT_EQ(assign_gender("Zzyzx", t, cfg), Gender::Unknown);
  EXPECT_EQ(assign_gender("Robin", t, cfg), Gender::Unknown);

  NameFrequencyTable sec(TableKind::FirstNameGender, {"female"});
  sec.set("Robin", {0.96});
  sec.set("Sasha", {0.1});
  EXPECT_EQ(assign_gender("Robin", t, cfg, &sec), Gender::Woman);
  EXPECT_EQ(assign_gender("Sasha", t, cfg, &sec), Gender::Man);
  EXPECT_EQ(assign_gender("Zzyzx", t, cfg, &sec), Gender::Unknown);
  // primary decision is not overridden by the secondary table
  sec.set("Mary", {0.0});
  EXPECT_EQ(assign_gender("Mary", t, cfg, &sec), Gender::Woman);
}

TEST(Race, PrecedenceAndMajority) {
  auto t = race_table();
  ThresholdConfig cfg;
  cfg.race = {0.5, 0.2, 0.5, 0.4};  // white, asian, hispanic, other
  // Garcia meets white (0.55) and hispanic (0.42) thresholds -> hispanic wins
  cfg.race[int(RaceGroup::Hispanic)] = 0.4;
  EXPECT_EQ(assign_race_group("Garcia", t, cfg), RaceGroup::Hispanic);
  EXPECT_EQ(assign_race("Garcia", t, cfg), Race::Urm);
  EXPECT_EQ(assign_race("Nguyen", t, cfg), Race::Asian);
  // Smith: white 0.70, black+native+other 0.27 < 0.4 -> white
  EXPECT_EQ(assign_race("Smith", t, cfg), Race::White);
  cfg.race[int(RaceGroup::Other)] = 0.25;
  EXPECT_EQ(assign_race("Smith", t, cfg), Race::Urm);
  // Yao meets nothing: asian 0.40 < 0.5 but is the largest share
  cfg.race = {0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(assign_race("Yao", t, cfg), Race::Asian);
  EXPECT_EQ(assign_race("Unknownson", t, cfg), Race::Unknown);
}

TEST(Race, SecondaryPatchOrder) {
  auto t = race_table();
  ThresholdConfig cfg;
  NameFrequencyTable sec(TableKind::FullNameRace, {"white", "black", "asian", "hispanic"});
  sec.set("ana lopez", {0.15, 0.05, 0.05, 0.35});
  sec.set("li wei", {0.2, 0.0, 0.7, 0.0});
  sec.set("lee jones", {0.35, 0.40, 0.0, 0.0});
  sec.set("jo smith", {0.1, 0.8, 0.0, 0.0});
  sec.set("pat doe", {0.45, 0.1, 0.4, 0.05});

  // unknown surname, weak Hispanic signal dominating White
  EXPECT_EQ(assign_race_group("Lopez", t, cfg, &sec, "ana lopez"), RaceGroup::Hispanic);
  EXPECT_EQ(assign_race("Lopez", t, cfg, &sec, "ana lopez"), Race::Urm);
  // fallback Asian
  EXPECT_EQ(assign_race("Wei", t, cfg, &sec, "li wei"), Race::Asian);
  // 0.40 > 0.3 but not twice 0.35, and nobody above 0.5 -> unknown
  EXPECT_EQ(assign_race("Jones", t, cfg, &sec, "lee jones"), Race::Unknown);
  // strong Black probability overrides the surname decision
  EXPECT_EQ(assign_race("Smith", t, cfg), Race::White);
  EXPECT_EQ(assign_race_group("Smith", t, cfg, &sec, "jo smith"), RaceGroup::Other);
  // nothing strong and already labelled: surname label stands
  EXPECT_EQ(assign_race("Nguyen", t, cfg, &sec, "pat doe"), Race::Asian);
  EXPECT_EQ(assign_race("Doe", t, cfg, &sec, "pat doe"), Race::Unknown);
}

TEST(Race, ThresholdLabelIsHighestPrecedenceMet) {
  Rng rng(3);
  NameFrequencyTable t(TableKind::SurnameRace, {"white", "asian", "hispanic", "black"});
  for (int i = 0; i < 500; ++i) {
    std::vector<double> f(4);
    double rest = 1;
    for (auto& x : f) rest -= (x = rest * rng.uniform());
    t.set("n" + std::to_string(i), f);
  }
  ThresholdConfig cfg;
  cfg.race = {0.3, 0.25, 0.2, 0.15};
  for (const auto& [name, f] : t.entries()) {
    const auto g = assign_race_group(name, t, cfg);
    EXPECT_EQ(g, assign_race_group(name, t, cfg));
    int expected = -1;
    for (int k = 3; k >= 0; --k)
      if (f[k] > 0 && f[k] >= cfg.race[k]) {
        expected = k;
        break;
      }
    if (expected < 0)
      expected = static_cast<int>(std::max_element(f.begin(), f.end()) - f.begin());
    EXPECT_EQ(static_cast<int>(g), expected) << name;
  }
}

TEST(Calibration, RecoversPlantedBoundary) {
  NameFrequencyTable t(TableKind::FirstNameGender, {"female", "male"});
  std::vector<LabeledName> labeled;
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    const double f = std::round(rng.uniform() * 100) / 100;
    const std::string name = "n" + std::to_string(i);
    t.set(name, {f, 1 - f});
    labeled.push_back({name, f >= 0.7});
  }
  const double step = 0.01;
  auto c = calibrate_threshold(t, "female", labeled, step);
  EXPECT_GE(c.threshold, 0.70 - step - 1e-12);
  EXPECT_LE(c.threshold, 0.70 + 1e-12);
  EXPECT_DOUBLE_EQ(c.correlation, 1.0);
}

TEST(Calibration, CoarseGridAndErrors) {
  NameFrequencyTable t(TableKind::FirstNameGender, {"female", "male"});
  t.set("a", {0.9, 0.1});
  t.set("b", {0.3, 0.7});
  t.set("c", {0.6, 0.4});
  std::vector<LabeledName> labeled{{"a", true}, {"b", false}, {"c", true}, {"absent", false}};
  auto c = calibrate_threshold(t, "female", labeled, 0.5);
  EXPECT_TRUE(c.threshold == 0.0 || c.threshold == 0.5 || c.threshold == 1.0);
  EXPECT_DOUBLE_EQ(c.threshold, 0.5);
  EXPECT_DOUBLE_EQ(c.correlation, 1.0);
  EXPECT_EQ(threshold_grid(0.5), (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(threshold_grid(0.01).size(), 101u);

  EXPECT_THROW(calibrate_threshold(t, "female", {{"a", true}, {"c", true}}), InvalidInput);
  EXPECT_THROW(calibrate_threshold(t, "female", {}), InvalidInput);
  EXPECT_THROW(calibrate_threshold(t, "nonbinary", labeled), InvalidInput);
}

TEST(Calibration, TiesGoToHigherThreshold) {
  NameFrequencyTable t(TableKind::FirstNameGender, {"female"});
  t.set("a", {0.9});
  t.set("b", {0.2});
  // every threshold in (0.2, 0.9] separates perfectly
  auto c = calibrate_threshold(t, "female", {{"a", true}, {"b", false}}, 0.1);
  EXPECT_DOUBLE_EQ(c.threshold, 0.9);
}

TEST(Calibration, PhiMatchesPearsonOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<bool> a, b;
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
      a.push_back(rng.bernoulli(0.4));
      b.push_back(rng.bernoulli(0.5));
      x.push_back(a.back());
      y.push_back(b.back());
    }
    double mx = 0, my = 0;
    for (int i = 0; i < 40; ++i) mx += x[i] / 40, my += y[i] / 40;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 40; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    EXPECT_NEAR(phi_coefficient(a, b), sxy / std::sqrt(sxx * syy), 1e-12);
  }
  EXPECT_TRUE(std::isnan(phi_coefficient({true, true}, {true, false})));
}

TEST(Representation, WorkedCell) {
  std::vector<Student> cell;
  for (int i = 0; i < 10; ++i)
    cell.push_back({"s" + std::to_string(i), "math", 1990, i < 3 ? Gender::Woman : Gender::Man,
                    i % 2 ? Race::White : Race::Asian});
  cell.push_back({"u", "math", 1990, Gender::Unknown, Race::Unknown});
  auto st = representation_stats(cell);
  EXPECT_DOUBLE_EQ(st[0].pct_same_gender, 0.3);
  EXPECT_TRUE(*st[0].gender_minority);
  EXPECT_DOUBLE_EQ(st[5].pct_same_gender, 0.7);
  EXPECT_FALSE(*st[5].gender_minority);
  // five white, five asian: tied for largest, nobody a minority
  EXPECT_FALSE(*st[0].racial_minority);
  EXPECT_FALSE(*st[1].racial_minority);
  EXPECT_DOUBLE_EQ(st[1].pct_same_race, 0.5);
  EXPECT_TRUE(std::isnan(st[10].pct_same_gender));
  EXPECT_FALSE(st[10].gender_minority.has_value());
}

TEST(Representation, MatchesBruteForceTally) {
  Rng rng(6);
  std::vector<Student> students;
  for (int i = 0; i < 400; ++i)
    students.push_back({"a" + std::to_string(i), rng.bernoulli(0.5) ? "bio" : "phys",
                        2000 + static_cast<int>(rng.below(3)), static_cast<Gender>(rng.below(3)),
                        static_cast<Race>(rng.below(4))});
  auto st = representation_stats(students);
  std::map<std::pair<std::string, int>, std::set<int>> cells;
  for (std::size_t i = 0; i < students.size(); ++i) {
    const auto& s = students[i];
    cells[{s.discipline, s.year}].insert(static_cast<int>(i));
    if (s.race == Race::Unknown) continue;
    int same = 0, known = 0;
    std::map<Race, int> size;
    for (const auto& o : students)
      if (o.discipline == s.discipline && o.year == s.year && o.race != Race::Unknown) {
        ++known;
        same += o.race == s.race;
        ++size[o.race];
      }
    int largest = 0;
    for (auto [r, n] : size) largest = std::max(largest, n);
    EXPECT_DOUBLE_EQ(st[i].pct_same_race, static_cast<double>(same) / known);
    EXPECT_EQ(*st[i].racial_minority, size[s.race] < largest);
  }
  // shares of the distinct gender groups in a cell sum to one
  for (const auto& [cell, members] : cells) {
    std::map<Gender, double> share;
    for (int i : members)
      if (students[i].gender != Gender::Unknown) share[students[i].gender] = st[i].pct_same_gender;
    double total = 0;
    for (auto [g, s] : share) total += s;
    if (!share.empty()) EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Labels, CsvRoundTripAndUnknownShares) {
  std::vector<Student> s{{"a1", "x", 1, Gender::Woman, Race::Urm}, {"a2", "x", 1, Gender::Unknown, Race::White},
                         {"a3", "x", 1, Gender::Man, Race::Unknown}, {"a4", "x", 1, Gender::Man, Race::Unknown}};
  std::stringstream ss;
  write_labels(ss, s);
  EXPECT_EQ(ss.str().substr(0, 22), "author_id,gender,race\n");
  auto back = read_labels(ss);
  EXPECT_EQ(back.at("a1").race, Race::Urm);
  EXPECT_EQ(back.at("a2").gender, Gender::Unknown);
  auto u = unknown_shares(s);
  EXPECT_DOUBLE_EQ(u.gender, 0.25);
  EXPECT_DOUBLE_EQ(u.race, 0.5);
}
