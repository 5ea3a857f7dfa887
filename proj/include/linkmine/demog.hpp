#pragma once

// Name-based gender and race labels, threshold calibration against
// labelled names, and within-cell representation covariates.

#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/csv.hpp"

namespace linkmine::demog {

enum class TableKind { FirstNameGender, SurnameRace, FullNameRace };

inline std::string canonical_first_name(std::string_view name) { return to_lower_ascii(trim(name)); }

/// Lowercased surname up to the first space or hyphen.
inline std::string canonical_surname(std::string_view name) {
  std::string s = to_lower_ascii(trim(name));
  const auto cut = s.find_first_of(" -");
  if (cut != std::string::npos) s.resize(cut);
  return s;
}

/// Lowercased "first last" with runs of whitespace collapsed.
inline std::string canonical_full_name(std::string_view first, std::string_view last) {
  std::string out;
  for (std::string_view part : {first, last})
    for (const auto& w : split(to_lower_ascii(trim(part)), ' ')) {
      if (w.empty()) continue;
      if (!out.empty()) out += ' ';
      out += w;
    }
  return out;
}

class NameFrequencyTable {
 public:
  NameFrequencyTable() = default;
  NameFrequencyTable(TableKind kind, std::vector<std::string> categories) : kind_(kind), categories_(std::move(categories)) {
    for (auto& c : categories_) c = to_lower_ascii(trim(c));
  }

  TableKind kind() const { return kind_; }
  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t size() const { return entries_.size(); }

  int category(std::string_view name) const {
    for (std::size_t i = 0; i < categories_.size(); ++i)
      if (categories_[i] == name) return static_cast<int>(i);
    return -1;
  }

  std::string canonical(std::string_view name) const {
    switch (kind_) {
      case TableKind::FirstNameGender: return canonical_first_name(name);
      case TableKind::SurnameRace: return canonical_surname(name);
      case TableKind::FullNameRace: return canonical_full_name(name, "");
    }
    return std::string(name);
  }

  /// Adds or replaces a name. Fractions must lie in [0,1] and sum to at most 1.
  void set(std::string_view name, std::vector<double> fractions) {
    if (fractions.size() != categories_.size()) throw InvalidInput("name table: wrong number of fractions");
    double sum = 0;
    for (double f : fractions) {
      if (!(f >= 0 && f <= 1)) throw InvalidInput("name table: fraction outside [0,1] for '" + std::string(name) + "'");
      sum += f;
    }
    if (sum > 1 + 1e-6) throw InvalidInput("name table: fractions sum above 1 for '" + std::string(name) + "'");
    const auto key = canonical(name);
    if (key.empty()) throw InvalidInput("name table: empty name");
    entries_[key] = std::move(fractions);
  }

  const std::vector<double>* find(std::string_view name) const {
    auto it = entries_.find(canonical(name));
    return it == entries_.end() ? nullptr : &it->second;
  }

  double fraction(std::string_view name, int cat) const {
    const auto* f = find(name);
    return f && cat >= 0 ? (*f)[static_cast<std::size_t>(cat)] : kNaN;
  }

  const std::map<std::string, std::vector<double>>& entries() const { return entries_; }

 private:
  TableKind kind_ = TableKind::FirstNameGender;
  std::vector<std::string> categories_;
  std::map<std::string, std::vector<double>> entries_;
};

inline NameFrequencyTable read_name_table(std::istream& in, TableKind kind, const std::string& what = "name table") {
  auto t = csv::read(in, what);
  if (t.header.size() < 2 || t.header[0] != "name")
    throw InvalidInput(what + ": header must be 'name,<category>,...'");
  NameFrequencyTable table(kind, {t.header.begin() + 1, t.header.end()});
  for (const auto& row : t.rows) {
    std::vector<double> f;
    for (std::size_t i = 1; i < row.size(); ++i) {
      double v;
      if (!parse_double(trim(row[i]), v)) throw InvalidInput(what + ": bad fraction for '" + row[0] + "'");
      f.push_back(v);
    }
    table.set(row[0], std::move(f));
  }
  return table;
}

inline NameFrequencyTable read_name_table_file(const std::string& path, TableKind kind) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  return read_name_table(in, kind, path);
}

// ---- labels -----------------------------------------------------------------

enum class Gender { Woman, Man, Unknown };
enum class Race { White, Asian, Urm, Unknown };

// Finer race groups used while deciding; "other" covers African American,
// Native American and any residual category. Listed in ascending precedence.
enum class RaceGroup { White = 0, Asian = 1, Hispanic = 2, Other = 3, Unknown = 4 };
inline constexpr int kRaceGroups = 4;

inline const char* to_string(Gender g) {
  switch (g) {
    case Gender::Woman: return "woman";
    case Gender::Man: return "man";
    default: return "unknown";
  }
}
inline const char* to_string(Race r) {
  switch (r) {
    case Race::White: return "white";
    case Race::Asian: return "asian";
    case Race::Urm: return "urm";
    default: return "unknown";
  }
}
inline const char* to_string(RaceGroup r) {
  switch (r) {
    case RaceGroup::White: return "white";
    case RaceGroup::Asian: return "asian";
    case RaceGroup::Hispanic: return "hispanic";
    case RaceGroup::Other: return "other";
    default: return "unknown";
  }
}

inline Race collapse(RaceGroup g) {
  switch (g) {
    case RaceGroup::White: return Race::White;
    case RaceGroup::Asian: return Race::Asian;
    case RaceGroup::Hispanic:
    case RaceGroup::Other: return Race::Urm;
    default: return Race::Unknown;
  }
}

inline Gender parse_gender(std::string_view s) {
  if (s == "woman") return Gender::Woman;
  if (s == "man") return Gender::Man;
  if (s == "unknown" || s.empty()) return Gender::Unknown;
  throw InvalidInput("unknown gender label '" + std::string(s) + "'");
}
inline Race parse_race(std::string_view s) {
  if (s == "white") return Race::White;
  if (s == "asian") return Race::Asian;
  if (s == "urm") return Race::Urm;
  if (s == "unknown" || s.empty()) return Race::Unknown;
  throw InvalidInput("unknown race label '" + std::string(s) + "'");
}

/// Which race group a table column belongs to.
inline RaceGroup race_group_of(std::string_view category) {
  if (category == "white") return RaceGroup::White;
  if (category == "asian" || category == "api" || category == "pctapi") return RaceGroup::Asian;
  if (category == "hispanic" || category == "pcthispanic") return RaceGroup::Hispanic;
  return RaceGroup::Other;
}

// Column fractions summed into the four race groups.
inline std::array<double, kRaceGroups> race_fractions(const NameFrequencyTable& t, const std::vector<double>& f) {
  std::array<double, kRaceGroups> g{};
  for (std::size_t i = 0; i < f.size(); ++i) g[static_cast<int>(race_group_of(t.categories()[i]))] += f[i];
  return g;
}

struct PatchThresholds {
  double strong = 0.6;     // secondary Hispanic/Black probability that overrides
  double weak = 0.3;       // for still-unknown names, with dominance over White
  double dominance = 2.0;
  double fallback = 0.5;   // still-unknown Asian/White
};

struct ThresholdConfig {
  double female = 0.7145;
  double male = 0.7145;
  double secondary_gender = 0.6;  // probability needed from the secondary gender table
  std::array<double, kRaceGroups> race{0.5, 0.5, 0.5, 0.5};  // indexed by RaceGroup
  PatchThresholds patch;

  void validate() const {
    auto ok = [](double t) { return t >= 0 && t <= 1; };
    bool good = ok(female) && ok(male) && ok(secondary_gender) && ok(patch.strong) && ok(patch.weak) &&
                ok(patch.fallback) && patch.dominance >= 0;
    for (double t : race) good = good && ok(t);
    if (!good) throw InvalidInput("thresholds must lie in [0,1]");
  }
};

/// Primary table needs a "female" column; "male" defaults to the complement.
/// The secondary table, when given, needs a "female" probability column.
inline Gender assign_gender(std::string_view first_name, const NameFrequencyTable& table, const ThresholdConfig& cfg,
                            const NameFrequencyTable* secondary = nullptr) {
  auto female_male = [](const NameFrequencyTable& t, std::string_view name) -> std::optional<std::pair<double, double>> {
    const auto* f = t.find(name);
    const int fi = t.category("female"), mi = t.category("male");
    if (!f || fi < 0) return std::nullopt;
    const double fem = (*f)[static_cast<std::size_t>(fi)];
    return std::pair{fem, mi >= 0 ? (*f)[static_cast<std::size_t>(mi)] : 1.0 - fem};
  };
  if (auto p = female_male(table, first_name)) {
    if (p->first >= cfg.female) return Gender::Woman;
    if (p->second >= cfg.male) return Gender::Man;
  }
  if (secondary)
    if (auto p = female_male(*secondary, first_name)) {
      if (p->first >= cfg.secondary_gender) return Gender::Woman;
      if (p->second >= cfg.secondary_gender) return Gender::Man;
    }
  return Gender::Unknown;
}

/// Surname thresholds with precedence, then the majority rule, then the
/// full-name patch. Returns the fine group; collapse() gives the label.
inline RaceGroup assign_race_group(std::string_view last_name, const NameFrequencyTable& table,
                                   const ThresholdConfig& cfg, const NameFrequencyTable* secondary = nullptr,
                                   std::string_view full_name = {}) {
  RaceGroup label = RaceGroup::Unknown;
  if (const auto* f = table.find(last_name)) {
    const auto g = race_fractions(table, *f);
    for (int k = kRaceGroups - 1; k >= 0; --k)
      if (g[k] > 0 && g[k] >= cfg.race[k]) {
        label = static_cast<RaceGroup>(k);
        break;
      }
    if (label == RaceGroup::Unknown) {
      // majority; ties go to the higher-precedence group
      int best = -1;
      for (int k = kRaceGroups - 1; k >= 0; --k)
        if (g[k] > 0 && (best < 0 || g[k] > g[best])) best = k;
      if (best >= 0) label = static_cast<RaceGroup>(best);
    }
  }

  if (secondary && !full_name.empty())
    if (const auto* f = secondary->find(full_name)) {
      const auto p = race_fractions(*secondary, *f);
      const double hisp = p[int(RaceGroup::Hispanic)], other = p[int(RaceGroup::Other)];
      const double white = p[int(RaceGroup::White)], asian = p[int(RaceGroup::Asian)];
      const auto stronger = [&] { return other > hisp ? RaceGroup::Other : RaceGroup::Hispanic; };
      const PatchThresholds& t = cfg.patch;
      if (hisp > t.strong || other > t.strong) {
        label = stronger();
      } else if (label == RaceGroup::Unknown) {
        const double top = std::max(hisp, other);
        if (top > t.weak && top > t.dominance * white) {
          label = stronger();
        } else if (asian > t.fallback || white > t.fallback) {
          label = asian > white ? RaceGroup::Asian : RaceGroup::White;
        }
      }
    }
  return label;
}

inline Race assign_race(std::string_view last_name, const NameFrequencyTable& table, const ThresholdConfig& cfg,
                        const NameFrequencyTable* secondary = nullptr, std::string_view full_name = {}) {
  return collapse(assign_race_group(last_name, table, cfg, secondary, full_name));
}

// ---- calibration ------------------------------------------------------------

struct LabeledName {
  std::string name;
  bool positive = false;  // carries the category being calibrated
};

struct Calibration {
  double threshold = kNaN;
  double correlation = kNaN;
};

/// Pearson correlation of two 0/1 vectors; NaN when either is constant.
inline double phi_coefficient(const std::vector<bool>& a, const std::vector<bool>& b) {
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) (a[i] ? (b[i] ? n11 : n10) : (b[i] ? n01 : n00)) += 1;
  const double den = std::sqrt((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00));
  return den == 0 ? kNaN : (n11 * n00 - n10 * n01) / den;
}

/// Grid points 0, step, 2*step, ... up to 1, free of accumulated rounding.
inline std::vector<double> threshold_grid(double step) {
  if (!(step > 0 && step <= 1)) throw InvalidInput("calibration step must lie in (0,1]");
  std::vector<double> grid;
  const auto n = static_cast<long long>(std::floor(1.0 / step + 1e-9));
  for (long long k = 0; k <= n; ++k) grid.push_back(std::round(static_cast<double>(k) * step * 1e12) / 1e12);
  return grid;
}

/// Searches the grid for the threshold on `fractions(name)` whose indicator
/// correlates best with the labels. Names absent from the table count as not
/// assigned. Ties prefer the higher threshold.
template <class FractionOf>
Calibration calibrate(const std::vector<LabeledName>& labeled, FractionOf fraction_of, double step = 0.01) {
  if (labeled.empty()) throw InvalidInput("calibration: no labelled names");
  std::vector<bool> truth;
  std::vector<double> frac;
  for (const auto& l : labeled) {
    truth.push_back(l.positive);
    frac.push_back(fraction_of(l.name));
  }
  const auto positives = std::count(truth.begin(), truth.end(), true);
  if (positives == 0 || positives == static_cast<long>(truth.size()))
    throw InvalidInput("calibration: labelled set has a single class");
  Calibration best;
  for (double t : threshold_grid(step)) {
    std::vector<bool> assigned;
    for (double f : frac) assigned.push_back(!std::isnan(f) && f >= t - 1e-12);
    const double r = phi_coefficient(assigned, truth);
    if (std::isnan(r)) continue;
    if (std::isnan(best.correlation) || r >= best.correlation) best = {t, r};
  }
  return best;
}

inline Calibration calibrate_threshold(const NameFrequencyTable& table, std::string_view category,
                                       const std::vector<LabeledName>& labeled, double step = 0.01) {
  const int c = table.category(category);
  if (c < 0) throw InvalidInput("calibration: table has no category '" + std::string(category) + "'");
  return calibrate(labeled, [&](const std::string& n) { return table.fraction(n, c); }, step);
}

/// Calibrates one race group on group-summed fractions.
inline Calibration calibrate_race_group(const NameFrequencyTable& table, RaceGroup group,
                                        const std::vector<LabeledName>& labeled, double step = 0.01) {
  return calibrate(
      labeled,
      [&](const std::string& n) {
        const auto* f = table.find(n);
        return f ? race_fractions(table, *f)[static_cast<int>(group)] : kNaN;
      },
      step);
}

// ---- representation ---------------------------------------------------------

struct Student {
  std::string author_id;
  std::string discipline;
  int year = 0;
  Gender gender = Gender::Unknown;
  Race race = Race::Unknown;
};

struct RepresentationStats {
  double pct_same_gender = kNaN;  // NaN when the student's own label is unknown
  double pct_same_race = kNaN;
  std::optional<bool> gender_minority;
  std::optional<bool> racial_minority;
};

/// Stats for every student, in input order, computed within (discipline, year).
inline std::vector<RepresentationStats> representation_stats(const std::vector<Student>& students) {
  using Cell = std::pair<std::string, int>;
  std::map<Cell, std::array<std::int64_t, 2>> gender_counts;
  std::map<Cell, std::array<std::int64_t, 3>> race_counts;
  for (const auto& s : students) {
    const Cell c{s.discipline, s.year};
    if (s.gender != Gender::Unknown) ++gender_counts[c][static_cast<int>(s.gender)];
    if (s.race != Race::Unknown) ++race_counts[c][static_cast<int>(s.race)];
  }
  auto fill = [](const auto& counts, int own, double& share, std::optional<bool>& minority) {
    std::int64_t total = 0, largest = 0;
    for (auto n : counts) {
      total += n;
      largest = std::max(largest, n);
    }
    share = static_cast<double>(counts[own]) / static_cast<double>(total);
    minority = counts[own] < largest;
  };
  std::vector<RepresentationStats> out(students.size());
  for (std::size_t i = 0; i < students.size(); ++i) {
    const auto& s = students[i];
    const Cell c{s.discipline, s.year};
    if (s.gender != Gender::Unknown)
      fill(gender_counts.at(c), static_cast<int>(s.gender), out[i].pct_same_gender, out[i].gender_minority);
    if (s.race != Race::Unknown)
      fill(race_counts.at(c), static_cast<int>(s.race), out[i].pct_same_race, out[i].racial_minority);
  }
  return out;
}

struct UnknownShares {
  std::int64_t n = 0;
  double gender = kNaN;
  double race = kNaN;
};

inline UnknownShares unknown_shares(const std::vector<Student>& students) {
  UnknownShares u;
  u.n = static_cast<std::int64_t>(students.size());
  if (students.empty()) return u;
  double g = 0, r = 0;
  for (const auto& s : students) {
    g += s.gender == Gender::Unknown;
    r += s.race == Race::Unknown;
  }
  u.gender = g / static_cast<double>(u.n);
  u.race = r / static_cast<double>(u.n);
  return u;
}

inline void write_labels(std::ostream& os, const std::vector<Student>& students) {
  csv::write_row(os, {"author_id", "gender", "race"});
  for (const auto& s : students) csv::write_row(os, {s.author_id, to_string(s.gender), to_string(s.race)});
}

struct AuthorLabel {
  Gender gender = Gender::Unknown;
  Race race = Race::Unknown;
};

inline std::map<std::string, AuthorLabel> read_labels(std::istream& in, const std::string& what = "labels") {
  auto t = csv::read(in, what);
  csv::expect_header(t, {"author_id", "gender", "race"}, what);
  std::map<std::string, AuthorLabel> out;
  for (const auto& r : t.rows) out[r[0]] = {parse_gender(trim(r[1])), parse_race(trim(r[2]))};
  return out;
}

}  // namespace linkmine::demog
