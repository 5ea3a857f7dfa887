#pragma once

// Weighted regression: NB2 count models with offsets, logistic and linear
// models with dummy-coded fixed effects, marginal effects and Wald tests.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "linkmine/common.hpp"
#include "linkmine/csv.hpp"

namespace linkmine::stats {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---- data ------------------------------------------------------------------

inline bool is_missing(std::string_view s) {
  const auto t = trim(s);
  return t.empty() || t == "NA" || t == "nan" || t == "NaN";
}

/// Column store of string cells with numeric views. Missing cells are empty,
/// "NA" or "nan" and read as NaN.
class DataTable {
 public:
  DataTable() = default;
  explicit DataTable(const csv::Table& t) {
    rows_ = t.rows.size();
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      std::vector<std::string> col;
      col.reserve(rows_);
      for (const auto& r : t.rows) col.push_back(trim(r[c]));
      add_text(t.header[c], std::move(col));
    }
  }

  std::size_t rows() const { return rows_; }
  const std::vector<std::string>& names() const { return names_; }
  bool has(const std::string& name) const { return cells_.count(name) > 0; }

  void add_text(const std::string& name, std::vector<std::string> values) {
    check_size(values.size());
    if (!has(name)) names_.push_back(name);
    cells_[name] = std::move(values);
  }

  void add_numeric(const std::string& name, const std::vector<double>& values) {
    check_size(values.size());
    std::vector<std::string> col;
    for (double v : values) col.push_back(format_double(v));
    add_text(name, std::move(col));
  }

  const std::vector<std::string>& text(const std::string& name) const {
    auto it = cells_.find(name);
    if (it == cells_.end()) throw InvalidInput("data: no column '" + name + "'");
    return it->second;
  }

  std::vector<double> numeric(const std::string& name) const {
    const auto& col = text(name);
    std::vector<double> out(col.size(), kNaN);
    for (std::size_t i = 0; i < col.size(); ++i) {
      if (is_missing(col[i])) continue;
      if (!parse_double(col[i], out[i]))
        throw InvalidInput("data: column '" + name + "' row " + std::to_string(i + 1) + " is not numeric: '" +
                           col[i] + "'");
    }
    return out;
  }

  void write_csv(std::ostream& os) const {
    csv::write_row(os, names_);
    for (std::size_t r = 0; r < rows_; ++r) {
      std::vector<std::string> row;
      for (const auto& n : names_) row.push_back(cells_.at(n)[r]);
      csv::write_row(os, row);
    }
  }

 private:
  void check_size(std::size_t n) {
    if (names_.empty()) rows_ = n;
    if (n != rows_) throw InvalidInput("data: column length mismatch");
  }

  std::size_t rows_ = 0;
  std::vector<std::string> names_;
  std::map<std::string, std::vector<std::string>> cells_;
};

inline DataTable read_table_file(const std::string& path) { return DataTable(csv::read_file(path)); }

// ---- model specification -----------------------------------------------------

enum class Family { NegBin, Ols, Logistic };
enum class SeType { Robust, Classical };

inline Family parse_family(std::string_view s) {
  if (s == "negbin") return Family::NegBin;
  if (s == "ols") return Family::Ols;
  if (s == "logistic") return Family::Logistic;
  throw InvalidInput("unknown model family '" + std::string(s) + "'");
}
inline const char* to_string(Family f) {
  switch (f) {
    case Family::NegBin: return "negbin";
    case Family::Ols: return "ols";
    default: return "logistic";
  }
}

struct ModelSpec {
  std::string name;
  Family family = Family::Ols;
  std::string outcome;
  std::vector<std::string> covariates;
  std::vector<std::pair<std::string, std::string>> interactions;
  std::vector<std::string> fixed_effects;
  std::optional<std::string> offset;   // logged internally; negbin only
  std::optional<std::string> weights;
  // "complete" (always implied), "positive:<var>" or the aliases
  // novelty / uptake / distal.
  std::vector<std::string> filters;
  SeType se = SeType::Robust;
  std::map<std::string, std::string> reference_levels;  // factor -> level; default first sorted
};

/// Parses "a:b" into an interaction pair.
inline std::pair<std::string, std::string> parse_interaction(std::string_view s) {
  const auto parts = split(s, ':');
  if (parts.size() != 2 || trim(parts[0]).empty() || trim(parts[1]).empty())
    throw InvalidInput("interaction must look like 'a:b', got '" + std::string(s) + "'");
  return {trim(parts[0]), trim(parts[1])};
}

namespace detail {

// Variables that must be strictly positive under a filter.
inline std::vector<std::string> positive_vars(const std::string& filter) {
  if (filter == "complete" || filter == "novelty") return {};
  if (filter == "uptake") return {"n_new_links", "total_uptake"};
  if (filter == "distal") return {"n_new_links"};
  if (filter.rfind("positive:", 0) == 0) {
    std::vector<std::string> out;
    for (auto& v : split(filter.substr(9), ','))
      if (!trim(v).empty()) out.push_back(trim(v));
    return out;
  }
  throw InvalidInput("unknown inclusion filter '" + filter + "'");
}

}  // namespace detail

// ---- design ------------------------------------------------------------------

struct Term {
  enum Kind { Intercept, Covariate, Interaction, Dummy } kind = Intercept;
  std::string a, b;  // variables, or factor and level for a dummy
};

struct DroppedCell {
  std::string factor, level;
  std::size_t rows = 0;
};

struct Design {
  Family family = Family::Ols;
  std::vector<std::string> columns;
  std::vector<Term> terms;
  MatrixXd X;
  VectorXd y, offset, weights;  // weights normalized to mean 1
  bool has_offset = false;
  std::vector<std::size_t> rows;  // source rows kept
  std::map<std::string, VectorXd> values;  // raw numeric variables over kept rows
  std::set<std::string> sample_columns;    // every column of the source table
  std::vector<DroppedCell> dropped;
  std::size_t excluded = 0;  // rows removed by filters or missing data

  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
  int column(const std::string& name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == name) return static_cast<int>(j);
    return -1;
  }
};

inline std::string dummy_name(const std::string& factor, const std::string& level) {
  return factor + "[" + level + "]";
}

/// Names of columns that are linear combinations of earlier ones.
inline std::vector<std::string> collinear_columns(const MatrixXd& X, const std::vector<std::string>& names) {
  std::vector<std::string> out;
  const Eigen::Index n = X.rows();
  MatrixXd basis(n, 0);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    VectorXd v = X.col(j);
    const double norm0 = v.norm();
    if (basis.cols() > 0) {
      // two passes of Gram-Schmidt for stability
      for (int pass = 0; pass < 2; ++pass) v -= basis * (basis.transpose() * v);
    }
    if (norm0 == 0 || v.norm() <= 1e-9 * norm0) {
      out.push_back(names[static_cast<std::size_t>(j)]);
      continue;
    }
    basis.conservativeResize(n, basis.cols() + 1);
    basis.col(basis.cols() - 1) = v / v.norm();
  }
  return out;
}

inline Design build_design(const DataTable& data, const ModelSpec& spec) {
  if (spec.outcome.empty()) throw InvalidInput("model '" + spec.name + "': no outcome");
  if (spec.offset && spec.family != Family::NegBin)
    throw InvalidInput("model '" + spec.name + "': offsets are only allowed for negbin");

  std::vector<std::string> numeric_vars{spec.outcome};
  for (const auto& c : spec.covariates) numeric_vars.push_back(c);
  for (const auto& [a, b] : spec.interactions) {
    numeric_vars.push_back(a);
    numeric_vars.push_back(b);
  }
  if (spec.offset) numeric_vars.push_back(*spec.offset);
  if (spec.weights) numeric_vars.push_back(*spec.weights);
  std::vector<std::string> positive;
  for (const auto& f : spec.filters)
    for (auto& v : detail::positive_vars(f)) {
      positive.push_back(v);
      numeric_vars.push_back(v);
    }
  std::sort(numeric_vars.begin(), numeric_vars.end());
  numeric_vars.erase(std::unique(numeric_vars.begin(), numeric_vars.end()), numeric_vars.end());

  std::map<std::string, std::vector<double>> num;
  for (const auto& v : numeric_vars) num[v] = data.numeric(v);
  std::map<std::string, const std::vector<std::string>*> fac;
  for (const auto& f : spec.fixed_effects) fac[f] = &data.text(f);

  Design d;
  d.family = spec.family;
  d.sample_columns.insert(data.names().begin(), data.names().end());
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    bool ok = true;
    for (const auto& v : numeric_vars) ok = ok && std::isfinite(num[v][r]);
    for (const auto& v : positive) ok = ok && num[v][r] > 0;
    for (const auto& [f, col] : fac) ok = ok && !is_missing((*col)[r]);
    if (ok) keep.push_back(r);
  }
  d.excluded = data.rows() - keep.size();

  const auto& y = num[spec.outcome];
  for (std::size_t r : keep) {
    if (spec.family == Family::Logistic && y[r] != 0 && y[r] != 1)
      throw InvalidInput("model '" + spec.name + "': logistic outcome must be 0/1");
    if (spec.family == Family::NegBin && (y[r] < 0 || y[r] != std::floor(y[r])))
      throw InvalidInput("model '" + spec.name + "': negbin outcome must be a non-negative integer");
    if (spec.offset && !(num[*spec.offset][r] > 0))
      throw InvalidInput("model '" + spec.name + "': offset variable must be positive");
    if (spec.weights && !(num[*spec.weights][r] > 0))
      throw InvalidInput("model '" + spec.name + "': weights must be positive");
  }

  // Logistic fits cannot use cells whose outcome never varies; dropping one
  // cell can make another constant, so repeat until stable.
  if (spec.family == Family::Logistic && !spec.fixed_effects.empty()) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& f : spec.fixed_effects) {
        std::map<std::string, std::pair<std::size_t, double>> cell;  // rows, sum y
        for (std::size_t r : keep) {
          auto& c = cell[(*fac[f])[r]];
          ++c.first;
          c.second += y[r];
        }
        std::set<std::string> constant;
        for (const auto& [lvl, c] : cell)
          if (c.second == 0 || c.second == static_cast<double>(c.first)) {
            constant.insert(lvl);
            d.dropped.push_back({f, lvl, c.first});
          }
        if (constant.empty()) continue;
        std::erase_if(keep, [&](std::size_t r) { return constant.count((*fac[f])[r]) > 0; });
        changed = true;
      }
    }
  }
  if (keep.empty()) throw InvalidInput("model '" + spec.name + "': no rows left after filtering");

  d.columns.push_back("(Intercept)");
  d.terms.push_back({Term::Intercept, "", ""});
  for (const auto& c : spec.covariates) {
    d.columns.push_back(c);
    d.terms.push_back({Term::Covariate, c, ""});
  }
  for (const auto& [a, b] : spec.interactions) {
    d.columns.push_back(a + ":" + b);
    d.terms.push_back({Term::Interaction, a, b});
  }
  for (const auto& f : spec.fixed_effects) {
    std::set<std::string> levels;
    for (std::size_t r : keep) levels.insert((*fac[f])[r]);
    std::string ref = *levels.begin();
    if (auto it = spec.reference_levels.find(f); it != spec.reference_levels.end()) {
      if (!levels.count(it->second))
        throw InvalidInput("model '" + spec.name + "': reference level '" + it->second + "' not present for " + f);
      ref = it->second;
    }
    for (const auto& l : levels)
      if (l != ref) {
        d.columns.push_back(dummy_name(f, l));
        d.terms.push_back({Term::Dummy, f, l});
      }
  }

  const auto n = static_cast<Eigen::Index>(keep.size());
  const auto p = static_cast<Eigen::Index>(d.columns.size());
  d.X.resize(n, p);
  d.y.resize(n);
  d.offset = VectorXd::Zero(n);
  d.weights = VectorXd::Ones(n);
  d.rows = keep;
  for (const auto& v : numeric_vars) d.values[v].resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t r = keep[static_cast<std::size_t>(i)];
    for (const auto& v : numeric_vars) d.values[v](i) = num[v][r];
    d.y(i) = y[r];
    for (Eigen::Index j = 0; j < p; ++j) {
      const Term& t = d.terms[static_cast<std::size_t>(j)];
      switch (t.kind) {
        case Term::Intercept: d.X(i, j) = 1; break;
        case Term::Covariate: d.X(i, j) = num[t.a][r]; break;
        case Term::Interaction: d.X(i, j) = num[t.a][r] * num[t.b][r]; break;
        case Term::Dummy: d.X(i, j) = (*fac[t.a])[r] == t.b ? 1.0 : 0.0; break;
      }
    }
    if (spec.offset) d.offset(i) = std::log(num[*spec.offset][r]);
    if (spec.weights) d.weights(i) = num[*spec.weights][r];
  }
  d.has_offset = spec.offset.has_value();
  d.weights *= static_cast<double>(n) / d.weights.sum();

  if (auto bad = collinear_columns(d.X, d.columns); !bad.empty())
    throw InvalidInput("model '" + spec.name + "': collinear design columns: " + join(bad, ", "));
  return d;
}

// ---- fitting -----------------------------------------------------------------

struct FitOptions {
  int max_iterations = 200;
  double tolerance = 1e-9;  // relative log-likelihood change
  SeType se = SeType::Robust;
  std::map<std::string, double> fixed;  // coefficients held at a value
};

struct FitResult {
  Family family = Family::Ols;
  std::vector<std::string> columns;
  VectorXd beta, se;
  MatrixXd cov;  // covariance of beta; fixed coefficients have zero rows
  double alpha = kNaN, alpha_se = kNaN;  // negbin dispersion
  double loglik = kNaN;
  double r_squared = kNaN;  // ols only
  int iterations = 0;
  bool converged = false;
  bool separation = false;
  double max_abs_score = kNaN;  // at the final estimate, free parameters
  std::vector<double> loglik_trace;
  std::size_t n = 0;
  std::vector<DroppedCell> dropped;
  SeType se_type = SeType::Robust;

  int index(const std::string& name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == name) return static_cast<int>(j);
    return -1;
  }
  double coef(const std::string& name) const {
    const int j = index(name);
    if (j < 0) throw InvalidInput("fit has no coefficient '" + name + "'");
    return beta(j);
  }
  double std_error(const std::string& name) const {
    const int j = index(name);
    if (j < 0) throw InvalidInput("fit has no coefficient '" + name + "'");
    return se(j);
  }
};

inline double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

namespace detail {

// Splits the design into free columns and an offset carrying fixed ones.
struct FreeDesign {
  MatrixXd X;
  VectorXd offset;
  std::vector<int> free;  // original index of each free column
  VectorXd fixed_beta;    // full-length, zero for free columns
};

inline FreeDesign free_design(const Design& d, const FitOptions& opt) {
  FreeDesign f;
  f.offset = d.offset;
  f.fixed_beta = VectorXd::Zero(static_cast<Eigen::Index>(d.p()));
  std::vector<bool> is_fixed(d.p(), false);
  for (const auto& [name, value] : opt.fixed) {
    const int j = d.column(name);
    if (j < 0) throw InvalidInput("cannot fix unknown coefficient '" + name + "'");
    is_fixed[static_cast<std::size_t>(j)] = true;
    f.fixed_beta(j) = value;
    f.offset += value * d.X.col(j);
  }
  for (std::size_t j = 0; j < d.p(); ++j)
    if (!is_fixed[j]) f.free.push_back(static_cast<int>(j));
  f.X.resize(d.X.rows(), static_cast<Eigen::Index>(f.free.size()));
  for (std::size_t k = 0; k < f.free.size(); ++k) f.X.col(static_cast<Eigen::Index>(k)) = d.X.col(f.free[k]);
  return f;
}

inline void expand(FitResult& r, const Design& d, const FreeDesign& f, const VectorXd& b, const MatrixXd& cov) {
  const auto p = static_cast<Eigen::Index>(d.p());
  r.columns = d.columns;
  r.beta = f.fixed_beta;
  r.cov = MatrixXd::Zero(p, p);
  for (std::size_t k = 0; k < f.free.size(); ++k) {
    r.beta(f.free[k]) = b(static_cast<Eigen::Index>(k));
    for (std::size_t l = 0; l < f.free.size(); ++l)
      r.cov(f.free[k], f.free[l]) = cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
  }
  r.se = r.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  r.n = d.n();
  r.dropped = d.dropped;
  r.family = d.family;
}

// Inverse of a symmetric positive definite matrix, or throw.
inline MatrixXd spd_inverse(const MatrixXd& A, const char* what) {
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw InvalidInput(std::string(what) + ": information matrix is singular");
  return llt.solve(MatrixXd::Identity(A.rows(), A.cols()));
}

inline MatrixXd sandwich(const MatrixXd& bread_inv, const MatrixXd& scores) {
  return bread_inv * (scores.transpose() * scores) * bread_inv;
}

// Sums over j < y of log1p(a j), 1/(1 + a j) and j/(1 + a j)^2.
struct NbSums {
  double log_terms = 0, inv = 0, sq = 0;
};

inline NbSums nb_sums(double y, double a) {
  NbSums s;
  const auto n = static_cast<long long>(y);
  if (n <= 2000) {
    for (long long j = 0; j < n; ++j) {
      const double t = 1.0 + a * static_cast<double>(j);
      s.log_terms += std::log1p(a * static_cast<double>(j));
      s.inv += 1.0 / t;
      s.sq += static_cast<double>(j) / (t * t);
    }
    return s;
  }
  using boost::math::digamma;
  using boost::math::trigamma;
  const double r = 1.0 / a;
  const double dpsi = digamma(y + r) - digamma(r);
  s.log_terms = y * std::log(a) + std::lgamma(y + r) - std::lgamma(r);
  s.inv = r * dpsi;
  s.sq = r * r * (dpsi - r * (trigamma(r) - trigamma(y + r)));
  return s;
}

struct NbEval {
  double loglik = 0;
  VectorXd grad;
  MatrixXd hess;
  MatrixXd scores;  // per-observation gradient rows
};

// NB2 log-likelihood in (beta, log alpha) with analytic derivatives.
inline NbEval nb_eval(const MatrixXd& X, const VectorXd& y, const VectorXd& off, const VectorXd& w,
                      const VectorXd& beta, double log_alpha, bool derivatives, bool keep_scores = false) {
  const auto n = X.rows(), p = X.cols();
  const double a = std::exp(log_alpha);
  NbEval e;
  if (derivatives) {
    e.grad = VectorXd::Zero(p + 1);
    e.hess = MatrixXd::Zero(p + 1, p + 1);
  }
  if (keep_scores) e.scores.resize(n, p + 1);
  const VectorXd eta = X * beta + off;
  VectorXd hb;
  if (derivatives) hb.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = std::exp(eta(i)), yi = y(i), wi = w(i);
    const double am = a * mu, l1 = std::log1p(am), den = 1 + am;
    const NbSums s = nb_sums(yi, a);
    e.loglik += wi * (s.log_terms - std::lgamma(yi + 1) + yi * eta(i) - (yi + 1.0 / a) * l1);
    if (!derivatives) continue;
    const double gb = (yi - mu) / den;
    const double ga = -s.inv + l1 / a + (yi - mu) / den;
    if (keep_scores) {
      e.scores.row(i).head(p) = wi * gb * X.row(i);
      e.scores(i, p) = wi * ga;
    }
    e.grad.head(p) += wi * gb * X.row(i).transpose();
    e.grad(p) += wi * ga;
    hb(i) = wi * mu * (1 + a * yi) / (den * den);
    const double hba = -wi * (yi - mu) * am / (den * den);
    e.hess.col(p).head(p) += hba * X.row(i).transpose();
    const double haa = wi * (a * s.sq + (mu / den - l1 / a) - a * (yi - mu) * mu / (den * den));
    e.hess(p, p) += haa;
  }
  if (derivatives) {
    e.hess.topLeftCorner(p, p) = -(X.transpose() * hb.asDiagonal() * X);
    e.hess.row(p).head(p) = e.hess.col(p).head(p).transpose();
  }
  return e;
}

// Poisson IRLS start for count models.
inline VectorXd poisson_start(const MatrixXd& X, const VectorXd& y, const VectorXd& off, const VectorXd& w) {
  const double ybar = (w.array() * y.array()).sum() / w.sum();
  if (!(ybar > 0)) throw InvalidInput("negbin: outcome is zero everywhere");
  VectorXd beta = VectorXd::Zero(X.cols());
  // start from the mean rate on the intercept-equivalent scale
  VectorXd z = (y.array() + 0.1).log().matrix() - off;
  beta = (X.transpose() * w.asDiagonal() * X).ldlt().solve(X.transpose() * (w.array() * z.array()).matrix());
  for (int it = 0; it < 8; ++it) {
    const VectorXd eta = X * beta + off;
    const VectorXd mu = eta.array().exp();
    const VectorXd wz = w.array() * mu.array();
    const VectorXd zz = (eta - off).array() + (y - mu).array() / mu.array();
    VectorXd next = (X.transpose() * wz.asDiagonal() * X).ldlt().solve(X.transpose() * (wz.array() * zz.array()).matrix());
    if (!next.allFinite()) break;
    beta = next;
  }
  return beta;
}

}  // namespace detail

/// NB2 (variance mu + alpha mu^2) by Newton's method on (beta, log alpha)
/// with step halving; the log-likelihood never decreases between accepted steps.
inline FitResult fit_negbin(const Design& d, const FitOptions& opt = {}) {
  const auto f = detail::free_design(d, opt);
  const auto p = f.X.cols();
  const double kMinLogAlpha = -30;
  VectorXd beta = detail::poisson_start(f.X, d.y, f.offset, d.weights);
  double la;
  {
    const VectorXd mu = (f.X * beta + f.offset).array().exp();
    const double num = ((d.y - mu).array().square() - d.y.array()).matrix().dot(d.weights);
    const double den = (mu.array().square() * d.weights.array()).sum();
    la = std::log(std::clamp(num / den, 1e-4, 10.0));
  }
  FitResult r;
  r.se_type = opt.se;
  auto cur = detail::nb_eval(f.X, d.y, f.offset, d.weights, beta, la, true);
  r.loglik_trace.push_back(cur.loglik);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    r.iterations = it;
    MatrixXd info = -cur.hess;
    Eigen::LLT<MatrixXd> llt(info);
    VectorXd step;
    if (llt.info() == Eigen::Success) {
      step = llt.solve(cur.grad);
    } else {
      // not concave here: damp towards gradient ascent
      const double lam = info.diagonal().cwiseAbs().maxCoeff() + 1.0;
      step = (info + lam * MatrixXd::Identity(p + 1, p + 1)).ldlt().solve(cur.grad);
    }
    double t = 1;
    bool accepted = false;
    detail::NbEval next;
    VectorXd nb;
    double nla = la;
    for (int h = 0; h < 50; ++h, t *= 0.5) {
      nb = beta + t * step.head(p);
      nla = std::max(kMinLogAlpha, la + t * step(p));
      next = detail::nb_eval(f.X, d.y, f.offset, d.weights, nb, nla, false);
      if (std::isfinite(next.loglik) && next.loglik >= cur.loglik) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double change = std::abs(next.loglik - cur.loglik) / (std::abs(cur.loglik) + 1e-12);
    beta = nb;
    la = nla;
    cur = detail::nb_eval(f.X, d.y, f.offset, d.weights, beta, la, true);
    r.loglik_trace.push_back(cur.loglik);
    const double decrement = std::abs(cur.grad.dot(step)) / (std::abs(cur.loglik) + 1e-12);
    if (change < opt.tolerance && decrement < 1e-6) {
      r.converged = true;
      break;
    }
  }
  auto fin = detail::nb_eval(f.X, d.y, f.offset, d.weights, beta, la, true, true);
  // at the log-alpha floor the dispersion is on its boundary; its score is
  // excluded from the convergence summary
  const bool boundary = la <= kMinLogAlpha + 1e-9;
  r.max_abs_score = boundary ? fin.grad.head(p).cwiseAbs().maxCoeff() : fin.grad.cwiseAbs().maxCoeff();
  r.loglik = fin.loglik;
  r.alpha = std::exp(la);

  MatrixXd cov_full;
  const Eigen::Index q = boundary ? p : p + 1;
  MatrixXd info = -fin.hess.topLeftCorner(q, q);
  MatrixXd inv = detail::spd_inverse(info, "negbin");
  cov_full = opt.se == SeType::Robust ? detail::sandwich(inv, fin.scores.leftCols(q)) : inv;
  detail::expand(r, d, f, beta, cov_full.topLeftCorner(p, p));
  r.alpha_se = boundary ? 0.0 : r.alpha * std::sqrt(std::max(0.0, cov_full(p, p)));
  return r;
}

inline double logistic_loglik(const VectorXd& y, const VectorXd& eta, const VectorXd& w) {
  double ll = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    // log p = -log1p(exp(-eta)), log(1-p) = -log1p(exp(eta))
    const double e = eta(i);
    const double lp = e >= 0 ? -std::log1p(std::exp(-e)) : e - std::log1p(std::exp(e));
    const double lq = lp - e;
    ll += w(i) * (y(i) * lp + (1 - y(i)) * lq);
  }
  return ll;
}

inline double inv_logit(double e) {
  return e >= 0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
}

/// Weighted logistic regression by IRLS with step halving.
inline FitResult fit_logistic(const Design& d, const FitOptions& opt = {}) {
  const auto f = detail::free_design(d, opt);
  const auto n = f.X.rows(), p = f.X.cols();
  const auto& w = d.weights;
  VectorXd beta = VectorXd::Zero(p);
  FitResult r;
  r.se_type = opt.se;
  double ll = logistic_loglik(d.y, f.X * beta + f.offset, w);
  r.loglik_trace.push_back(ll);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    r.iterations = it;
    const VectorXd eta = f.X * beta + f.offset;
    VectorXd pr(n), wv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      pr(i) = inv_logit(eta(i));
      wv(i) = w(i) * pr(i) * (1 - pr(i));
    }
    const VectorXd grad = f.X.transpose() * (w.array() * (d.y - pr).array()).matrix();
    const MatrixXd info = f.X.transpose() * wv.asDiagonal() * f.X;
    Eigen::LDLT<MatrixXd> ldlt(info);
    VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;
    double t = 1, nll = ll;
    VectorXd nb;
    bool accepted = false;
    for (int h = 0; h < 50; ++h, t *= 0.5) {
      nb = beta + t * step;
      nll = logistic_loglik(d.y, f.X * nb + f.offset, w);
      if (std::isfinite(nll) && nll >= ll) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double change = std::abs(nll - ll) / (std::abs(ll) + 1e-12);
    beta = nb;
    ll = nll;
    r.loglik_trace.push_back(ll);
    if (change < opt.tolerance && std::abs(grad.dot(step)) < 1e-6 * (std::abs(ll) + 1)) {
      r.converged = true;
      break;
    }
  }
  const VectorXd eta = f.X * beta + f.offset;
  VectorXd pr(n), wv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pr(i) = inv_logit(eta(i));
    wv(i) = w(i) * pr(i) * (1 - pr(i));
  }
  const VectorXd resid = (w.array() * (d.y - pr).array()).matrix();
  r.max_abs_score = (f.X.transpose() * resid).cwiseAbs().maxCoeff();
  r.loglik = logistic_loglik(d.y, eta, w);
  // diverging coefficients: fitted probabilities pinned at 0 or 1
  const double extreme = eta.cwiseAbs().maxCoeff();
  if (beta.cwiseAbs().maxCoeff() > 25 || extreme > 35) {
    r.separation = true;
    r.converged = false;
  }
  const MatrixXd info = f.X.transpose() * wv.asDiagonal() * f.X;
  MatrixXd cov;
  try {
    const MatrixXd inv = detail::spd_inverse(info, "logistic");
    cov = opt.se == SeType::Robust ? detail::sandwich(inv, resid.asDiagonal() * f.X) : inv;
  } catch (const InvalidInput&) {
    if (!r.separation) throw;
    cov = MatrixXd::Constant(p, p, kNaN);
  }
  detail::expand(r, d, f, beta, cov);
  return r;
}

/// Weighted least squares. Robust errors are HC1.
inline FitResult fit_ols(const Design& d, const FitOptions& opt = {}) {
  const auto f = detail::free_design(d, opt);
  const auto n = f.X.rows(), p = f.X.cols();
  const auto& w = d.weights;
  const VectorXd sw = w.cwiseSqrt();
  const MatrixXd Xs = sw.asDiagonal() * f.X;
  const VectorXd ys = sw.asDiagonal() * (d.y - f.offset);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Xs);
  if (qr.rank() < p) throw InvalidInput("ols: design is rank deficient");
  const VectorXd beta = qr.solve(ys);
  const VectorXd resid = d.y - f.offset - f.X * beta;
  const double rss = (w.array() * resid.array().square()).sum();
  const double ybar = (w.array() * d.y.array()).sum() / w.sum();
  const double tss = (w.array() * (d.y.array() - ybar).square()).sum();

  FitResult r;
  r.se_type = opt.se;
  r.iterations = 1;
  r.converged = true;
  r.r_squared = tss > 0 ? 1 - rss / tss : kNaN;
  const double s2_ml = rss / static_cast<double>(n);
  // weights act as frequencies, which sum to n after normalization
  r.loglik = s2_ml > 0 ? -0.5 * static_cast<double>(n) * (std::log(2 * M_PI * s2_ml) + 1)
                       : std::numeric_limits<double>::infinity();
  r.loglik_trace = {r.loglik};
  r.max_abs_score = (f.X.transpose() * (w.array() * resid.array()).matrix()).cwiseAbs().maxCoeff();
  const MatrixXd inv = detail::spd_inverse(Xs.transpose() * Xs, "ols");
  MatrixXd cov;
  const double dof = static_cast<double>(n - p);
  if (dof <= 0) {
    cov = MatrixXd::Constant(p, p, kNaN);
  } else if (opt.se == SeType::Robust) {
    cov = detail::sandwich(inv, (w.array() * resid.array()).matrix().asDiagonal() * f.X) *
          (static_cast<double>(n) / dof);
  } else {
    cov = inv * (rss / dof);
  }
  detail::expand(r, d, f, beta, cov);
  return r;
}

inline FitResult fit(const Design& d, const FitOptions& opt = {}) {
  switch (d.family) {
    case Family::NegBin: return fit_negbin(d, opt);
    case Family::Logistic: return fit_logistic(d, opt);
    default: return fit_ols(d, opt);
  }
}

inline FitResult fit_model(const DataTable& data, const ModelSpec& spec, FitOptions opt = {}) {
  opt.se = spec.se;
  return fit(build_design(data, spec), opt);
}

// ---- predictions and marginal effects --------------------------------------------

/// Overrides of raw variable values used when recomputing design rows.
using Setting = std::map<std::string, double>;

namespace detail {

inline double raw_value(const Design& d, const std::string& var, Eigen::Index i, const Setting& set) {
  if (auto it = set.find(var); it != set.end()) return it->second;
  return d.values.at(var)(i);
}

inline double linear_predictor(const Design& d, const VectorXd& beta, Eigen::Index i, const Setting& set) {
  double eta = d.offset(i);
  for (std::size_t j = 0; j < d.terms.size(); ++j) {
    const Term& t = d.terms[j];
    const auto jj = static_cast<Eigen::Index>(j);
    double x = d.X(i, jj);
    if (t.kind == Term::Covariate && set.count(t.a)) x = set.at(t.a);
    if (t.kind == Term::Interaction && (set.count(t.a) || set.count(t.b)))
      x = raw_value(d, t.a, i, set) * raw_value(d, t.b, i, set);
    eta += beta(jj) * x;
  }
  return eta;
}

// d eta / d var at row i.
inline double eta_slope(const Design& d, const VectorXd& beta, const std::string& var, Eigen::Index i) {
  double s = 0;
  for (std::size_t j = 0; j < d.terms.size(); ++j) {
    const Term& t = d.terms[j];
    const double b = beta(static_cast<Eigen::Index>(j));
    if (t.kind == Term::Covariate && t.a == var) s += b;
    if (t.kind == Term::Interaction) {
      if (t.a == var) s += b * d.values.at(t.b)(i);
      if (t.b == var) s += b * d.values.at(t.a)(i);
    }
  }
  return s;
}

inline double response(Family f, double eta) {
  switch (f) {
    case Family::NegBin: return std::exp(eta);
    case Family::Logistic: return inv_logit(eta);
    default: return eta;
  }
}

inline double response_slope(Family f, double eta) {
  switch (f) {
    case Family::NegBin: return std::exp(eta);
    case Family::Logistic: {
      const double p = inv_logit(eta);
      return p * (1 - p);
    }
    default: return 1.0;
  }
}

inline bool in_model(const Design& d, const std::string& var) {
  for (const auto& t : d.terms)
    if ((t.kind == Term::Covariate || t.kind == Term::Interaction) && (t.a == var || t.b == var)) return true;
  return false;
}

inline bool is_binary(const Design& d, const std::string& var) {
  const auto& v = d.values.at(var);
  return (v.array() == 0.0 || v.array() == 1.0).all();
}

template <class PerRow>
double weighted_mean(const Design& d, PerRow per_row) {
  double s = 0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d.n()); ++i) s += d.weights(i) * per_row(i);
  return s / d.weights.sum();
}

// Numeric gradient of a scalar function of beta, for the delta method.
inline VectorXd numeric_gradient(const std::function<double(const VectorXd&)>& g, const VectorXd& beta) {
  VectorXd out(beta.size());
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(beta(j)));
    VectorXd up = beta, down = beta;
    up(j) += h;
    down(j) -= h;
    out(j) = (g(up) - g(down)) / (2 * h);
  }
  return out;
}

}  // namespace detail

/// Mean predicted response over the estimation sample with variables overridden.
inline double average_prediction(const FitResult& fit, const Design& d, const Setting& set, const VectorXd* beta = nullptr) {
  const VectorXd& b = beta ? *beta : fit.beta;
  return detail::weighted_mean(d, [&](Eigen::Index i) {
    return detail::response(fit.family, detail::linear_predictor(d, b, i, set));
  });
}

struct CurvePoint {
  double x = 0;
  double prediction = 0;
  double std_error = 0;
};

struct AmeResult {
  std::string variable;
  double estimate = 0;
  double std_error = 0;
  bool binary = false;
  std::vector<CurvePoint> grid;  // average prediction along the variable
};

/// Average prediction along a grid of values of `var`, with optional extra settings.
inline std::vector<CurvePoint> prediction_curve(const FitResult& fit, const Design& d, const std::string& var,
                                                const std::vector<double>& xs, const Setting& extra = {}) {
  std::vector<CurvePoint> out;
  for (double x : xs) {
    Setting s = extra;
    s[var] = x;
    auto g = [&](const VectorXd& b) { return average_prediction(fit, d, s, &b); };
    const VectorXd J = detail::numeric_gradient(g, fit.beta);
    out.push_back({x, g(fit.beta), std::sqrt(std::max(0.0, J.dot(fit.cov * J)))});
  }
  return out;
}

/// Evenly spaced grid from the sample minimum to maximum of a variable.
inline std::vector<double> variable_grid(const Design& d, const std::string& var, int points = 20) {
  const auto& v = d.values.at(var);
  const double lo = v.minCoeff(), hi = v.maxCoeff();
  std::vector<double> g;
  for (int k = 0; k < points; ++k) g.push_back(points == 1 ? lo : lo + (hi - lo) * k / (points - 1));
  return g;
}

/// Average marginal effect on the response scale: analytic derivative for
/// continuous variables, 1-vs-0 difference for binary ones. Variables present
/// in the sample but not in the model have effect exactly zero.
inline AmeResult average_marginal_effect(const FitResult& fit, const Design& d, const std::string& var,
                                         int grid_points = 20) {
  AmeResult res;
  res.variable = var;
  if (!detail::in_model(d, var)) {
    if (!d.sample_columns.count(var))
      throw InvalidInput("ame: variable '" + var + "' is neither in the model nor the sample");
    return res;
  }
  res.binary = detail::is_binary(d, var);
  std::function<double(const VectorXd&)> g;
  if (res.binary) {
    g = [&](const VectorXd& b) {
      return average_prediction(fit, d, {{var, 1.0}}, &b) - average_prediction(fit, d, {{var, 0.0}}, &b);
    };
  } else if (fit.family == Family::Ols) {
    // linear: the slope averages term by term, exactly beta without interactions
    g = [&](const VectorXd& b) {
      double s = 0;
      for (std::size_t j = 0; j < d.terms.size(); ++j) {
        const Term& t = d.terms[j];
        const double bj = b(static_cast<Eigen::Index>(j));
        if (t.kind == Term::Covariate && t.a == var) s += bj;
        if (t.kind == Term::Interaction) {
          if (t.a == var) s += bj * detail::weighted_mean(d, [&](Eigen::Index i) { return d.values.at(t.b)(i); });
          if (t.b == var) s += bj * detail::weighted_mean(d, [&](Eigen::Index i) { return d.values.at(t.a)(i); });
        }
      }
      return s;
    };
  } else {
    g = [&](const VectorXd& b) {
      return detail::weighted_mean(d, [&](Eigen::Index i) {
        const double eta = detail::linear_predictor(d, b, i, {});
        return detail::response_slope(fit.family, eta) * detail::eta_slope(d, b, var, i);
      });
    };
  }
  res.estimate = g(fit.beta);
  const VectorXd J = detail::numeric_gradient(g, fit.beta);
  res.std_error = std::sqrt(std::max(0.0, J.dot(fit.cov * J)));
  res.grid = prediction_curve(fit, d, var, res.binary ? std::vector<double>{0.0, 1.0} : variable_grid(d, var, grid_points));
  return res;
}

// ---- tests and tables ----------------------------------------------------------

struct WaldTest {
  std::string term;
  double estimate = kNaN, std_error = kNaN, z = kNaN, p_value = kNaN;
};

inline WaldTest wald_test(const FitResult& fit, const std::string& term) {
  WaldTest w;
  w.term = term;
  w.estimate = fit.coef(term);
  w.std_error = fit.std_error(term);
  w.z = w.estimate / w.std_error;
  w.p_value = normal_two_sided_p(w.z);
  return w;
}

struct SlopeTest {
  WaldTest interaction;
  std::vector<CurvePoint> group0, group1;  // predicted curves along the continuous variable
  double median = kNaN, sd = kNaN;
  double gap_at_median = kNaN;       // group1 - group0
  double gap_at_median_2sd = kNaN;
};

/// Wald test on a group x continuous interaction plus the group curves and
/// their gap at the median and at two SDs above it.
inline SlopeTest interaction_slope_test(const FitResult& fit, const Design& d, const std::string& group,
                                        const std::string& continuous, int grid_points = 20) {
  std::string term;
  for (const auto& t : d.terms)
    if (t.kind == Term::Interaction &&
        ((t.a == group && t.b == continuous) || (t.a == continuous && t.b == group)))
      term = t.a + ":" + t.b;
  if (term.empty()) throw InvalidInput("slope test: no interaction between '" + group + "' and '" + continuous + "'");
  SlopeTest st;
  st.interaction = wald_test(fit, term);
  const auto& v = d.values.at(continuous);
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  st.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  const double mean = v.mean();
  st.sd = m > 1 ? std::sqrt((v.array() - mean).square().sum() / static_cast<double>(m - 1)) : 0.0;
  const auto grid = variable_grid(d, continuous, grid_points);
  st.group0 = prediction_curve(fit, d, continuous, grid, {{group, 0.0}});
  st.group1 = prediction_curve(fit, d, continuous, grid, {{group, 1.0}});
  auto gap = [&](double x) {
    return average_prediction(fit, d, {{group, 1.0}, {continuous, x}}) -
           average_prediction(fit, d, {{group, 0.0}, {continuous, x}});
  };
  st.gap_at_median = gap(st.median);
  st.gap_at_median_2sd = gap(st.median + 2 * st.sd);
  return st;
}

struct IrrRow {
  std::string term;
  double irr = kNaN, lower = kNaN, upper = kNaN, p_value = kNaN;
};

inline std::vector<IrrRow> irr_table(const FitResult& fit) {
  std::vector<IrrRow> out;
  for (std::size_t j = 0; j < fit.columns.size(); ++j) {
    const double b = fit.beta(static_cast<Eigen::Index>(j)), s = fit.se(static_cast<Eigen::Index>(j));
    out.push_back({fit.columns[j], std::exp(b), std::exp(b - 1.959963984540054 * s),
                   std::exp(b + 1.959963984540054 * s), normal_two_sided_p(b / s)});
  }
  return out;
}

inline void write_coefficients(std::ostream& os, const std::string& model, const FitResult& fit, bool header = true) {
  if (header) csv::write_row(os, {"model", "term", "estimate", "std_error", "z", "p_value"});
  for (std::size_t j = 0; j < fit.columns.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double z = fit.beta(jj) / fit.se(jj);
    csv::write_row(os, {model, fit.columns[j], format_double(fit.beta(jj)), format_double(fit.se(jj)),
                        format_double(z), format_double(normal_two_sided_p(z))});
  }
  if (fit.family == Family::NegBin)
    csv::write_row(os, {model, "alpha", format_double(fit.alpha), format_double(fit.alpha_se), "NA", "NA"});
}

}  // namespace linkmine::stats
