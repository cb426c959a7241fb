#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vif/errors.hpp"
#include "vif/matrix.hpp"
#include "vif/rng.hpp"

namespace vif {

// Immutable N x p feature matrix with response vector. Everything downstream
// (training, kernels, importance) consumes this container.
struct Dataset {
  Matrix x;
  std::vector<double> y;
  std::vector<std::string> feature_names;

  std::size_t n() const { return x.rows(); }
  std::size_t p() const { return x.cols(); }

  void validate() const {
    if (x.rows() == 0) throw InvalidArgumentError("Dataset: needs at least one row");
    if (y.size() != x.rows()) throw InvalidArgumentError("Dataset: y length != row count");
    if (!x.all_finite()) throw InvalidArgumentError("Dataset: non-finite feature value");
    for (const double v : y)
      if (!std::isfinite(v)) throw InvalidArgumentError("Dataset: non-finite response value");
  }
};

// Which features to drop and the constant each dropped column is set to.
// Replacements are the column means of the *training* portion, so the same
// spec can be reapplied to a holdout without leaking its statistics.
struct DropSpec {
  std::vector<std::size_t> indices;      // sorted, distinct
  std::vector<double> replacement;       // one value per index

  static DropSpec from_training_means(const Dataset& train, std::vector<std::size_t> indices) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    DropSpec spec;
    spec.indices = std::move(indices);
    spec.replacement.reserve(spec.indices.size());
    for (const std::size_t j : spec.indices) {
      if (j >= train.p()) throw InvalidArgumentError("DropSpec: feature index out of range");
      spec.replacement.push_back(mean(train.x.column(j)));
    }
    return spec;
  }
};

inline Dataset drop_features(const Dataset& d, const DropSpec& spec) {
  if (spec.indices.size() != spec.replacement.size())
    throw InvalidArgumentError("drop_features: indices/replacement length mismatch");
  Dataset out = d;
  for (std::size_t k = 0; k < spec.indices.size(); ++k) {
    const std::size_t j = spec.indices[k];
    if (j >= d.p()) throw InvalidArgumentError("drop_features: feature index out of range");
    for (std::size_t i = 0; i < d.n(); ++i) out.x(i, j) = spec.replacement[k];
  }
  return out;
}

struct SplitPlan {
  double q = 0.75;     // fraction of rows in the first part
  RngStream rng;
  SplitPlan(double q, RngStream rng) : q(q), rng(rng) {
    if (!(q > 0.0 && q < 1.0)) throw InvalidArgumentError("SplitPlan: q must lie in (0,1)");
  }
};

// Disjoint row partition; the first part receives round(q*N) rows chosen by
// the plan's rng. Row order inside each part follows the original dataset.
inline std::pair<Dataset, Dataset> split(const Dataset& d, SplitPlan plan) {
  const std::size_t n = d.n();
  if (n < 2) throw InvalidArgumentError("split: needs at least two rows");
  std::size_t n1 = static_cast<std::size_t>(std::llround(plan.q * static_cast<double>(n)));
  n1 = std::min(std::max<std::size_t>(n1, 1), n - 1);

  const std::vector<std::uint32_t> perm = plan.rng.permutation(static_cast<std::uint32_t>(n));
  std::vector<std::uint32_t> first(perm.begin(), perm.begin() + n1);
  std::vector<std::uint32_t> second(perm.begin() + n1, perm.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());

  auto take = [&](const std::vector<std::uint32_t>& rows) {
    Dataset part;
    part.x = Matrix(rows.size(), d.p());
    part.y.resize(rows.size());
    part.feature_names = d.feature_names;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::uint32_t r = rows[i];
      for (std::size_t j = 0; j < d.p(); ++j) part.x(i, j) = d.x(r, j);
      part.y[i] = d.y[r];
    }
    return part;
  };
  return {take(first), take(second)};
}

// ---------------------------------------------------------------------------
// Synthetic generators for the benchmark suite.
// ---------------------------------------------------------------------------

struct CorrelatedLinear {
  Dataset data;
  double true_vi_1;    // beta1^2 (1 - rho^2) sigma_x^2
};

// Linear response with X1, X2 jointly normal at correlation rho and the
// remaining features independent. True importance of X1 has the closed form
// beta1^2 (1 - rho^2) sigma_x^2.
inline CorrelatedLinear gen_correlated_linear(double rho, const std::vector<double>& beta,
                                              double sigma_x, double sigma_eps, std::size_t n,
                                              RngStream rng) {
  if (std::abs(rho) > 1.0) throw InvalidArgumentError("gen_correlated_linear: |rho| > 1");
  if (beta.size() < 2) throw InvalidArgumentError("gen_correlated_linear: need at least 2 features");
  const std::size_t p = beta.size();

  RngStream xs = rng.substream("data");
  RngStream es = rng.substream("noise");

  Dataset d;
  d.x = Matrix(n, p);
  d.y.resize(n);
  const double cross = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = xs.normal();
    const double z2 = xs.normal();
    d.x(i, 0) = sigma_x * z1;
    d.x(i, 1) = sigma_x * (rho * z1 + cross * z2);
    for (std::size_t j = 2; j < p; ++j) d.x(i, j) = sigma_x * xs.normal();
    double yv = 0.0;
    for (std::size_t j = 0; j < p; ++j) yv += d.x(i, j) * beta[j];
    d.y[i] = yv + sigma_eps * es.normal();
  }
  return {std::move(d), beta[0] * beta[0] * (1.0 - rho * rho) * sigma_x * sigma_x};
}

enum class HighDimKind { nn_teacher, linear };

struct HighDimOptions {
  double teacher_weight_sigma = 1.0;   // spread of teacher weights around beta_j
  std::size_t teacher_width = 64;
  double sigma_eps = 0.1;
};

// High-dimensional fixture: beta = (5,4,3,2,1,0,...,0), Corr(X1,X2)=0.5 and
// all other features independent standard normal. The nn-teacher kind runs
// the features through a random ReLU layer; the linear kind is X beta + eps.
inline Dataset gen_highdim(HighDimKind kind, std::size_t p, std::size_t n, RngStream rng,
                           const HighDimOptions& opt = {}) {
  if (p < 6) throw InvalidArgumentError("gen_highdim: p must be at least 6");
  std::vector<double> beta(p, 0.0);
  for (std::size_t j = 0; j < 5; ++j) beta[j] = static_cast<double>(5 - j);

  RngStream xs = rng.substream("data");
  RngStream ws = rng.substream("teacher");
  RngStream es = rng.substream("noise");

  Dataset d;
  d.x = Matrix(n, p);
  d.y.resize(n);
  const double rho = 0.5;
  const double cross = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = xs.normal();
    const double z2 = xs.normal();
    d.x(i, 0) = z1;
    d.x(i, 1) = rho * z1 + cross * z2;
    for (std::size_t j = 2; j < p; ++j) d.x(i, j) = xs.normal();
  }

  if (kind == HighDimKind::linear) {
    for (std::size_t i = 0; i < n; ++i) {
      double yv = 0.0;
      for (std::size_t j = 0; j < p; ++j) yv += d.x(i, j) * beta[j];
      d.y[i] = yv + opt.sigma_eps * es.normal();
    }
    return d;
  }

  // Teacher: W_{:,j} ~ N(beta_j, sigma^2), response V^T relu(W x) with the
  // readout scaled by 1/sqrt(width) to keep y O(1) at any teacher width.
  const std::size_t m = opt.teacher_width;
  Matrix w(m, p);
  std::vector<double> v(m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < p; ++j)
      w(r, j) = beta[j] + opt.teacher_weight_sigma * ws.normal();
  const double vscale = 1.0 / std::sqrt(static_cast<double>(m));
  for (std::size_t r = 0; r < m; ++r) v[r] = vscale * ws.normal();

  for (std::size_t i = 0; i < n; ++i) {
    double yv = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      double h = 0.0;
      const double* wr = w.row_ptr(r);
      for (std::size_t j = 0; j < p; ++j) h += wr[j] * d.x(i, j);
      if (h > 0.0) yv += v[r] * h;
    }
    d.y[i] = yv + opt.sigma_eps * es.normal();
  }
  return d;
}

// Binary response from a logistic model with coefficients 10*(0,1,...,p-1)
// and Corr(X1,X2)=0.5. Responses are stored as 0/1 reals.
inline Dataset gen_logistic(std::size_t p, std::size_t n, RngStream rng) {
  if (p < 2) throw InvalidArgumentError("gen_logistic: p must be at least 2");
  RngStream xs = rng.substream("data");
  RngStream us = rng.substream("label");

  Dataset d;
  d.x = Matrix(n, p);
  d.y.resize(n);
  const double rho = 0.5;
  const double cross = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = xs.normal();
    const double z2 = xs.normal();
    d.x(i, 0) = z1;
    d.x(i, 1) = rho * z1 + cross * z2;
    for (std::size_t j = 2; j < p; ++j) d.x(i, j) = xs.normal();
    double lin = 0.0;
    for (std::size_t j = 0; j < p; ++j) lin += 10.0 * static_cast<double>(j) * d.x(i, j);
    const double prob = 1.0 / (1.0 + std::exp(-lin));
    d.y[i] = us.uniform01() < prob ? 1.0 : 0.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// CSV: comma-separated, UTF-8, header row, all cells numeric, no quoting.
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_cell(const std::string& cell, long row, long col) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end)
    throw ParseError("CSV: cell is not numeric: '" + cell + "'", row, col);
  if (!std::isfinite(value))
    throw ParseError("CSV: cell is not finite: '" + cell + "'", row, col);
  return value;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw ParseError("CSV: cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError("CSV: empty file: " + path);
  std::vector<std::string> header = detail::split_line(line);
  for (auto& h : header) {
    while (!h.empty() && (h.back() == ' ' || h.back() == '\r')) h.pop_back();
    while (!h.empty() && h.front() == ' ') h.erase(h.begin());
  }
  long target_idx = -1;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == target_column) target_idx = static_cast<long>(j);
  if (target_idx < 0) throw ParseError("CSV: target column '" + target_column + "' not found", 1, 1);

  std::vector<std::vector<double>> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> cells = detail::split_line(line);
    if (cells.size() != header.size())
      throw ParseError("CSV: row has " + std::to_string(cells.size()) + " cells, expected " +
                           std::to_string(header.size()),
                       lineno, 1);
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j)
      row[j] = detail::parse_cell(cells[j], lineno, static_cast<long>(j + 1));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("CSV: no data rows", 2, 1);

  Dataset d;
  const std::size_t p = header.size() - 1;
  d.x = Matrix(rows.size(), p);
  d.y.resize(rows.size());
  for (std::size_t j = 0, out = 0; j < header.size(); ++j)
    if (static_cast<long>(j) != target_idx) d.feature_names.push_back(header[j]), ++out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0, out = 0; j < header.size(); ++j) {
      if (static_cast<long>(j) == target_idx) {
        d.y[i] = rows[i][j];
      } else {
        d.x(i, out++) = rows[i][j];
      }
    }
  }
  d.validate();
  return d;
}

// Shortest round-trip decimal form of a double (re-parses to the same bits).
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void save_csv(const Dataset& d, const std::string& path,
                     const std::string& target_column = "target") {
  std::ofstream out(path);
  if (!out) throw ParseError("CSV: cannot write file: " + path);
  for (std::size_t j = 0; j < d.p(); ++j) {
    const std::string name =
        j < d.feature_names.size() ? d.feature_names[j] : "x" + std::to_string(j + 1);
    out << name << ',';
  }
  out << target_column << '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.p(); ++j) out << format_double(d.x(i, j)) << ',';
    out << format_double(d.y[i]) << '\n';
  }
}

}  // namespace vif
