#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "vif/dataset.hpp"
#include "vif/errors.hpp"
#include "vif/kernel.hpp"
#include "vif/matrix.hpp"
#include "vif/rng.hpp"

namespace vif {

// Gradient-boosted ensemble of symmetric (oblivious) decision trees over
// quantized features. Every node at a given tree level shares one
// (feature, border) split, so a depth-d tree is fully described by d splits
// and 2^d leaf values.

struct GbdtConfig {
  int depth = 2;           // d: maximum tree depth
  int borders = 32;        // n: quantization borders per feature
  double beta = 10000.0;   // random strength of the split-score noise
  double epsilon = 0.1;    // learning rate
  double lambda = 0.0;     // shrinkage; 0 keeps the ensemble purely additive
  int max_iters = 1000;    // default boosting budget for plain training

  void validate() const {
    if (depth < 0) throw InvalidArgumentError("GbdtConfig: depth must be >= 0");
    if (borders < 1) throw InvalidArgumentError("GbdtConfig: borders must be >= 1");
    if (beta < 0.0) throw InvalidArgumentError("GbdtConfig: beta must be >= 0");
    if (!(epsilon > 0.0)) throw InvalidArgumentError("GbdtConfig: epsilon must be > 0");
    if (lambda < 0.0) throw InvalidArgumentError("GbdtConfig: lambda must be >= 0");
  }
};

// Per-feature strictly increasing bin borders, taken at empirical quantiles.
struct Quantizer {
  std::vector<std::vector<double>> thresholds;

  std::size_t features() const { return thresholds.size(); }

  // Bin code = number of thresholds strictly below v; a value equal to a
  // threshold always routes to the lower bin.
  std::uint16_t bin(std::size_t feature, double v) const {
    const auto& t = thresholds[feature];
    return static_cast<std::uint16_t>(std::lower_bound(t.begin(), t.end(), v) - t.begin());
  }
};

// Thresholds at quantiles k/(n+1), k = 1..n, deduplicated; a threshold equal
// to the column maximum splits nothing and is discarded, so a constant column
// ends up with a single bin.
inline Quantizer quantize(const Matrix& x, int n) {
  if (n < 1) throw InvalidArgumentError("quantize: n must be >= 1");
  Quantizer q;
  q.thresholds.resize(x.cols());
  const std::size_t rows = x.rows();
  for (std::size_t j = 0; j < x.cols(); ++j) {
    std::vector<double> v = x.column(j);
    std::sort(v.begin(), v.end());
    std::vector<double>& t = q.thresholds[j];
    for (int k = 1; k <= n; ++k) {
      const std::size_t pos = (static_cast<std::size_t>(k) * rows) / (static_cast<std::size_t>(n) + 1);
      if (pos == 0) continue;
      const double cand = v[pos - 1];
      if (cand >= v[rows - 1]) continue;
      if (t.empty() || cand > t.back()) t.push_back(cand);
    }
  }
  return q;
}

// Column-major bin codes for a fixed design matrix.
struct BinnedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint16_t> codes;

  std::uint16_t code(std::size_t row, std::size_t feature) const {
    return codes[feature * rows + row];
  }
};

inline BinnedMatrix bin_matrix(const Quantizer& q, const Matrix& x) {
  if (q.features() != x.cols()) throw InvalidArgumentError("bin_matrix: feature count mismatch");
  BinnedMatrix b;
  b.rows = x.rows();
  b.cols = x.cols();
  b.codes.resize(x.rows() * x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j)
    for (std::size_t i = 0; i < x.rows(); ++i) b.codes[j * b.rows + i] = q.bin(j, x(i, j));
  return b;
}

struct TreeSplit {
  std::uint16_t feature = 0;
  std::uint16_t border = 0;   // index into the quantizer's threshold list

  friend bool operator==(const TreeSplit&, const TreeSplit&) = default;
  friend auto operator<=>(const TreeSplit&, const TreeSplit&) = default;
};

struct ObliviousTree {
  std::vector<TreeSplit> splits;
  std::vector<double> leaf_values;   // length 2^splits.size()
};

// Leaf index of each row; the first split contributes the highest bit.
inline std::vector<std::uint32_t> leaf_codes(const std::vector<TreeSplit>& splits,
                                             const BinnedMatrix& b) {
  std::vector<std::uint32_t> leaf(b.rows, 0);
  for (const TreeSplit& s : splits) {
    const std::uint16_t* col = b.codes.data() + s.feature * b.rows;
    for (std::size_t i = 0; i < b.rows; ++i)
      leaf[i] = (leaf[i] << 1) | (col[i] > s.border ? 1u : 0u);
  }
  return leaf;
}

inline std::uint32_t leaf_of(const std::vector<TreeSplit>& splits, const Quantizer& q,
                             const double* row) {
  std::uint32_t leaf = 0;
  for (const TreeSplit& s : splits)
    leaf = (leaf << 1) | (q.bin(s.feature, row[s.feature]) > s.border ? 1u : 0u);
  return leaf;
}

// Split-selection score: mean over leaves of (sum of residuals)^2 / count,
// with empty leaves contributing zero.
inline double tree_score(const std::vector<TreeSplit>& splits, const std::vector<double>& z,
                         const BinnedMatrix& b) {
  if (z.size() != b.rows) throw InvalidArgumentError("tree_score: residual length mismatch");
  const std::vector<std::uint32_t> leaf = leaf_codes(splits, b);
  const std::size_t nleaf = std::size_t{1} << splits.size();
  std::vector<double> zsum(nleaf, 0.0);
  std::vector<double> cnt(nleaf, 0.0);
  for (std::size_t i = 0; i < b.rows; ++i) {
    zsum[leaf[i]] += z[i];
    cnt[leaf[i]] += 1.0;
  }
  double d = 0.0;
  for (std::size_t j = 0; j < nleaf; ++j)
    if (cnt[j] > 0.0) d += zsum[j] * zsum[j] / cnt[j];
  return d / static_cast<double>(b.rows);
}

// Leaf value = mean residual of the samples routed there; empty leaves get 0.
inline std::vector<double> fit_leaf_values(const std::vector<TreeSplit>& splits,
                                           const std::vector<double>& z, const BinnedMatrix& b) {
  const std::vector<std::uint32_t> leaf = leaf_codes(splits, b);
  const std::size_t nleaf = std::size_t{1} << splits.size();
  std::vector<double> zsum(nleaf, 0.0), cnt(nleaf, 0.0);
  for (std::size_t i = 0; i < b.rows; ++i) {
    zsum[leaf[i]] += z[i];
    cnt[leaf[i]] += 1.0;
  }
  std::vector<double> theta(nleaf, 0.0);
  for (std::size_t j = 0; j < nleaf; ++j)
    if (cnt[j] > 0.0) theta[j] = zsum[j] / cnt[j];
  return theta;
}

namespace detail {

inline std::vector<TreeSplit> all_splits(const Quantizer& q) {
  std::vector<TreeSplit> s;
  for (std::size_t j = 0; j < q.features(); ++j)
    for (std::size_t k = 0; k < q.thresholds[j].size(); ++k)
      s.push_back({static_cast<std::uint16_t>(j), static_cast<std::uint16_t>(k)});
  return s;
}

}  // namespace detail

// Greedy top-down structure sampling. At each level every remaining candidate
// split is scored on the residuals and perturbed with beta * Gumbel noise
// (fresh draw per candidate per level); the argmax is appended. beta = 0 is
// the deterministic greedy with lexicographic (feature, border) tie-break.
inline std::vector<TreeSplit> sample_tree(const std::vector<double>& z, const GbdtConfig& cfg,
                                          const Quantizer& q, const BinnedMatrix& b,
                                          RngStream& rng) {
  cfg.validate();
  const std::size_t n = b.rows;
  std::vector<TreeSplit> available = detail::all_splits(q);
  std::vector<TreeSplit> chosen;
  std::vector<std::uint32_t> leaf(n, 0);

  for (int level = 0; level < cfg.depth && !available.empty(); ++level) {
    const std::size_t nleaf = std::size_t{1} << level;

    // Aggregate (count, residual sum) per (leaf, bin) for every feature, then
    // score each border from prefix sums.
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;

    std::size_t prev_feature = static_cast<std::size_t>(-1);
    std::vector<double> cnt, zsum;
    std::size_t nbins = 0;
    std::vector<double> leaf_cnt(nleaf, 0.0), leaf_zsum(nleaf, 0.0);
    {
      for (std::size_t i = 0; i < n; ++i) {
        leaf_cnt[leaf[i]] += 1.0;
        leaf_zsum[leaf[i]] += z[i];
      }
    }

    for (std::size_t c = 0; c < available.size(); ++c) {
      const TreeSplit s = available[c];
      if (s.feature != prev_feature) {
        prev_feature = s.feature;
        nbins = q.thresholds[s.feature].size() + 1;
        cnt.assign(nleaf * nbins, 0.0);
        zsum.assign(nleaf * nbins, 0.0);
        const std::uint16_t* col = b.codes.data() + s.feature * n;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t cell = leaf[i] * nbins + col[i];
          cnt[cell] += 1.0;
          zsum[cell] += z[i];
        }
        // prefix sums over bins within each leaf
        for (std::size_t l = 0; l < nleaf; ++l)
          for (std::size_t bn = 1; bn < nbins; ++bn) {
            cnt[l * nbins + bn] += cnt[l * nbins + bn - 1];
            zsum[l * nbins + bn] += zsum[l * nbins + bn - 1];
          }
      }

      double d = 0.0;
      for (std::size_t l = 0; l < nleaf; ++l) {
        const double lc = cnt[l * nbins + s.border];
        const double lz = zsum[l * nbins + s.border];
        const double rc = leaf_cnt[l] - lc;
        const double rz = leaf_zsum[l] - lz;
        if (lc > 0.0) d += lz * lz / lc;
        if (rc > 0.0) d += rz * rz / rc;
      }
      d /= static_cast<double>(n);

      const double noisy = d + cfg.beta * rng.gumbel();
      if (noisy > best_score) {
        best_score = noisy;
        best_idx = c;
      }
    }

    const TreeSplit s = available[best_idx];
    chosen.push_back(s);
    available.erase(available.begin() + static_cast<long>(best_idx));
    const std::uint16_t* col = b.codes.data() + s.feature * n;
    for (std::size_t i = 0; i < n; ++i) leaf[i] = (leaf[i] << 1) | (col[i] > s.border ? 1u : 0u);
  }
  return chosen;
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

// Prediction follows the training recurrence
//   f_{tau+1} = (1 - lambda*eps/N) f_tau + eps <phi_tau, theta_tau>
// so a model truncated after any prefix of trees is exactly the checkpoint
// the trainer saw at that iteration. A warm start hangs the predecessor
// ensemble underneath as the tau = 0 state.
struct GbdtEnsemble {
  GbdtConfig config;
  Quantizer quantizer;
  std::vector<ObliviousTree> trees;
  std::size_t n_train = 0;
  std::shared_ptr<const GbdtEnsemble> base;

  double decay() const {
    return n_train == 0 ? 1.0
                        : 1.0 - config.lambda * config.epsilon / static_cast<double>(n_train);
  }

  double predict_row(const double* row) const {
    double acc = base ? base->predict_row(row) : 0.0;
    const double g = decay();
    for (const ObliviousTree& t : trees)
      acc = g * acc + config.epsilon * t.leaf_values[leaf_of(t.splits, quantizer, row)];
    return acc;
  }

  std::vector<double> predict(const Matrix& x) const {
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_row(x.row_ptr(i));
    return out;
  }
};

// Incremental boosting driver. Maintains running predictions on the training
// rows (and optionally validation rows) so each iteration costs O(p N).
class GbdtTrainer {
 public:
  GbdtTrainer(GbdtConfig cfg, std::shared_ptr<const GbdtEnsemble> warm_start, const Matrix& x,
              std::vector<double> y, RngStream rng)
      : rng_(rng.substream("tree-noise")), y_(std::move(y)) {
    cfg.validate();
    model_.config = cfg;
    model_.n_train = x.rows();
    model_.quantizer = quantize(x, cfg.borders);
    model_.base = std::move(warm_start);
    binned_ = bin_matrix(model_.quantizer, x);
    pred_ = model_.base ? model_.base->predict(x) : std::vector<double>(x.rows(), 0.0);
  }

  void attach_validation(const Matrix& x, std::vector<double> y) {
    val_x_ = x;
    val_y_ = std::move(y);
    val_pred_ = model_.base ? model_.base->predict(x) : std::vector<double>(x.rows(), 0.0);
    has_val_ = true;
  }

  void step() {
    const std::size_t n = binned_.rows;
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = y_[i] - pred_[i];

    ObliviousTree tree;
    tree.splits = sample_tree(z, model_.config, model_.quantizer, binned_, rng_);
    tree.leaf_values = fit_leaf_values(tree.splits, z, binned_);

    const double g = model_.decay();
    const double eps = model_.config.epsilon;
    const std::vector<std::uint32_t> leaf = leaf_codes(tree.splits, binned_);
    for (std::size_t i = 0; i < n; ++i)
      pred_[i] = g * pred_[i] + eps * tree.leaf_values[leaf[i]];
    if (has_val_) {
      for (std::size_t i = 0; i < val_x_.rows(); ++i)
        val_pred_[i] = g * val_pred_[i] +
                       eps * tree.leaf_values[leaf_of(tree.splits, model_.quantizer,
                                                      val_x_.row_ptr(i))];
    }
    model_.trees.push_back(std::move(tree));
  }

  double train_loss() const { return mse_loss_of(pred_, y_); }
  double val_loss() const { return has_val_ ? mse_loss_of(val_pred_, val_y_) : train_loss(); }
  std::size_t iterations() const { return model_.trees.size(); }
  const std::vector<double>& train_predictions() const { return pred_; }

  // Checkpoint after the first `iters` trees.
  GbdtEnsemble snapshot(std::size_t iters) const {
    GbdtEnsemble out = model_;
    out.trees.resize(std::min(iters, model_.trees.size()));
    return out;
  }
  GbdtEnsemble finish() const { return model_; }

 private:
  static double mse_loss_of(const std::vector<double>& pred, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double r = pred[i] - y[i];
      s += r * r;
    }
    return s / (2.0 * static_cast<double>(pred.size()));
  }

  GbdtEnsemble model_;
  RngStream rng_;
  BinnedMatrix binned_;
  std::vector<double> y_;
  std::vector<double> pred_;
  bool has_val_ = false;
  Matrix val_x_;
  std::vector<double> val_y_;
  std::vector<double> val_pred_;
};

// Fixed-iteration training; a zero budget returns the warm start (or the
// empty model) untouched.
inline GbdtEnsemble train_gbdt(const GbdtConfig& cfg, const Dataset& data,
                               std::shared_ptr<const GbdtEnsemble> warm_start, int iters,
                               RngStream rng) {
  GbdtTrainer tr(cfg, std::move(warm_start), data.x, data.y, rng);
  for (int t = 0; t < iters; ++t) tr.step();
  return tr.finish();
}

// ---------------------------------------------------------------------------
// Kernels and the tree distribution (enumerable instances only)
// ---------------------------------------------------------------------------

// Single-tree kernel: k(x, x') = N / max(N_leaf, 1) when x and x' share a
// leaf, 0 otherwise.
inline Matrix tree_kernel(const std::vector<TreeSplit>& splits, const BinnedMatrix& b) {
  const std::vector<std::uint32_t> leaf = leaf_codes(splits, b);
  const std::size_t n = b.rows;
  const std::size_t nleaf = std::size_t{1} << splits.size();
  std::vector<double> cnt(nleaf, 0.0);
  for (std::size_t i = 0; i < n; ++i) cnt[leaf[i]] += 1.0;
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = static_cast<double>(n) / std::max(cnt[leaf[i]], 1.0);
    for (std::size_t j = 0; j < n; ++j)
      if (leaf[i] == leaf[j]) k(i, j) = w;
  }
  return k;
}

namespace detail {

inline std::size_t combination_count(std::size_t n, std::size_t k, std::size_t cap) {
  if (k > n) return 0;
  std::size_t c = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return c;
}

// All size-k subsets of `splits` in lexicographic order.
template <class Fn>
void for_each_combination(const std::vector<TreeSplit>& splits, std::size_t k, Fn&& fn) {
  const std::size_t n = splits.size();
  if (k == 0) {
    fn(std::vector<TreeSplit>{});
    return;
  }
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  std::vector<TreeSplit> cur(k);
  while (true) {
    for (std::size_t i = 0; i < k; ++i) cur[i] = splits[idx[i]];
    fn(cur);
    std::size_t i = k;
    while (i-- > 0) {
      if (idx[i] != i + n - k) {
        ++idx[i];
        for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
        break;
      }
      if (i == 0) return;
    }
  }
}

}  // namespace detail

inline constexpr std::size_t kTreeEnumerationBudget = 200000;

// Enumerates the tree space V (all split subsets of the effective depth).
inline std::vector<std::vector<TreeSplit>> enumerate_trees(const Quantizer& q, int depth,
                                                           std::size_t budget = kTreeEnumerationBudget) {
  const std::vector<TreeSplit> splits = detail::all_splits(q);
  const std::size_t k = std::min<std::size_t>(depth, splits.size());
  const std::size_t count = detail::combination_count(splits.size(), k, budget);
  if (count > budget)
    throw BudgetError("enumerate_trees: tree space exceeds enumeration budget");
  std::vector<std::vector<TreeSplit>> out;
  out.reserve(count);
  detail::for_each_combination(splits, k, [&](const std::vector<TreeSplit>& c) { out.push_back(c); });
  return out;
}

// Stationary kernel: uniform mixture of the single-tree kernels over the
// whole tree space, scaled by 1/N. Its trace is at most 2^depth.
inline KernelMatrix stationary_kernel(const Dataset& data, const GbdtConfig& cfg,
                                      std::size_t budget = kTreeEnumerationBudget) {
  const Quantizer q = quantize(data.x, cfg.borders);
  const BinnedMatrix b = bin_matrix(q, data.x);
  const std::vector<std::vector<TreeSplit>> trees = enumerate_trees(q, cfg.depth, budget);
  const std::size_t n = data.n();
  Matrix k(n, n);
  const double w = 1.0 / (static_cast<double>(trees.size()) * static_cast<double>(n));
  for (const auto& splits : trees) {
    const std::vector<std::uint32_t> leaf = leaf_codes(splits, b);
    const std::size_t nleaf = std::size_t{1} << splits.size();
    std::vector<double> cnt(nleaf, 0.0);
    std::vector<std::vector<std::uint32_t>> members(nleaf);
    for (std::size_t i = 0; i < n; ++i) {
      cnt[leaf[i]] += 1.0;
      members[leaf[i]].push_back(static_cast<std::uint32_t>(i));
    }
    for (std::size_t l = 0; l < nleaf; ++l) {
      if (members[l].empty()) continue;
      const double add = w * static_cast<double>(n) / cnt[l];
      for (const std::uint32_t i : members[l])
        for (const std::uint32_t j : members[l]) k(i, j) += add;
    }
  }
  return KernelMatrix(std::move(k));
}

// Probability of each tree structure under the noisy greedy selection,
// computed by dynamic programming over split subsets: the probability of
// reaching subset A is the sum over its last-chosen split of
// P(reach A \ {s}) * softmax-at-level probability of choosing s.
struct TreeDistribution {
  std::vector<std::vector<TreeSplit>> trees;
  std::vector<double> prob;
};

inline TreeDistribution tree_distribution(const std::vector<double>& z, const GbdtConfig& cfg,
                                          const Quantizer& q, const BinnedMatrix& b,
                                          std::size_t budget = kTreeEnumerationBudget) {
  if (!(cfg.beta > 0.0)) throw InvalidArgumentError("tree_distribution: beta must be > 0");
  const std::vector<TreeSplit> splits = detail::all_splits(q);
  const std::size_t k = std::min<std::size_t>(cfg.depth, splits.size());
  if (detail::combination_count(splits.size(), k, budget) > budget)
    throw BudgetError("tree_distribution: tree space exceeds enumeration budget");

  using Key = std::vector<TreeSplit>;   // sorted
  std::map<Key, double> score_memo;
  auto score_of = [&](const Key& subset) {
    auto it = score_memo.find(subset);
    if (it != score_memo.end()) return it->second;
    const double d = tree_score(subset, z, b);
    score_memo.emplace(subset, d);
    return d;
  };

  std::map<Key, double> reach;
  reach[{}] = 1.0;
  for (std::size_t level = 0; level < k; ++level) {
    std::map<Key, double> next;
    for (const auto& [prefix, p] : reach) {
      // Candidate scores for one softmax step, shifted for stability.
      std::vector<std::pair<TreeSplit, double>> cand;
      double hi = -std::numeric_limits<double>::infinity();
      for (const TreeSplit& s : splits) {
        if (std::binary_search(prefix.begin(), prefix.end(), s)) continue;
        Key ext = prefix;
        ext.insert(std::upper_bound(ext.begin(), ext.end(), s), s);
        const double d = score_of(ext);
        cand.emplace_back(s, d);
        hi = std::max(hi, d);
      }
      double denom = 0.0;
      for (const auto& [s, d] : cand) denom += std::exp((d - hi) / cfg.beta);
      for (const auto& [s, d] : cand) {
        Key ext = prefix;
        ext.insert(std::upper_bound(ext.begin(), ext.end(), s), s);
        next[ext] += p * std::exp((d - hi) / cfg.beta) / denom;
      }
    }
    reach = std::move(next);
  }

  TreeDistribution out;
  for (auto& [subset, p] : reach) {
    out.trees.push_back(subset);
    out.prob.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pattern-compressed stationary kernel
// ---------------------------------------------------------------------------

// When the design matrix has few distinct rows (discrete features), the
// stationary kernel K = S kappa S^T factors through the g distinct row
// patterns. Its nonzero spectrum equals that of the small matrix
// B = diag(sqrt(m)) kappa diag(sqrt(m)), and quadratic forms in K^+ reduce to
// quadratic forms in B^+ for pattern-constant vectors. Rows are grouped by
// raw content, so any function of the row (model predictions, teacher values)
// is pattern-constant by construction. This gives exact large-N spectra at
// the cost of a g x g eigensolve.
struct PatternKernel {
  Matrix b;                            // g x g compressed kernel
  std::vector<std::size_t> count;      // pattern multiplicities
  std::vector<std::uint32_t> pattern;  // row -> pattern id
  std::size_t n = 0;

  std::vector<double> padded_eigenvalues() const {
    const EigenDecomposition e = sym_eig(b);
    std::vector<double> out = e.values;
    for (double& v : out) v = std::max(v, 0.0);
    out.resize(n, 0.0);
    return out;
  }

  // c^T K^+ c for a vector constant on each pattern.
  double quad_form_pinv(const std::vector<double>& c, double cutoff = 1e-10) const {
    if (c.size() != n) throw InvalidArgumentError("PatternKernel: vector length mismatch");
    std::vector<double> tilde(count.size(), 0.0);
    std::vector<bool> seen(count.size(), false);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t a = pattern[i];
      if (!seen[a]) {
        tilde[a] = c[i];
        seen[a] = true;
      } else if (std::abs(tilde[a] - c[i]) >
                 1e-8 * std::max(1.0, std::abs(tilde[a]))) {
        throw InvalidArgumentError("PatternKernel: vector is not pattern-constant");
      }
    }
    for (std::size_t a = 0; a < count.size(); ++a)
      tilde[a] *= std::sqrt(static_cast<double>(count[a]));
    return vif::quad_form_pinv(b, tilde, cutoff);
  }
};

inline PatternKernel stationary_kernel_compressed(const Matrix& x, const GbdtConfig& cfg,
                                                  std::size_t budget = kTreeEnumerationBudget) {
  const Quantizer q = quantize(x, cfg.borders);
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();

  // Group identical raw rows, then bin one representative per group.
  std::map<std::vector<double>, std::uint32_t> ids;
  PatternKernel out;
  out.n = n;
  out.pattern.resize(n);
  std::vector<std::vector<std::uint16_t>> reps;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> key(x.row_ptr(i), x.row_ptr(i) + p);
    auto it = ids.find(key);
    if (it == ids.end()) {
      it = ids.emplace(key, static_cast<std::uint32_t>(ids.size())).first;
      std::vector<std::uint16_t> codes(p);
      for (std::size_t j = 0; j < p; ++j) codes[j] = q.bin(j, key[j]);
      reps.push_back(std::move(codes));
      out.count.push_back(0);
    }
    out.pattern[i] = it->second;
    out.count[it->second] += 1;
  }

  const std::size_t g = reps.size();
  const std::vector<std::vector<TreeSplit>> trees = enumerate_trees(q, cfg.depth, budget);
  Matrix kappa(g, g);
  std::vector<std::uint32_t> leaf(g);
  std::vector<double> leaf_count;
  for (const auto& splits : trees) {
    const std::size_t nleaf = std::size_t{1} << splits.size();
    leaf_count.assign(nleaf, 0.0);
    for (std::size_t a = 0; a < g; ++a) {
      std::uint32_t l = 0;
      for (const TreeSplit& s : splits)
        l = (l << 1) | (reps[a][s.feature] > s.border ? 1u : 0u);
      leaf[a] = l;
      leaf_count[l] += static_cast<double>(out.count[a]);
    }
    for (std::size_t a = 0; a < g; ++a)
      for (std::size_t c = 0; c < g; ++c)
        if (leaf[a] == leaf[c]) kappa(a, c) += 1.0 / leaf_count[leaf[a]];
  }
  const double scale = 1.0 / static_cast<double>(trees.size());
  out.b = Matrix(g, g);
  for (std::size_t a = 0; a < g; ++a)
    for (std::size_t c = 0; c < g; ++c)
      out.b(a, c) = scale * kappa(a, c) *
                    std::sqrt(static_cast<double>(out.count[a]) * static_cast<double>(out.count[c]));
  return out;
}

}  // namespace vif
