#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "vif/gbdt.hpp"
#include "vif/serialize.hpp"

using namespace vif;

namespace {

BinnedMatrix bin_of(const Quantizer& q, const Matrix& x) { return bin_matrix(q, x); }

// Brute-force greedy argmax over remaining candidates, scoring every
// extension from scratch. Oracle for sample_tree at beta = 0.
std::vector<TreeSplit> greedy_oracle(const std::vector<double>& z, int depth, const Quantizer& q,
                                     const BinnedMatrix& b) {
  std::vector<TreeSplit> remaining;
  for (std::size_t j = 0; j < q.features(); ++j)
    for (std::size_t k = 0; k < q.thresholds[j].size(); ++k)
      remaining.push_back({static_cast<std::uint16_t>(j), static_cast<std::uint16_t>(k)});
  std::vector<TreeSplit> chosen;
  for (int level = 0; level < depth && !remaining.empty(); ++level) {
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t c = 0; c < remaining.size(); ++c) {
      std::vector<TreeSplit> ext = chosen;
      ext.push_back(remaining[c]);
      const double d = tree_score(ext, z, b);
      if (d > best_score + 1e-15) {
        best_score = d;
        best = c;
      }
    }
    chosen.push_back(remaining[best]);
    remaining.erase(remaining.begin() + static_cast<long>(best));
  }
  return chosen;
}

Matrix column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Matrix(n, 1, std::move(v));
}

}  // namespace

TEST_CASE("quantize: degenerate, median split, tie routing") {
  CHECK(quantize(column({5.0, 5.0, 5.0, 5.0}), 4).thresholds[0].empty());

  const Quantizer q = quantize(column({1.0, 2.0, 3.0, 4.0}), 1);
  REQUIRE(q.thresholds[0].size() == 1);
  CHECK(q.thresholds[0][0] == 2.0);
  CHECK(q.bin(0, 2.0) == 0);        // values on a threshold go left
  CHECK(q.bin(0, 2.5) == 1);
  CHECK(q.bin(0, 0.5) == 0);
}

TEST_CASE("tree_score: zero residual, separating and non-separating splits") {
  // Feature A separates {1,2} from {3,4}; feature B interleaves {1,3},{2,4}.
  Matrix x(4, 2, {1.0, 1.0, 2.0, 2.0, 3.0, 1.0, 4.0, 2.0});
  const Quantizer q = quantize(x, 1);
  const BinnedMatrix b = bin_of(q, x);
  REQUIRE(q.thresholds[0].size() == 1);
  REQUIRE(q.thresholds[1].size() == 1);

  const std::vector<double> z = {1.0, 1.0, -1.0, -1.0};
  CHECK(tree_score({{0, 0}}, {0.0, 0.0, 0.0, 0.0}, b) == 0.0);
  CHECK(tree_score({{0, 0}}, z, b) == Catch::Approx(1.0).margin(1e-14));
  CHECK(tree_score({{1, 0}}, z, b) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("fit_leaf_values: single leaf, constant residual, perfect separation") {
  Matrix x(4, 1, {1.0, 2.0, 3.0, 4.0});
  const Quantizer q = quantize(x, 1);
  const BinnedMatrix b = bin_of(q, x);

  const auto single = fit_leaf_values({}, {1.0, 2.0, 3.0, 6.0}, b);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == Catch::Approx(3.0));

  const auto constant = fit_leaf_values({{0, 0}}, {2.5, 2.5, 2.5, 2.5}, b);
  CHECK(constant[0] == Catch::Approx(2.5));
  CHECK(constant[1] == Catch::Approx(2.5));

  const auto split_vals = fit_leaf_values({{0, 0}}, {1.0, 1.0, -1.0, -1.0}, b);
  CHECK(split_vals[0] == Catch::Approx(1.0));    // left leaf = {1,2}
  CHECK(split_vals[1] == Catch::Approx(-1.0));
}

TEST_CASE("sample_tree: beta = 0 greedy with lexicographic tie-break") {
  Matrix x(4, 2, {1.0, 1.0, 2.0, 2.0, 3.0, 1.0, 4.0, 2.0});
  const Quantizer q = quantize(x, 1);
  const BinnedMatrix b = bin_of(q, x);
  GbdtConfig cfg;
  cfg.depth = 1;
  cfg.borders = 1;
  cfg.beta = 0.0;

  RngStream rng(3);
  const std::vector<double> z = {1.0, 1.0, -1.0, -1.0};
  const auto tree = sample_tree(z, cfg, q, b, rng);
  REQUIRE(tree.size() == 1);
  CHECK(tree[0] == TreeSplit{0, 0});   // the separating split dominates

  // Exact tie: duplicated feature columns; the lowest feature index wins.
  Matrix x2(4, 2, {1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0});
  const Quantizer q2 = quantize(x2, 1);
  const BinnedMatrix b2 = bin_of(q2, x2);
  const auto tied = sample_tree(z, cfg, q2, b2, rng);
  REQUIRE(tied.size() == 1);
  CHECK(tied[0] == TreeSplit{0, 0});
}

TEST_CASE("sample_tree at beta = 0 equals the greedy enumeration oracle") {
  RngStream rng(77);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 30 + 5 * (rep % 4);
    Matrix x(n, 3);
    std::vector<double> z(n);
    for (auto& v : x.data()) v = std::floor(rng.uniform_real(0.0, 6.0));
    for (auto& v : z) v = rng.normal();
    GbdtConfig cfg;
    cfg.depth = 2;
    cfg.borders = 4;
    cfg.beta = 0.0;
    const Quantizer q = quantize(x, cfg.borders);
    const BinnedMatrix b = bin_of(q, x);
    RngStream tree_rng(static_cast<std::uint64_t>(rep));
    CHECK(sample_tree(z, cfg, q, b, tree_rng) == greedy_oracle(z, cfg.depth, q, b));
  }
}

TEST_CASE("tree_kernel block structure") {
  Matrix x(4, 1, {1.0, 2.0, 3.0, 4.0});
  const Quantizer q = quantize(x, 1);
  const BinnedMatrix b = bin_of(q, x);

  const Matrix k0 = tree_kernel({}, b);   // depth 0: one leaf
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(k0(i, j) == 1.0);

  const Matrix k1 = tree_kernel({{0, 0}}, b);   // two leaves of size 2
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const bool same = (i < 2) == (j < 2);
      CHECK(k1(i, j) == (same ? 2.0 : 0.0));
    }

  // (1/N) * kernel has eigenvalues exactly {1, 1, 0, 0}.
  Matrix kn = k1;
  for (double& v : kn.data()) v /= 4.0;
  const EigenDecomposition e = sym_eig(kn);
  CHECK(e.values[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(e.values[1] == Catch::Approx(1.0).margin(1e-12));
  CHECK(e.values[2] == Catch::Approx(0.0).margin(1e-12));
  CHECK(e.values[3] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("stationary_kernel: depth 0, hand enumeration, trace bound, budget") {
  Dataset d;
  d.x = Matrix(4, 1, {1.0, 2.0, 3.0, 4.0});
  d.y = {0.0, 0.0, 0.0, 0.0};

  GbdtConfig cfg0;
  cfg0.depth = 0;
  cfg0.borders = 2;
  const KernelMatrix k0 = stationary_kernel(d, cfg0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(k0.matrix()(i, j) == Catch::Approx(0.25));
  CHECK(k0.trace() == Catch::Approx(1.0));

  GbdtConfig cfg1;
  cfg1.depth = 1;
  cfg1.borders = 2;
  const Quantizer q = quantize(d.x, 2);
  REQUIRE(q.thresholds[0].size() == 2);
  const BinnedMatrix b = bin_of(q, d.x);
  const KernelMatrix k1 = stationary_kernel(d, cfg1);
  const Matrix ka = tree_kernel({{0, 0}}, b);
  const Matrix kb = tree_kernel({{0, 1}}, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(k1.matrix()(i, j) ==
            Catch::Approx(0.5 * (ka(i, j) + kb(i, j)) / 4.0).margin(1e-14));
  CHECK(k1.trace() <= 2.0 + 1e-12);

  // Random enumerable instances keep trace <= 2^d.
  RngStream rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    Dataset r;
    r.x = Matrix(40, 2);
    for (auto& v : r.x.data()) v = std::floor(rng.uniform_real(0.0, 5.0));
    r.y.assign(40, 0.0);
    GbdtConfig c;
    c.depth = 2;
    c.borders = 4;
    CHECK(stationary_kernel(r, c).trace() <= std::pow(2.0, c.depth) + 1e-12);
  }

  CHECK_THROWS_AS(stationary_kernel(d, cfg1, 1), BudgetError);
}

TEST_CASE("tree_distribution: symmetry, softmax case, uniform limit") {
  // Two candidate splits with scores 1 and 0.
  Matrix x(4, 2, {1.0, 1.0, 2.0, 2.0, 3.0, 1.0, 4.0, 2.0});
  const Quantizer q = quantize(x, 1);
  const BinnedMatrix b = bin_of(q, x);
  const std::vector<double> z = {1.0, 1.0, -1.0, -1.0};

  GbdtConfig cfg;
  cfg.depth = 1;
  cfg.borders = 1;
  cfg.beta = 1.0;
  const TreeDistribution td = tree_distribution(z, cfg, q, b);
  REQUIRE(td.prob.size() == 2);
  double total = 0.0;
  for (const double p : td.prob) total += p;
  CHECK(total == Catch::Approx(1.0).margin(1e-10));
  const double soft1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  // trees come out sorted lexicographically: {(0,0)} then {(1,0)}.
  CHECK(td.prob[0] == Catch::Approx(soft1).margin(1e-3));
  CHECK(td.prob[1] == Catch::Approx(1.0 - soft1).margin(1e-3));

  // Equal scores split the mass evenly for any beta.
  Matrix x2(4, 2, {1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0});
  const Quantizer q2 = quantize(x2, 1);
  const TreeDistribution sym = tree_distribution(z, cfg, q2, bin_of(q2, x2));
  REQUIRE(sym.prob.size() == 2);
  CHECK(sym.prob[0] == Catch::Approx(0.5).margin(1e-12));

  // Huge beta approaches the uniform distribution over the tree space.
  GbdtConfig big = cfg;
  big.beta = 1e9;
  const TreeDistribution uni = tree_distribution(z, big, q, b);
  for (const double p : uni.prob) CHECK(std::abs(p - 0.5) < 1e-6);
}

TEST_CASE("sample_tree frequencies match tree_distribution") {
  SECTION("depth 1 instance") {
    Matrix x(4, 2, {1.0, 1.0, 2.0, 2.0, 3.0, 1.0, 4.0, 2.0});
    const Quantizer q = quantize(x, 1);
    const BinnedMatrix b = bin_of(q, x);
    const std::vector<double> z = {1.0, 1.0, -1.0, -1.0};
    GbdtConfig cfg;
    cfg.depth = 1;
    cfg.borders = 1;
    cfg.beta = 1.0;
    const TreeDistribution td = tree_distribution(z, cfg, q, b);

    std::map<std::vector<TreeSplit>, double> freq;
    RngStream rng(123);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
      auto t = sample_tree(z, cfg, q, b, rng);
      std::sort(t.begin(), t.end());
      freq[t] += 1.0 / draws;
    }
    double tv = 0.0;
    for (std::size_t k = 0; k < td.trees.size(); ++k)
      tv += 0.5 * std::abs(freq[td.trees[k]] - td.prob[k]);
    CHECK(tv < 0.05);
  }

  SECTION("depth 2 instance validates the subset DP") {
    RngStream data_rng(9);
    Matrix x(40, 2);
    for (auto& v : x.data()) v = std::floor(data_rng.uniform_real(0.0, 4.0));
    std::vector<double> z(40);
    for (auto& v : z) v = data_rng.normal();
    GbdtConfig cfg;
    cfg.depth = 2;
    cfg.borders = 2;
    cfg.beta = 0.5;
    const Quantizer q = quantize(x, cfg.borders);
    const BinnedMatrix b = bin_of(q, x);
    const TreeDistribution td = tree_distribution(z, cfg, q, b);
    double total = 0.0;
    for (const double p : td.prob) total += p;
    CHECK(total == Catch::Approx(1.0).margin(1e-10));

    std::map<std::vector<TreeSplit>, double> freq;
    RngStream rng(321);
    const int draws = 50000;
    for (int i = 0; i < draws; ++i) {
      auto t = sample_tree(z, cfg, q, b, rng);
      std::sort(t.begin(), t.end());
      freq[t] += 1.0 / draws;
    }
    double tv = 0.0;
    for (std::size_t k = 0; k < td.trees.size(); ++k)
      tv += 0.5 * std::abs(freq[td.trees[k]] - td.prob[k]);
    CHECK(tv < 0.05);
  }
}

TEST_CASE("train_gbdt: zero budget, single exact step, loss monotone") {
  RngStream rng(11);
  Dataset d;
  d.x = Matrix(40, 1);
  d.y.resize(40);
  for (std::size_t i = 0; i < 40; ++i) {
    d.x(i, 0) = i < 20 ? 0.0 : 1.0;
    d.y[i] = (i < 20 ? 1.0 : 3.0) + 0.3 * rng.normal();
  }

  GbdtConfig cfg;
  cfg.depth = 1;
  cfg.borders = 1;
  cfg.beta = 0.0;
  cfg.epsilon = 1.0;

  const GbdtEnsemble zero = train_gbdt(cfg, d, nullptr, 0, RngStream(1));
  CHECK(zero.trees.empty());
  for (const double v : zero.predict(d.x)) CHECK(v == 0.0);

  // One exact step fits leaf means, so residuals are within-leaf centered.
  const GbdtEnsemble one = train_gbdt(cfg, d, nullptr, 1, RngStream(1));
  const std::vector<double> pred = one.predict(d.x);
  double left = 0.0, right = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    const double r = d.y[i] - pred[i];
    (d.x(i, 0) == 0.0 ? left : right) += r;
  }
  CHECK(std::abs(left) < 1e-10);
  CHECK(std::abs(right) < 1e-10);

  // Training loss non-increasing for epsilon <= 1, lambda = 0.
  GbdtConfig c2;
  c2.depth = 2;
  c2.borders = 3;
  c2.beta = 5.0;        // noisy split choice; the update still contracts
  c2.epsilon = 0.8;
  GbdtTrainer tr(c2, nullptr, d.x, d.y, RngStream(77));
  double prev = tr.train_loss();
  for (int t = 0; t < 60; ++t) {
    tr.step();
    CHECK(tr.train_loss() <= prev + 1e-12);
    prev = tr.train_loss();
  }
}

TEST_CASE("ensemble additivity: warm-started training equals base plus continuation") {
  RngStream rng(31);
  Dataset d;
  d.x = Matrix(60, 2);
  d.y.resize(60);
  for (auto& v : d.x.data()) v = rng.normal();
  for (std::size_t i = 0; i < 60; ++i) d.y[i] = d.x(i, 0) - 0.5 * d.x(i, 1) + 0.1 * rng.normal();

  GbdtConfig cfg;
  cfg.depth = 2;
  cfg.borders = 4;
  cfg.beta = 1.0;
  cfg.epsilon = 0.4;

  const auto base =
      std::make_shared<const GbdtEnsemble>(train_gbdt(cfg, d, nullptr, 15, RngStream(5)));

  // Warm-started continuation.
  GbdtTrainer warm(cfg, base, d.x, d.y, RngStream(6));
  for (int t = 0; t < 20; ++t) warm.step();
  const std::vector<double> full_pred = warm.finish().predict(d.x);

  // Fresh model trained on the residuals with the same tree stream.
  const std::vector<double> base_pred = base->predict(d.x);
  Dataset resid = d;
  for (std::size_t i = 0; i < 60; ++i) resid.y[i] = d.y[i] - base_pred[i];
  const GbdtEnsemble cont = train_gbdt(cfg, resid, nullptr, 20, RngStream(6));
  const std::vector<double> cont_pred = cont.predict(d.x);

  for (std::size_t i = 0; i < 60; ++i)
    CHECK(full_pred[i] == Catch::Approx(base_pred[i] + cont_pred[i]).margin(1e-12));
}

TEST_CASE("compressed stationary kernel matches the direct one") {
  RngStream rng(41);
  Dataset d;
  d.x = Matrix(90, 2);
  for (auto& v : d.x.data()) v = std::floor(rng.uniform_real(0.0, 4.0));
  d.y.assign(90, 0.0);
  GbdtConfig cfg;
  cfg.depth = 2;
  cfg.borders = 3;

  const KernelMatrix direct = stationary_kernel(d, cfg);
  const PatternKernel packed = stationary_kernel_compressed(d.x, cfg);

  // Spectra agree (nonzero part padded with zeros).
  const std::vector<double> full = direct.eigenvalues();
  const std::vector<double> comp = packed.padded_eigenvalues();
  REQUIRE(full.size() == comp.size());
  for (std::size_t i = 0; i < full.size(); ++i)
    CHECK(full[i] == Catch::Approx(comp[i]).margin(1e-9));

  // Quadratic forms agree on a pattern-constant vector.
  std::vector<double> c(d.n());
  for (std::size_t i = 0; i < d.n(); ++i)
    c[i] = 1.0 + d.x(i, 0) + 2.0 * d.x(i, 1) + 0.25 * d.x(i, 0) * d.x(i, 1);
  const double direct_q = quad_form_pinv(direct.matrix(), c, 1e-9);
  const double packed_q = packed.quad_form_pinv(c, 1e-9);
  CHECK(packed_q == Catch::Approx(direct_q).epsilon(1e-6));
}

TEST_CASE("gbdt serialization round trip reproduces predictions bit-exactly") {
  RngStream rng(51);
  Dataset d;
  d.x = Matrix(50, 3);
  d.y.resize(50);
  for (auto& v : d.x.data()) v = rng.normal();
  for (std::size_t i = 0; i < 50; ++i) d.y[i] = d.x(i, 0) + rng.normal();

  GbdtConfig cfg;
  cfg.depth = 2;
  cfg.borders = 5;
  cfg.beta = 2.0;
  cfg.epsilon = 0.3;
  cfg.lambda = 1.5;   // exercise the decayed recurrence too
  const GbdtEnsemble e = train_gbdt(cfg, d, nullptr, 25, RngStream(8));

  const nlohmann::json j = to_json(e);
  const GbdtEnsemble back = gbdt_from_json(nlohmann::json::parse(j.dump()));
  const std::vector<double> p1 = e.predict(d.x);
  const std::vector<double> p2 = back.predict(d.x);
  for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i] == p2[i]);
}
