#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "vif/stopping.hpp"

using namespace vif;

namespace {

// Straightforward re-scan of the stopping threshold, recomputing the
// complexity from the raw spectrum at every iteration.
long t_max_naive(const std::vector<double>& eigs, double c_h, double sigma, double step,
                 long cap = 1000000) {
  const double coef = c_h * c_h / (2.0 * std::exp(1.0) * sigma);
  for (long tau = 1; tau <= cap; ++tau) {
    const double eta = static_cast<double>(tau) * step;
    double s = 0.0;
    for (const double lam : eigs) s += std::min(std::max(lam, 0.0), 1.0 / eta);
    const double r = std::sqrt(s / static_cast<double>(eigs.size()));
    if (r > coef / eta) return tau - 1;
  }
  throw BudgetError("t_max_naive: cap exceeded");
}

KernelMatrix scaled_identity_kernel(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0 / static_cast<double>(n);
  return KernelMatrix(std::move(m));
}

struct ScriptedTrainer {
  std::vector<double> losses;
  int t = 0;
  int marked = -1;
  void step() { ++t; }
  double train_loss() const { return losses[static_cast<std::size_t>(t)]; }
  double val_loss() const { return losses[static_cast<std::size_t>(t)]; }
  void mark_best() { marked = t; }
  FittedModel best_model() const { return MlpModel{}; }
};

}  // namespace

TEST_CASE("local_rademacher: endpoints and direct formula") {
  const std::vector<double> eig = {4.0, 1.0, 0.25};
  CHECK(local_rademacher(eig, 0.0) == 0.0);
  CHECK(local_rademacher(eig, 1.0) == Catch::Approx(std::sqrt(2.25 / 3.0)).margin(1e-4));
  const double sat = std::sqrt((4.0 + 1.0 + 0.25) / 3.0);
  CHECK(local_rademacher(eig, 1e9) == Catch::Approx(sat).margin(1e-12));

  // Non-decreasing on a fine grid.
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double rho = 2.5 * static_cast<double>(i) / 1000.0;
    const double cur = local_rademacher(eig, rho);
    CHECK(cur >= prev - 1e-14);
    prev = cur;
  }
}

TEST_CASE("hilbert_distance: zero vector, identity kernel, dual-method agreement") {
  const KernelMatrix k = scaled_identity_kernel(9);
  CHECK(hilbert_distance(k, std::vector<double>(9, 0.0)) == 0.0);

  std::vector<double> c(9, 1.0);   // ||c||^2 = 9 = N, so C_H = sqrt(N) = 3
  CHECK(hilbert_distance(k, c) == Catch::Approx(3.0).margin(1e-10));

  // Random PSD kernel, c inside its column space: eigen-truncated
  // pseudo-inverse vs a tiny-ridge Cholesky solve.
  RngStream rng(17);
  Matrix b(12, 5);
  for (auto& v : b.data()) v = rng.normal();
  Matrix km = matmul(b, transpose(b));
  for (double& v : km.data()) v /= 12.0;
  std::vector<double> w(5);
  for (auto& v : w) v = rng.normal();
  const std::vector<double> c2 = matvec(matmul(b, Matrix(5, 1, w)), {1.0});
  const KernelMatrix kk{km};
  const double via_eig = hilbert_distance(kk, c2);

  Matrix ridged = km;
  for (std::size_t i = 0; i < 12; ++i) ridged(i, i) += 1e-12;
  Matrix l;
  REQUIRE(cholesky(ridged, l));
  std::vector<double> yv(12), xv(12);
  for (std::size_t i = 0; i < 12; ++i) {
    double s = c2[i];
    for (std::size_t j2 = 0; j2 < i; ++j2) s -= l(i, j2) * yv[j2];
    yv[i] = s / l(i, i);
  }
  for (std::size_t ii = 12; ii-- > 0;) {
    double s = yv[ii];
    for (std::size_t j2 = ii + 1; j2 < 12; ++j2) s -= l(j2, ii) * xv[j2];
    xv[ii] = s / l(ii, ii);
  }
  const double via_ridge = std::sqrt(dot(c2, xv) / 12.0);
  CHECK(via_eig == Catch::Approx(via_ridge).epsilon(1e-6));
}

TEST_CASE("critical_radius: closed-form case, monotonicity, degenerate spectrum") {
  const double rho = critical_radius({1.0}, 1.0, 1.0);
  CHECK(rho == Catch::Approx(std::sqrt(2.0 * std::exp(1.0))).margin(1e-3));

  // The crossing satisfies the defining equality to high relative accuracy.
  const double coef = 1.0 / (2.0 * std::exp(1.0));
  const double lhs = local_rademacher({1.0}, rho);
  CHECK(std::abs(lhs - rho * rho * coef) <= 1e-6 * lhs);

  CHECK(critical_radius({1.0, 0.5}, 1.0, 2.0) > critical_radius({1.0, 0.5}, 1.0, 1.0));
  CHECK(critical_radius({0.0, 0.0}, 1.0, 1.0) <= 1e-12);
}

TEST_CASE("t_max: hand-scan example and scaling directions") {
  CHECK(t_max({1.0}, 1.0, 1.0, 0.05) == 3);

  // Larger noise never lengthens the run.
  CHECK(t_max({1.0, 0.3}, 1.0, 2.0, 0.05) <= t_max({1.0, 0.3}, 1.0, 1.0, 0.05));

  // Halving the step at least doubles the threshold (minus one).
  const long full = t_max({1.0, 0.3}, 1.0, 1.0, 0.05);
  const long halved = t_max({1.0, 0.3}, 1.0, 1.0, 0.025);
  CHECK(halved >= 2 * full - 1);

  CHECK_THROWS_AS(t_max({2.0}, 1.0, 1.0, 0.9), InvalidArgumentError);
  CHECK_THROWS_AS(t_max({0.0, 0.0}, 1.0, 1.0, 0.5, 1000), BudgetError);
}

TEST_CASE("t_max equals the naive scan on random spectra") {
  RngStream rng(2024);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> eigs(n);
    double lmax = 0.0;
    for (auto& v : eigs) {
      v = std::abs(rng.normal());
      lmax = std::max(lmax, v);
    }
    const double c_h = rng.uniform_real(0.1, 2.0);
    const double sigma = rng.uniform_real(0.1, 2.0);
    const double step = 0.9 * std::min(1.0, 1.0 / lmax) * rng.uniform_real(0.1, 1.0);
    long fast = -2, naive = -2;
    try {
      fast = t_max(eigs, c_h, sigma, step, 200000);
    } catch (const BudgetError&) {
      fast = -1;
    }
    try {
      naive = t_max_naive(eigs, c_h, sigma, step, 200000);
    } catch (const BudgetError&) {
      naive = -1;
    }
    REQUIRE(fast == naive);
  }
}

TEST_CASE("decompose_error: warm start term, frozen-kernel trajectory, bound") {
  RngStream rng(8);
  const std::size_t n = 24;
  Matrix b(n, 6);
  for (auto& v : b.data()) v = rng.normal();
  Matrix km = matmul(b, transpose(b));
  for (double& v : km.data()) v /= static_cast<double>(n) * 6.0;
  const KernelMatrix k{km};

  std::vector<double> true_f(n), noise(n), warm(n);
  for (auto& v : true_f) v = rng.normal();
  for (auto& v : noise) v = 0.3 * rng.normal();
  for (std::size_t i = 0; i < n; ++i) warm[i] = true_f[i] + rng.normal();

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = true_f[i] + noise[i];

  const double lmax = k.eig().values.front();
  const double step = 0.8 / lmax;

  // Exact frozen-kernel updates: the drift residual is identically zero.
  std::vector<std::vector<double>> traj = {warm};
  for (int t = 0; t < 25; ++t) {
    const std::vector<double>& f = traj.back();
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = f[i] - y[i];
    const std::vector<double> kr = matvec(km, resid);
    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = f[i] - step * kr[i];
    traj.push_back(std::move(next));
  }

  const ErrorDecomposition dec = decompose_error(k, traj, true_f, noise, step);

  // tau = 0: identity shrinkage.
  CHECK(dec.variance[0] == 0.0);
  double zeta_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) zeta_sq += (true_f[i] - warm[i]) * (true_f[i] - warm[i]);
  zeta_sq /= static_cast<double>(n);
  CHECK(dec.bias_sq[0] == Catch::Approx(2.0 * zeta_sq).epsilon(1e-10));

  for (const double d : dec.diff_sq) CHECK(d < 1e-18);
  CHECK(dec.bound_holds(1e-8));
  for (std::size_t t = 1; t < dec.bias_sq.size(); ++t) {
    CHECK(dec.bias_sq[t] <= dec.bias_sq[t - 1] + 1e-12);
    CHECK(dec.variance[t] >= dec.variance[t - 1] - 1e-12);
  }
}

TEST_CASE("decompose_error on a real network trajectory") {
  RngStream rng(15);
  const std::size_t n = 48;
  Matrix x(n, 3);
  for (auto& v : x.data()) v = rng.normal();
  std::vector<double> true_f(n), noise(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    true_f[i] = std::sin(x(i, 1)) + 0.5 * x(i, 2);
    noise[i] = 0.2 * rng.normal();
    y[i] = true_f[i] + noise[i];
  }

  MlpConfig cfg;
  cfg.widths = {3, 128, 1};
  cfg.eta0 = 0.25;
  MlpModel m = mlp_init(cfg, RngStream(99));
  const KernelMatrix k = empirical_ntk(m, x);
  const double lmax = k.eig().values.front();
  REQUIRE(cfg.eta0 <= 1.0 / lmax);

  std::vector<std::vector<double>> traj = {mlp_forward(m, x)};
  for (int t = 0; t < 20; ++t) {
    m = grad_step(m, x, y, cfg.param_step());
    traj.push_back(mlp_forward(m, x));
  }
  const ErrorDecomposition dec = decompose_error(k, traj, true_f, noise, cfg.eta0);
  CHECK(dec.bound_holds(1e-8));
  CHECK(dec.delta_norms.size() == 20);
  for (std::size_t t = 1; t < dec.bias_sq.size(); ++t) {
    CHECK(dec.bias_sq[t] <= dec.bias_sq[t - 1] + 1e-12);
    CHECK(dec.variance[t] >= dec.variance[t - 1] - 1e-12);
  }
}

TEST_CASE("patience loop on scripted loss trajectories") {
  SECTION("strictly decreasing to the horizon truncates at the best epoch") {
    ScriptedTrainer tr;
    for (int i = 0; i <= 100; ++i) tr.losses.push_back(100.0 - i);
    const EarlyStopResult res = detail::run_patience(tr, 10, 100);
    CHECK(res.best_epoch == 100);
    CHECK(res.truncated);
    CHECK(tr.marked == 100);
  }
  SECTION("decrease for 20 epochs then increase stops at 20 + P") {
    ScriptedTrainer tr;
    for (int i = 0; i <= 200; ++i)
      tr.losses.push_back(i <= 20 ? 100.0 - i : 80.0 + (i - 20));
    const EarlyStopResult res = detail::run_patience(tr, 10, 200);
    CHECK(res.best_epoch == 20);
    CHECK_FALSE(res.truncated);
    CHECK(tr.marked == 20);
    CHECK(res.history.size() == 31);   // epochs 0..30
  }
}

TEST_CASE("early_stop_train: zero budget returns the warm start unchanged") {
  MlpConfig cfg;
  cfg.widths = {2, 8, 1};
  const MlpModel warm = mlp_init(cfg, RngStream(1));
  Dataset d;
  d.x = Matrix(10, 2);
  d.y.assign(10, 0.0);
  RngStream rng(4);
  for (auto& v : d.x.data()) v = rng.normal();

  StopPolicy pol = StopPolicy::patience_rule(5, 0.75, 0);
  const EarlyStopResult res = early_stop_train(warm, d, pol, RngStream(2));
  const MlpModel& out = std::get<MlpModel>(res.model);
  for (std::size_t l = 0; l < warm.weights.size(); ++l)
    CHECK(out.weights[l].data() == warm.weights[l].data());
}

TEST_CASE("early_stop_train end to end on both model families") {
  RngStream rng(12);
  Dataset d;
  d.x = Matrix(120, 3);
  d.y.resize(120);
  for (auto& v : d.x.data()) v = rng.normal();
  for (std::size_t i = 0; i < 120; ++i)
    d.y[i] = 1.5 * d.x(i, 0) - d.x(i, 2) + 0.2 * rng.normal();

  SECTION("mlp") {
    MlpConfig cfg;
    cfg.widths = {3, 64, 1};
    cfg.eta0 = 0.2;
    const MlpModel warm = mlp_init(cfg, RngStream(3));
    const double warm_loss = mse_loss(mlp_forward(warm, d.x), d.y);
    const EarlyStopResult res =
        early_stop_train(warm, d, StopPolicy::patience_rule(10, 0.75, 400), RngStream(5));
    CHECK(res.best_epoch > 0);
    const double out_loss = mse_loss(predict(res.model, d.x), d.y);
    CHECK(out_loss < warm_loss);
    CHECK(res.history.front().epoch == 0);
    CHECK(res.history.back().epoch >= res.best_epoch);
  }

  SECTION("gbdt fixed-step policy") {
    GbdtConfig cfg;
    cfg.depth = 2;
    cfg.borders = 8;
    cfg.beta = 10.0;
    cfg.epsilon = 0.5;
    GbdtEnsemble empty;
    empty.config = cfg;
    const EarlyStopResult res =
        early_stop_train(empty, d, StopPolicy::fixed(30), RngStream(5));
    const GbdtEnsemble& out = std::get<GbdtEnsemble>(res.model);
    CHECK(out.trees.size() == 30);
    CHECK(mse_loss(predict(res.model, d.x), d.y) < mse_loss(std::vector<double>(120, 0.0), d.y));
  }

  SECTION("t_max rule computes a finite budget and trains that long") {
    GbdtConfig cfg;
    cfg.depth = 1;
    cfg.borders = 2;
    cfg.beta = 100.0;
    cfg.epsilon = 0.5;
    GbdtEnsemble empty;
    empty.config = cfg;
    Dataset disc = d;
    for (auto& v : disc.x.data()) v = std::floor(2.0 * v);
    const EarlyStopResult res =
        early_stop_train(empty, disc, StopPolicy::t_max_rule(0.5, 1.0), RngStream(5));
    const GbdtEnsemble& out = std::get<GbdtEnsemble>(res.model);
    CHECK(out.trees.size() == static_cast<std::size_t>(res.best_epoch));
    CHECK(res.best_epoch > 0);
  }
}

TEST_CASE("history csv export") {
  std::vector<TrainHistoryRow> h = {{0, 1.0, 2.0, 0.0}, {1, 0.5, 1.5, 3.25}};
  const std::string path =
      (std::filesystem::temp_directory_path() / "vif_history_test.csv").string();
  write_history_csv(h, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,val_loss,wall_ms");
  std::getline(in, line);
  CHECK(line == "0,1,2,0");
  std::remove(path.c_str());
}
