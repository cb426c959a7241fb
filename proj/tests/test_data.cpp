#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vif/dataset.hpp"

using namespace vif;

namespace {

Dataset tiny_dataset() {
  Dataset d;
  d.x = Matrix(3, 2, {1.0, 10.0, 2.0, 20.0, 3.0, 30.0});
  d.y = {0.5, 1.5, 2.5};
  return d;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("drop_features identity, mean replacement, idempotence") {
  const Dataset d = tiny_dataset();

  const Dataset same = drop_features(d, DropSpec{});
  CHECK(same.x.data() == d.x.data());
  CHECK(same.y == d.y);

  const DropSpec spec = DropSpec::from_training_means(d, {0});
  const Dataset dropped = drop_features(d, spec);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(dropped.x(i, 0) == 2.0);          // mean of 1,2,3
    CHECK(dropped.x(i, 1) == d.x(i, 1));    // untouched column
  }
  CHECK(dropped.y == d.y);

  const Dataset twice = drop_features(dropped, spec);
  CHECK(twice.x.data() == dropped.x.data());
}

TEST_CASE("drop_features rejects out-of-range index") {
  const Dataset d = tiny_dataset();
  DropSpec bad;
  bad.indices = {5};
  bad.replacement = {0.0};
  CHECK_THROWS_AS(drop_features(d, bad), InvalidArgumentError);
  CHECK_THROWS_AS(DropSpec::from_training_means(d, {2}), InvalidArgumentError);
}

TEST_CASE("split sizes, partition property, determinism") {
  Dataset d;
  d.x = Matrix(4, 1, {1.0, 2.0, 3.0, 4.0});
  d.y = {1.0, 2.0, 3.0, 4.0};

  auto [a, b] = split(d, SplitPlan(0.75, RngStream(77)));
  CHECK(a.n() == 3);
  CHECK(b.n() == 1);

  std::vector<double> all = a.y;
  all.insert(all.end(), b.y.begin(), b.y.end());
  std::sort(all.begin(), all.end());
  CHECK(all == d.y);

  auto [a2, b2] = split(d, SplitPlan(0.75, RngStream(77)));
  CHECK(a.y == a2.y);
  CHECK(b.y == b2.y);
}

TEST_CASE("split is a partition on larger data") {
  RngStream rng(5);
  Dataset d;
  d.x = Matrix(101, 2);
  d.y.resize(101);
  for (std::size_t i = 0; i < 101; ++i) {
    d.x(i, 0) = static_cast<double>(i);
    d.y[i] = static_cast<double>(i);
  }
  auto [a, b] = split(d, SplitPlan(0.3, rng));
  CHECK(a.n() + b.n() == 101);
  std::vector<double> all = a.y;
  all.insert(all.end(), b.y.begin(), b.y.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 101; ++i) CHECK(all[i] == static_cast<double>(i));
}

TEST_CASE("gen_correlated_linear reports the closed-form truth") {
  const std::vector<double> beta = {1.5, 1.2, 1.0, 0.0, 0.0, 0.0};
  CHECK(gen_correlated_linear(0.0, beta, 1.0, 1.0, 10, RngStream(1)).true_vi_1 ==
        Catch::Approx(2.25).margin(1e-12));
  CHECK(gen_correlated_linear(1.0, beta, 1.0, 1.0, 10, RngStream(1)).true_vi_1 ==
        Catch::Approx(0.0).margin(1e-12));
  CHECK(gen_correlated_linear(0.5, beta, 1.0, 1.0, 10, RngStream(1)).true_vi_1 ==
        Catch::Approx(1.6875).margin(1e-12));
}

TEST_CASE("gen_correlated_linear sample moments match the design") {
  const std::vector<double> beta = {1.5, 1.2, 1.0, 0.0, 0.0, 0.0};
  const auto gen = gen_correlated_linear(0.5, beta, 1.0, 0.0, 20000, RngStream(9));
  const Dataset& d = gen.data;

  double c01 = 0.0, c00 = 0.0, c11 = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    c00 += d.x(i, 0) * d.x(i, 0);
    c01 += d.x(i, 0) * d.x(i, 1);
    c11 += d.x(i, 1) * d.x(i, 1);
  }
  const double r = c01 / std::sqrt(c00 * c11);
  CHECK(r > 0.45);
  CHECK(r < 0.55);

  // sigma_eps = 0, so y is exactly X beta.
  for (std::size_t i = 0; i < 50; ++i) {
    double fit = 0.0;
    for (std::size_t j = 0; j < d.p(); ++j) fit += d.x(i, j) * beta[j];
    CHECK(d.y[i] == Catch::Approx(fit).margin(1e-12));
  }
}

TEST_CASE("gen_highdim correlation structure") {
  const Dataset d = gen_highdim(HighDimKind::linear, 6, 20000, RngStream(31));
  const std::size_t n = d.n();
  auto corr = [&](std::size_t a, std::size_t b) {
    double saa = 0.0, sbb = 0.0, sab = 0.0, ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += d.x(i, a);
      mb += d.x(i, b);
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      saa += (d.x(i, a) - ma) * (d.x(i, a) - ma);
      sbb += (d.x(i, b) - mb) * (d.x(i, b) - mb);
      sab += (d.x(i, a) - ma) * (d.x(i, b) - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  CHECK(corr(0, 1) > 0.45);
  CHECK(corr(0, 1) < 0.55);
  for (std::size_t a = 2; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) CHECK(std::abs(corr(a, b)) < 0.05);
}

TEST_CASE("gen_highdim noiseless linear response is exactly in the linear span") {
  HighDimOptions opt;
  opt.sigma_eps = 0.0;
  const Dataset d = gen_highdim(HighDimKind::linear, 6, 200, RngStream(3), opt);
  const std::vector<double> beta = {5.0, 4.0, 3.0, 2.0, 1.0, 0.0};
  for (std::size_t i = 0; i < d.n(); ++i) {
    double fit = 0.0;
    for (std::size_t j = 0; j < 6; ++j) fit += beta[j] * d.x(i, j);
    CHECK(d.y[i] == Catch::Approx(fit).margin(1e-12));
  }
}

TEST_CASE("gen_logistic produces binary labels with the expected base rate") {
  const Dataset d = gen_logistic(10, 20000, RngStream(17));
  double rate = 0.0;
  for (const double v : d.y) {
    CHECK((v == 0.0 || v == 1.0));
    rate += v;
  }
  rate /= static_cast<double>(d.n());

  // Monte-Carlo estimate of E[logistic(X beta)] from an independent stream.
  RngStream mc(555);
  double expect = 0.0;
  const int m = 20000;
  for (int i = 0; i < m; ++i) {
    const double z1 = mc.normal();
    const double z2 = mc.normal();
    double lin = 0.0;
    std::vector<double> row(10);
    row[0] = z1;
    row[1] = 0.5 * z1 + std::sqrt(0.75) * z2;
    for (std::size_t j = 2; j < 10; ++j) row[j] = mc.normal();
    for (std::size_t j = 0; j < 10; ++j) lin += 10.0 * static_cast<double>(j) * row[j];
    expect += 1.0 / (1.0 + std::exp(-lin));
  }
  expect /= m;
  CHECK(std::abs(rate - expect) < 0.03);
}

TEST_CASE("csv load smoke and round trip") {
  const std::string path = temp_path("vif_test_smoke.csv");
  {
    std::ofstream out(path);
    out << "a,b,target\n1.5,2,3\n-4,5e-1,6\n";
  }
  const Dataset d = load_csv(path, "target");
  CHECK(d.n() == 2);
  CHECK(d.p() == 2);
  CHECK(d.feature_names == std::vector<std::string>{"a", "b"});
  CHECK(d.x(0, 0) == 1.5);
  CHECK(d.y[1] == 6.0);

  // Round trip with awkward values preserves bits.
  Dataset orig;
  orig.x = Matrix(2, 2, {0.1, 1.0 / 3.0, -2.5e-17, 123456.789012345});
  orig.y = {std::nextafter(1.0, 2.0), -0.0};
  const std::string rt = temp_path("vif_test_roundtrip.csv");
  save_csv(orig, rt);
  const Dataset back = load_csv(rt, "target");
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::memcmp(&back.y[i], &orig.y[i], sizeof(double)) == 0);
    for (std::size_t j = 0; j < 2; ++j) {
      const double a = back.x(i, j), b = orig.x(i, j);
      CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
    }
  }
  std::remove(path.c_str());
  std::remove(rt.c_str());
}

TEST_CASE("csv errors carry locations") {
  const std::string path = temp_path("vif_test_bad.csv");
  {
    std::ofstream out(path);
    out << "a,target\n1,NaN\n";
  }
  try {
    load_csv(path, "target");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row == 2);
    CHECK(e.column == 2);
  }

  {
    std::ofstream out(path);
    out << "a,target\n1,2,3\n";
  }
  CHECK_THROWS_AS(load_csv(path, "target"), ParseError);
  CHECK_THROWS_AS(load_csv(path, "missing_col"), ParseError);
  std::remove(path.c_str());
}
