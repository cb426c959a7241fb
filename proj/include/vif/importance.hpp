#pragma once

#include <bit>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "vif/dataset.hpp"
#include "vif/errors.hpp"
#include "vif/model.hpp"
#include "vif/stopping.hpp"

namespace vif {

enum class ViMethod { early_stop, dropout, retrain };

inline const char* vi_method_name(ViMethod m) {
  switch (m) {
    case ViMethod::early_stop: return "earlystop";
    case ViMethod::dropout: return "dropout";
    default: return "retrain";
  }
}

// Standard-normal quantile: rational initial guess polished with one Newton
// step through erfc, good to ~1e-13 over (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgumentError("normal_quantile: p outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  return x - (cdf - p) / pdf;
}

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
};

struct ViEstimate {
  double vi_hat = 0.0;
  std::vector<double> per_sample_t;   // t_i = (y - f_red)^2 - (y - f_full)^2 on the holdout
  double tau_hat = 0.0;               // sqrt(sample variance of t / N2)
  std::optional<ConfidenceInterval> ci;
  ViMethod method = ViMethod::early_stop;
  double wall_ms = 0.0;               // training time only
  int t_hat = -1;                     // epochs of early-stopped training, when applicable
};

namespace detail {

inline ViEstimate finalize_vi(ViMethod method, const std::vector<double>& pred_red,
                              const std::vector<double>& pred_full,
                              const std::vector<double>& y, double wall_ms, int t_hat) {
  ViEstimate est;
  est.method = method;
  est.wall_ms = wall_ms;
  est.t_hat = t_hat;
  est.per_sample_t.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r_red = y[i] - pred_red[i];
    const double r_full = y[i] - pred_full[i];
    // Factored difference of squares: exact zero for identical predictions
    // and no catastrophic cancellation for nearby ones.
    est.per_sample_t[i] = (r_red - r_full) * (r_red + r_full);
  }
  est.vi_hat = mean(est.per_sample_t);
  est.tau_hat = y.size() >= 2
                    ? std::sqrt(sample_variance(est.per_sample_t) / static_cast<double>(y.size()))
                    : 0.0;
  return est;
}

inline ViEstimate zero_vi(ViMethod method, std::size_t n2) {
  ViEstimate est;
  est.method = method;
  est.per_sample_t.assign(n2, 0.0);
  return est;
}

}  // namespace detail

// Fresh model trained from scratch on `train` under the stop policy; the
// usual way to obtain the full model before estimating importances.
inline FittedModel train_full_model(const ModelConfig& config, const Dataset& train,
                                    const StopPolicy& policy, RngStream rng) {
  const FittedModel fresh = make_model(config, rng.substream("init"));
  return early_stop_train(fresh, train, policy, rng.substream("train")).model;
}

// Warm-start early-stopping estimator: drop the features on the training
// set (training-portion means), continue training from the full model under
// the stop policy, then score both models on the holdout.
inline ViEstimate estimate_vi_earlystop(const FittedModel& full_model, const Dataset& train,
                                        const Dataset& holdout,
                                        const std::vector<std::size_t>& drop,
                                        const StopPolicy& policy, RngStream rng) {
  if (drop.empty()) return detail::zero_vi(ViMethod::early_stop, holdout.n());
  const DropSpec spec = DropSpec::from_training_means(train, drop);
  const Dataset dropped_train = drop_features(train, spec);

  const double t0 = detail::now_ms();
  const EarlyStopResult res = early_stop_train(full_model, dropped_train, policy, rng);
  const double wall = detail::now_ms() - t0;

  const std::vector<double> pred_red = predict(res.model, drop_features(holdout, spec).x);
  const std::vector<double> pred_full = predict(full_model, holdout.x);
  return detail::finalize_vi(ViMethod::early_stop, pred_red, pred_full, holdout.y, wall,
                             res.best_epoch);
}

// Dropout baseline: no training at all; the full model is evaluated on the
// mean-imputed holdout.
inline ViEstimate estimate_vi_dropout(const FittedModel& full_model, const Dataset& train,
                                      const Dataset& holdout,
                                      const std::vector<std::size_t>& drop) {
  if (drop.empty()) return detail::zero_vi(ViMethod::dropout, holdout.n());
  const DropSpec spec = DropSpec::from_training_means(train, drop);
  const std::vector<double> pred_red = predict(full_model, drop_features(holdout, spec).x);
  const std::vector<double> pred_full = predict(full_model, holdout.x);
  return detail::finalize_vi(ViMethod::dropout, pred_red, pred_full, holdout.y, 0.0, -1);
}

// Retrain baseline: a fresh model (same config, fresh initialization) is
// trained from scratch on the dropped training set under the same stopping
// budget, then compared against the supplied full model on the holdout.
inline ViEstimate estimate_vi_retrain(const FittedModel& full_model, const Dataset& train,
                                      const Dataset& holdout,
                                      const std::vector<std::size_t>& drop,
                                      const ModelConfig& config, const StopPolicy& policy,
                                      RngStream rng) {
  if (drop.empty()) {
    // Refit on the same distribution: the estimate is training noise only,
    // but both models are still evaluated honestly.
    const FittedModel fresh = make_model(config, rng.substream("init"));
    const double t0 = detail::now_ms();
    const EarlyStopResult res = early_stop_train(fresh, train, policy, rng.substream("train"));
    const double wall = detail::now_ms() - t0;
    return detail::finalize_vi(ViMethod::retrain, predict(res.model, holdout.x),
                               predict(full_model, holdout.x), holdout.y, wall, res.best_epoch);
  }
  const DropSpec spec = DropSpec::from_training_means(train, drop);
  const Dataset dropped_train = drop_features(train, spec);
  const FittedModel fresh = make_model(config, rng.substream("init"));

  const double t0 = detail::now_ms();
  const EarlyStopResult res = early_stop_train(fresh, dropped_train, policy, rng.substream("train"));
  const double wall = detail::now_ms() - t0;

  const std::vector<double> pred_red = predict(res.model, drop_features(holdout, spec).x);
  const std::vector<double> pred_full = predict(full_model, holdout.x);
  return detail::finalize_vi(ViMethod::retrain, pred_red, pred_full, holdout.y, wall,
                             res.best_epoch);
}

// Wald interval around the estimate: vi_hat +- z_{alpha/2} * tau_hat.
inline ViEstimate wald_ci(ViEstimate est, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgumentError("wald_ci: alpha outside (0,1)");
  if (est.per_sample_t.size() < 2)
    throw UndefinedVarianceError("wald_ci: needs at least two holdout points");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  est.ci = ConfidenceInterval{est.vi_hat - z * est.tau_hat, est.vi_hat + z * est.tau_hat, alpha};
  return est;
}

// ---------------------------------------------------------------------------
// Shapley values
// ---------------------------------------------------------------------------

struct ShapleyEstimate {
  std::vector<double> phi;
  std::vector<double> std_err;
  int m_samples = 0;
  ViMethod method = ViMethod::early_stop;
};

// Value of the game on a *dropped* feature set, encoded as a bitmask. The
// importance of j is the skill lost when j joins the dropped set, averaged
// over predecessor sets with the usual Shapley weights.
using DropValueFn = std::function<double(std::uint32_t)>;

class CachedDropValue {
 public:
  explicit CachedDropValue(DropValueFn fn) : fn_(std::move(fn)) {}
  double operator()(std::uint32_t mask) const {
    auto it = cache_.find(mask);
    if (it != cache_.end()) return it->second;
    const double v = fn_(mask);
    cache_.emplace(mask, v);
    return v;
  }
  std::size_t evaluations() const { return cache_.size(); }

 private:
  DropValueFn fn_;
  mutable std::unordered_map<std::uint32_t, double> cache_;
};

inline constexpr std::size_t kShapleyExactMaxFeatures = 12;

// Exact enumeration over all subsets; weight of a predecessor set of size s
// is s! (p-s-1)! / p!.
inline ShapleyEstimate shapley_exact(std::size_t p, const CachedDropValue& val) {
  if (p > kShapleyExactMaxFeatures)
    throw BudgetError("shapley_exact: feature count exceeds the enumeration budget");
  std::vector<double> fact(p + 1, 1.0);
  for (std::size_t i = 1; i <= p; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);

  ShapleyEstimate out;
  out.phi.assign(p, 0.0);
  out.std_err.assign(p, 0.0);
  out.m_samples = static_cast<int>(std::size_t{1} << p);
  const std::uint32_t full = (p == 32) ? ~0u : ((1u << p) - 1u);
  for (std::size_t j = 0; j < p; ++j) {
    const std::uint32_t bit = 1u << j;
    double phi = 0.0;
    for (std::uint32_t mask = 0; mask <= full; ++mask) {
      if (mask & bit) continue;
      const std::size_t s = static_cast<std::size_t>(std::popcount(mask));
      const double w = fact[s] * fact[p - s - 1] / fact[p];
      phi += w * (val(mask) - val(mask | bit));
    }
    out.phi[j] = phi;
  }
  return out;
}

// Permutation sampling: m independent uniform permutations per feature; the
// marginal of j against its predecessor set is an unbiased draw of the
// Shapley contribution.
inline ShapleyEstimate shapley_sampled(std::size_t p, int m, const CachedDropValue& val,
                                       RngStream rng) {
  if (m < 1) throw InvalidArgumentError("shapley_sampled: needs at least one sample");
  ShapleyEstimate out;
  out.phi.assign(p, 0.0);
  out.std_err.assign(p, 0.0);
  out.m_samples = m;
  for (std::size_t j = 0; j < p; ++j) {
    RngStream feature_rng = rng.substream(static_cast<std::uint64_t>(j));
    std::vector<double> draws(m);
    for (int k = 0; k < m; ++k) {
      const std::vector<std::uint32_t> perm = feature_rng.permutation(static_cast<std::uint32_t>(p));
      std::uint32_t mask = 0;
      for (const std::uint32_t f : perm) {
        if (f == j) break;
        mask |= 1u << f;
      }
      draws[k] = val(mask) - val(mask | (1u << j));
    }
    out.phi[j] = mean(draws);
    out.std_err[j] = std::sqrt(sample_variance(draws) / static_cast<double>(m));
  }
  return out;
}

// Model-backed value function. val(mask) is the holdout skill (negative MSE)
// of the reduced model with `mask` dropped:
//   - nothing dropped: the supplied full model;
//   - everything dropped: the constant predictor at the training response mean;
//   - otherwise: reduced model per the chosen method.
// Each mask owns a derived rng substream, so cached values do not depend on
// evaluation order.
inline DropValueFn make_model_value_fn(ViMethod method, const FittedModel& full_model,
                                       const Dataset& train, const Dataset& holdout,
                                       const ModelConfig& config, const StopPolicy& policy,
                                       RngStream rng) {
  const std::uint32_t all = (train.p() >= 32) ? ~0u : ((1u << train.p()) - 1u);
  auto skill = [](const std::vector<double>& pred, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
    return -s / static_cast<double>(y.size());
  };
  const double y_train_mean = mean(train.y);

  return [=](std::uint32_t mask) -> double {
    if (mask == 0) return skill(predict(full_model, holdout.x), holdout.y);
    if (mask == all)
      return skill(std::vector<double>(holdout.n(), y_train_mean), holdout.y);

    std::vector<std::size_t> drop;
    for (std::size_t j = 0; j < train.p(); ++j)
      if (mask & (1u << j)) drop.push_back(j);
    const DropSpec spec = DropSpec::from_training_means(train, drop);
    const Dataset dropped_holdout = drop_features(holdout, spec);

    if (method == ViMethod::dropout)
      return skill(predict(full_model, dropped_holdout.x), holdout.y);

    const Dataset dropped_train = drop_features(train, spec);
    RngStream mask_rng = rng.substream(mask);
    const FittedModel start = method == ViMethod::early_stop
                                  ? full_model
                                  : make_model(config, mask_rng.substream("init"));
    const EarlyStopResult res =
        early_stop_train(start, dropped_train, policy, mask_rng.substream("train"));
    return skill(predict(res.model, dropped_holdout.x), holdout.y);
  };
}

enum class ShapleyMode { sampled, exact };

// Full pipeline: train the full model, then estimate every feature's Shapley
// value through the cached subset game.
inline ShapleyEstimate shapley(const Dataset& train, const Dataset& holdout,
                               const ModelConfig& config, int m_samples, ShapleyMode mode,
                               ViMethod vi_method, const StopPolicy& policy, RngStream rng) {
  const FittedModel fresh = make_model(config, rng.substream("full-init"));
  const EarlyStopResult full = early_stop_train(fresh, train, policy, rng.substream("full-train"));
  const CachedDropValue val(make_model_value_fn(vi_method, full.model, train, holdout, config,
                                                policy, rng.substream("subsets")));
  ShapleyEstimate est = mode == ShapleyMode::exact
                            ? shapley_exact(train.p(), val)
                            : shapley_sampled(train.p(), m_samples, val,
                                              rng.substream("subset-sampling"));
  est.method = vi_method;
  return est;
}

}  // namespace vif
