#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <vector>

#include "vif/errors.hpp"
#include "vif/kernel.hpp"
#include "vif/model.hpp"

namespace vif {

// ---------------------------------------------------------------------------
// Spectrum-based stopping diagnostics
// ---------------------------------------------------------------------------

// Local empirical Rademacher complexity of a kernel spectrum:
//   R(rho) = sqrt( (1/N) * sum_i min(lambda_i, rho^2) ),
// with N the kernel dimension (the eigenvalue list length, zeros included).
inline double local_rademacher(const std::vector<double>& eigenvalues, double rho) {
  if (eigenvalues.empty()) throw InvalidArgumentError("local_rademacher: empty spectrum");
  if (rho < 0.0) throw InvalidArgumentError("local_rademacher: rho must be >= 0");
  const double r2 = rho * rho;
  double s = 0.0;
  for (const double lam : eigenvalues) s += std::min(std::max(lam, 0.0), r2);
  return std::sqrt(s / static_cast<double>(eigenvalues.size()));
}

// RKHS distance between two functions observed at the design points:
//   C_H^2 = (1/N) c^T K^+ c,
// where c is the vector of prediction differences and K the (1/N)-scaled
// kernel matrix. Uses the eigenvalue-truncated pseudo-inverse.
inline double hilbert_distance(const KernelMatrix& k, const std::vector<double>& c,
                               double cutoff = 1e-10) {
  if (c.size() != k.size()) throw InvalidArgumentError("hilbert_distance: dimension mismatch");
  const double q = quad_form_pinv(k.matrix(), c, cutoff);
  return std::sqrt(q / static_cast<double>(k.size()));
}

namespace detail {

// Sorted-spectrum evaluator: sum_i min(lambda_i, t) in O(log N) per query.
struct SpectrumSums {
  std::vector<double> sorted;    // ascending, clamped at 0
  std::vector<double> prefix;    // prefix sums of sorted
  explicit SpectrumSums(const std::vector<double>& eigenvalues) {
    sorted = eigenvalues;
    for (double& v : sorted) v = std::max(v, 0.0);
    std::sort(sorted.begin(), sorted.end());
    prefix.resize(sorted.size() + 1, 0.0);
    for (std::size_t i = 0; i < sorted.size(); ++i) prefix[i + 1] = prefix[i] + sorted[i];
  }
  double sum_min(double t) const {
    const std::size_t k =
        std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    return prefix[k] + t * static_cast<double>(sorted.size() - k);
  }
  double rademacher(double rho) const {
    return std::sqrt(sum_min(rho * rho) / static_cast<double>(sorted.size()));
  }
};

}  // namespace detail

// Smallest positive rho with R(rho) <= rho^2 C_H^2 / (2 e sigma), located by
// bisection on the sign change to relative tolerance 1e-8. A spectrum of all
// zeros makes every rho a solution; the lower bracket is returned.
inline double critical_radius(const std::vector<double>& eigenvalues, double c_h, double sigma) {
  if (!(c_h > 0.0)) throw InvalidArgumentError("critical_radius: C_H must be > 0");
  if (!(sigma > 0.0)) throw InvalidArgumentError("critical_radius: sigma must be > 0");
  const detail::SpectrumSums spec(eigenvalues);
  const double coef = c_h * c_h / (2.0 * std::exp(1.0) * sigma);
  auto h = [&](double rho) { return rho * rho * coef - spec.rademacher(rho); };

  double lo = 1e-12;
  if (h(lo) >= 0.0) return lo;
  double hi = 1.0;
  while (h(hi) < 0.0) {
    hi *= 2.0;
    if (hi > 1e12) throw NumericOverflowError("critical_radius: no crossing found");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (h(mid) >= 0.0)
      hi = mid;
    else
      lo = mid;
    if (hi - lo <= 1e-8 * hi) break;
  }
  return hi;
}

// Early-stopping iteration threshold for step schedule eta_tau = tau * step:
// the scan stops at the first tau where
//   R(1/sqrt(eta_tau)) > C_H^2 / (2 e sigma eta_tau)
// and returns tau - 1. The step must satisfy step <= min(1, 1/lambda_max).
inline long t_max(const std::vector<double>& eigenvalues, double c_h, double sigma, double step,
                  long cap = 10000000L) {
  if (!(step > 0.0)) throw InvalidArgumentError("t_max: step must be > 0");
  if (!(sigma > 0.0)) throw InvalidArgumentError("t_max: sigma must be > 0");
  double lmax = 0.0;
  for (const double lam : eigenvalues) lmax = std::max(lmax, lam);
  if (step > std::min(1.0, lmax > 0.0 ? 1.0 / lmax : 1.0) + 1e-12)
    throw InvalidArgumentError("t_max: step exceeds min(1, 1/lambda_max)");

  const detail::SpectrumSums spec(eigenvalues);
  const double coef = c_h * c_h / (2.0 * std::exp(1.0) * sigma);
  for (long tau = 1; tau <= cap; ++tau) {
    const double eta = static_cast<double>(tau) * step;
    if (spec.rademacher(1.0 / std::sqrt(eta)) > coef / eta) return tau - 1;
  }
  throw BudgetError("t_max: iteration cap exceeded");
}

// ---------------------------------------------------------------------------
// Error decomposition along a recorded trajectory
// ---------------------------------------------------------------------------

// Per-iteration decomposition of ||f_tau - f*||_N^2 into bias, variance and
// kernel-drift terms, measured against a frozen kernel K. The drift residual
//   delta_tau = [f_{tau+1} - f_tau + step * K (f_tau - Y)] / step
// makes the frozen-kernel recursion exact, so
//   ||f_tau - f*||_N^2 <= B_tau^2 + V_tau + D_tau^2
// holds up to floating-point error at every iteration.
struct ErrorDecomposition {
  std::vector<double> bias_sq;      // B_tau^2, non-increasing when step <= 1/lambda_max
  std::vector<double> variance;     // V_tau, non-decreasing
  std::vector<double> diff_sq;      // D_tau^2
  std::vector<double> lhs_error;    // ||f_tau - f*||_N^2
  std::vector<double> delta_norms;  // ||delta_tau||_2 per iteration

  bool bound_holds(double slack = 1e-8) const {
    for (std::size_t t = 0; t < lhs_error.size(); ++t)
      if (lhs_error[t] > bias_sq[t] + variance[t] + diff_sq[t] + slack) return false;
    return true;
  }
};

inline ErrorDecomposition decompose_error(const KernelMatrix& k,
                                          const std::vector<std::vector<double>>& trajectory,
                                          const std::vector<double>& true_f,
                                          const std::vector<double>& noise, double step) {
  if (trajectory.empty()) throw InvalidArgumentError("decompose_error: empty trajectory");
  const std::size_t n = k.size();
  if (true_f.size() != n || noise.size() != n || trajectory.front().size() != n)
    throw InvalidArgumentError("decompose_error: dimension mismatch");

  const EigenDecomposition& e = k.eig();
  const Matrix ut = transpose(e.q);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = true_f[i] + noise[i];

  // zeta* = (1/sqrt(N)) U^T (f* - f_0); w_tilde = U^T noise.
  std::vector<double> diff0(n);
  for (std::size_t i = 0; i < n; ++i) diff0[i] = true_f[i] - trajectory.front()[i];
  const std::vector<double> zeta = matvec(ut, diff0);
  const std::vector<double> wt = matvec(ut, noise);
  const double inv_n = 1.0 / static_cast<double>(n);

  const std::size_t iters = trajectory.size();
  ErrorDecomposition out;
  std::vector<double> s(n, 1.0);          // S^tau diagonal
  std::vector<double> drift_sum(n, 0.0);  // sum_i S^{tau-1-i} delta_tilde_i

  for (std::size_t tau = 0; tau < iters; ++tau) {
    double b = 0.0, v = 0.0, d = 0.0, lhs = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      b += s[j] * s[j] * zeta[j] * zeta[j] * inv_n;
      const double one_minus = 1.0 - s[j];
      v += one_minus * one_minus * wt[j] * wt[j];
      d += drift_sum[j] * drift_sum[j];
    }
    out.bias_sq.push_back(2.0 * b);
    out.variance.push_back(4.0 * inv_n * v);
    out.diff_sq.push_back(4.0 * step * step * inv_n * d);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = trajectory[tau][i] - true_f[i];
      lhs += r * r;
    }
    out.lhs_error.push_back(lhs * inv_n);

    if (tau + 1 < iters) {
      // Measured drift residual of the frozen-kernel update.
      std::vector<double> resid(n);
      for (std::size_t i = 0; i < n; ++i) resid[i] = trajectory[tau][i] - y[i];
      const std::vector<double> k_resid = matvec(k.matrix(), resid);
      std::vector<double> delta(n);
      for (std::size_t i = 0; i < n; ++i)
        delta[i] = (trajectory[tau + 1][i] - trajectory[tau][i] + step * k_resid[i]) / step;
      out.delta_norms.push_back(norm2(delta));
      const std::vector<double> dt = matvec(ut, delta);
      for (std::size_t j = 0; j < n; ++j) {
        const double shrink = 1.0 - step * std::max(e.values[j], 0.0);
        drift_sum[j] = shrink * drift_sum[j] + dt[j];
        s[j] *= shrink;
      }
    }
  }
  return out;
}

// Norms of the drift residual delta_tau = [f_{tau+1} - f_tau + step K (f_tau - y)] / step
// along a recorded prediction trajectory; zero for a frozen-kernel method.
inline std::vector<double> kernel_residual_norms(const KernelMatrix& k,
                                                 const std::vector<std::vector<double>>& trajectory,
                                                 const std::vector<double>& y, double step) {
  const std::size_t n = k.size();
  std::vector<double> out;
  for (std::size_t tau = 0; tau + 1 < trajectory.size(); ++tau) {
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = trajectory[tau][i] - y[i];
    const std::vector<double> kr = matvec(k.matrix(), resid);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (trajectory[tau + 1][i] - trajectory[tau][i] + step * kr[i]) / step;
      s += d * d;
    }
    out.push_back(std::sqrt(s));
  }
  return out;
}

// Bundle of the spectrum-driven stopping quantities for one dropped-feature
// training problem.
struct StoppingDiagnostics {
  std::vector<double> eigenvalues;
  double c_h = 0.0;
  double rho_hat = 0.0;
  long t_max = -1;            // -1 when the step precondition fails
  double step = 0.0;
  double sigma = 0.0;
  std::vector<double> delta_norms;
};

// ---------------------------------------------------------------------------
// Early-stopping training driver
// ---------------------------------------------------------------------------

struct StopPolicy {
  enum class Kind { patience, fixed_steps, t_max_rule };
  Kind kind = Kind::patience;

  // patience
  int patience = 10;
  double q_val = 0.75;
  int max_epochs = 2000;

  // fixed_steps
  long steps = 0;

  // t_max_rule
  double sigma = 1.0;
  double c_h = 1.0;

  static StopPolicy patience_rule(int p, double q_val = 0.75, int max_epochs = 2000) {
    StopPolicy s;
    s.kind = Kind::patience;
    s.patience = p;
    s.q_val = q_val;
    s.max_epochs = max_epochs;
    return s;
  }
  static StopPolicy fixed(long steps) {
    StopPolicy s;
    s.kind = Kind::fixed_steps;
    s.steps = steps;
    return s;
  }
  static StopPolicy t_max_rule(double sigma, double c_h) {
    StopPolicy s;
    s.kind = Kind::t_max_rule;
    s.sigma = sigma;
    s.c_h = c_h;
    return s;
  }
};

struct TrainHistoryRow {
  int epoch;
  double train_loss;
  double val_loss;   // NaN when the policy trains without a validation split
  double wall_ms;
};

struct EarlyStopResult {
  FittedModel model;
  std::vector<TrainHistoryRow> history;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  bool truncated = false;   // patience never fired before max_epochs
};

inline void write_history_csv(const std::vector<TrainHistoryRow>& history,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("history: cannot write file: " + path);
  out << "epoch,train_loss,val_loss,wall_ms\n";
  for (const TrainHistoryRow& r : history)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss)
        << ',' << format_double(r.wall_ms) << '\n';
}

namespace detail {

inline double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Validation-loss patience: one step per epoch, keep the checkpoint with the
// best validation loss seen, stop after `patience` epochs without an
// improvement of more than 1e-10 absolute.
template <class Trainer>
EarlyStopResult run_patience(Trainer& tr, int patience, int max_epochs) {
  EarlyStopResult res;
  const double t0 = now_ms();
  double best = tr.val_loss();
  tr.mark_best();
  res.history.push_back({0, tr.train_loss(), best, 0.0});
  int best_epoch = 0;
  int epoch = 0;
  while (epoch < max_epochs) {
    ++epoch;
    tr.step();
    const double val = tr.val_loss();
    res.history.push_back({epoch, tr.train_loss(), val, now_ms() - t0});
    if (val < best - 1e-10) {
      best = val;
      best_epoch = epoch;
      tr.mark_best();
    }
    if (epoch - best_epoch >= patience) break;
  }
  res.model = tr.best_model();
  res.best_epoch = best_epoch;
  res.best_val_loss = best;
  res.truncated = (epoch >= max_epochs) && (epoch - best_epoch < patience);
  return res;
}

template <class Trainer>
EarlyStopResult run_fixed(Trainer& tr, long steps) {
  EarlyStopResult res;
  const double t0 = now_ms();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  res.history.push_back({0, tr.train_loss(), nan, 0.0});
  for (long t = 1; t <= steps; ++t) {
    tr.step();
    res.history.push_back({static_cast<int>(t), tr.train_loss(), nan, now_ms() - t0});
  }
  tr.mark_best();
  res.model = tr.best_model();
  res.best_epoch = static_cast<int>(steps);
  return res;
}

}  // namespace detail

// Warm-start early-stopping training on (already feature-dropped) data.
//  - patience:   inner train/validation split at fraction q_val, one training
//                iteration per epoch, best-checkpoint return.
//  - fixed:      exactly `steps` iterations on the whole set.
//  - t_max_rule: the iteration budget is computed from the warm-start kernel
//                spectrum, the supplied C_H and noise level, then trained as
//                a fixed run.
inline EarlyStopResult early_stop_train(const FittedModel& warm_start, const Dataset& dropped_train,
                                        const StopPolicy& policy, RngStream rng) {
  auto run = [&](auto&& make_trainer) -> EarlyStopResult {
    if (policy.kind == StopPolicy::Kind::patience) {
      if (policy.max_epochs == 0) {
        EarlyStopResult res;
        res.model = warm_start;
        return res;
      }
      auto [tr_part, val_part] =
          split(dropped_train, SplitPlan(policy.q_val, rng.substream("val-split")));
      auto tr = make_trainer(tr_part);
      tr.attach_validation(val_part.x, val_part.y);
      return detail::run_patience(tr, policy.patience, policy.max_epochs);
    }
    long steps = policy.steps;
    if (policy.kind == StopPolicy::Kind::t_max_rule) {
      const KernelMatrix k = model_kernel(warm_start, dropped_train);
      steps = t_max(k.eigenvalues(), policy.c_h, policy.sigma, kernel_step(warm_start));
    }
    auto tr = make_trainer(dropped_train);
    return detail::run_fixed(tr, steps);
  };

  if (std::holds_alternative<MlpModel>(warm_start)) {
    return run([&](const Dataset& d) {
      return MlpTrainerAdapter(std::get<MlpModel>(warm_start), d.x, d.y);
    });
  }
  return run([&](const Dataset& d) {
    return GbdtTrainerAdapter(std::get<GbdtEnsemble>(warm_start), d.x, d.y,
                              rng.substream("boost"));
  });
}

}  // namespace vif
