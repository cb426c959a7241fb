#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vif/errors.hpp"
#include "vif/kernel.hpp"
#include "vif/matrix.hpp"
#include "vif/rng.hpp"

namespace vif {

enum class Activation { relu, softplus };
enum class Parameterization { ntk, standard };

// Fully-connected feed-forward net with scalar output, trained by full-batch
// gradient descent on the least-squares loss (1/2N)||Y - f(X)||^2.
//
// Two parameterizations:
//  - ntk:      trainable variables are unit-Gaussian draws; the forward pass
//              applies sigma_w/sqrt(n_l) to weights and sigma_b to biases.
//  - standard: weights are drawn N(0, sigma_w^2/n_l), biases N(0, sigma_b^2),
//              and used as-is.
// Both represent the same function family; they differ in training dynamics.
// The function-space step is eta0 in both cases, which means the parameter
// step is eta0 for ntk and eta0/width for standard.
struct MlpConfig {
  std::vector<std::size_t> widths;   // n_0, hidden..., 1
  Activation activation = Activation::relu;
  Parameterization parameterization = Parameterization::ntk;
  double sigma_w = std::sqrt(2.0);
  double sigma_b = 0.1;
  double eta0 = 0.5;

  void validate() const {
    if (widths.size() < 2) throw InvalidArgumentError("MlpConfig: need at least one layer");
    if (widths.back() != 1) throw InvalidArgumentError("MlpConfig: output width must be 1");
    for (const std::size_t w : widths)
      if (w == 0) throw InvalidArgumentError("MlpConfig: zero layer width");
    if (!(sigma_w > 0.0)) throw InvalidArgumentError("MlpConfig: sigma_w must be > 0");
    if (sigma_b < 0.0) throw InvalidArgumentError("MlpConfig: sigma_b must be >= 0");
    if (!(eta0 > 0.0)) throw InvalidArgumentError("MlpConfig: eta0 must be > 0");
  }

  std::size_t layers() const { return widths.size() - 1; }

  // Width of the layer feeding the readout; the normalizer for standard-mode
  // kernels and learning rates.
  std::size_t hidden_width() const { return widths[widths.size() - 2]; }

  // Parameter-space step realizing a function-space step of eta0.
  double param_step() const {
    return parameterization == Parameterization::ntk
               ? eta0
               : eta0 / static_cast<double>(hidden_width());
  }
};

struct MlpModel {
  MlpConfig config;
  std::vector<Matrix> weights;              // layer l: widths[l] x widths[l+1]
  std::vector<std::vector<double>> biases;  // layer l: widths[l+1]

  std::size_t param_count() const {
    std::size_t c = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      c += weights[l].rows() * weights[l].cols() + biases[l].size();
    return c;
  }

  double weight_scale(std::size_t l) const {
    return config.parameterization == Parameterization::ntk
               ? config.sigma_w / std::sqrt(static_cast<double>(config.widths[l]))
               : 1.0;
  }
  double bias_scale() const {
    return config.parameterization == Parameterization::ntk ? config.sigma_b : 1.0;
  }
};

inline MlpModel mlp_init(const MlpConfig& config, RngStream rng) {
  config.validate();
  MlpModel m;
  m.config = config;
  RngStream init = rng.substream("init");
  for (std::size_t l = 0; l + 1 < config.widths.size(); ++l) {
    const std::size_t nin = config.widths[l];
    const std::size_t nout = config.widths[l + 1];
    Matrix w(nin, nout);
    std::vector<double> b(nout, 0.0);
    if (config.parameterization == Parameterization::ntk) {
      for (std::size_t i = 0; i < nin; ++i)
        for (std::size_t j = 0; j < nout; ++j) w(i, j) = init.normal();
      for (std::size_t j = 0; j < nout; ++j)
        b[j] = config.sigma_b > 0.0 ? init.normal() : 0.0;
    } else {
      const double wsd = config.sigma_w / std::sqrt(static_cast<double>(nin));
      for (std::size_t i = 0; i < nin; ++i)
        for (std::size_t j = 0; j < nout; ++j) w(i, j) = wsd * init.normal();
      for (std::size_t j = 0; j < nout; ++j)
        b[j] = config.sigma_b > 0.0 ? config.sigma_b * init.normal() : 0.0;
    }
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  return m;
}

// Scratch buffers reused across training iterations; keeps the hot loop free
// of allocation and page-zeroing churn.
struct MlpWorkspace {
  std::vector<Matrix> pre;
  std::vector<Matrix> post;
  Matrix delta;
  Matrix delta_next;
};

namespace detail {

inline double act(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  // softplus, overflow-safe
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// relu'(0) is taken as 0.
inline double act_deriv(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
  if (x > 30.0) return 1.0;
  if (x < -30.0) return std::exp(x);
  return 1.0 / (1.0 + std::exp(-x));
}

struct ForwardCache {
  std::vector<Matrix> pre;    // pre-activations per layer, H_1..H_{L+1}
  std::vector<Matrix> post;   // post-activations, A_0 = X, A_1..A_L
};

inline ForwardCache forward_all(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.config.widths[0])
    throw InvalidArgumentError("mlp forward: input width mismatch");
  ForwardCache c;
  c.post.push_back(x);
  const std::size_t layers = m.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const Matrix& a = c.post.back();
    const Matrix& w = m.weights[l];
    const std::size_t nout = w.cols();
    const double ws = m.weight_scale(l);
    const double bs = m.bias_scale();
    Matrix h(x.rows(), nout);
    if (nout == 1) {
      // Readout layer: a plain dot product per row.
      const double* wc = w.data().data();
      const double b0 = bs * m.biases[l][0];
      for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* ai = a.row_ptr(i);
        double s = 0.0;
        for (std::size_t k = 0; k < w.rows(); ++k) s += ai[k] * wc[k];
        h(i, 0) = ws * s + b0;
      }
    } else {
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double* hi = h.row_ptr(i);
        for (std::size_t j = 0; j < nout; ++j) hi[j] = bs * m.biases[l][j];
        const double* ai = a.row_ptr(i);
        for (std::size_t k = 0; k < w.rows(); ++k) {
          const double v = ws * ai[k];
          const double* wk = w.row_ptr(k);
          for (std::size_t j = 0; j < nout; ++j) hi[j] += v * wk[j];
        }
      }
    }
    c.pre.push_back(h);
    if (l + 1 < layers) {
      Matrix act_out = h;
      for (double& v : act_out.data()) v = detail::act(m.config.activation, v);
      c.post.push_back(std::move(act_out));
    }
  }
  return c;
}

// Workspace-backed forward pass: ws.pre[l] holds the pre-activations of
// layer l, ws.post[l] the activations feeding layer l+1. Buffers are
// allocated once and reused.
inline void forward_ws(const MlpModel& m, const Matrix& x, MlpWorkspace& ws) {
  if (x.cols() != m.config.widths[0])
    throw InvalidArgumentError("mlp forward: input width mismatch");
  const std::size_t n = x.rows();
  const std::size_t layers = m.weights.size();
  ws.pre.resize(layers);
  ws.post.resize(layers);

  for (std::size_t l = 0; l < layers; ++l) {
    const Matrix& a = (l == 0) ? x : ws.post[l - 1];
    const Matrix& w = m.weights[l];
    const std::size_t nout = w.cols();
    const double wsc = m.weight_scale(l);
    const double bs = m.bias_scale();
    Matrix& h = ws.pre[l];
    if (h.rows() != n || h.cols() != nout) h = Matrix(n, nout);

    if (nout == 1) {
      const double* wc = w.data().data();
      const double b0 = bs * m.biases[l][0];
      for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row_ptr(i);
        double s = 0.0;
        for (std::size_t k = 0; k < w.rows(); ++k) s += ai[k] * wc[k];
        h(i, 0) = wsc * s + b0;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        double* hi = h.row_ptr(i);
        for (std::size_t j = 0; j < nout; ++j) hi[j] = bs * m.biases[l][j];
        const double* ai = a.row_ptr(i);
        for (std::size_t k = 0; k < w.rows(); ++k) {
          const double v = wsc * ai[k];
          const double* wk = w.row_ptr(k);
          for (std::size_t j = 0; j < nout; ++j) hi[j] += v * wk[j];
        }
      }
    }

    if (l + 1 < layers) {
      Matrix& act_out = ws.post[l];
      if (act_out.rows() != n || act_out.cols() != nout) act_out = Matrix(n, nout);
      const double* src = h.data().data();
      double* dst = act_out.data().data();
      for (std::size_t t = 0; t < n * nout; ++t) dst[t] = act(m.config.activation, src[t]);
    }
  }
}

}  // namespace detail

inline std::vector<double> mlp_forward(const MlpModel& m, const Matrix& x) {
  const detail::ForwardCache c = detail::forward_all(m, x);
  return c.pre.back().column(0);
}

// One full-batch gradient-descent iteration on (1/2N)||Y - f(X)||^2 with the
// given parameter-space step, updating the model in place.
inline void grad_step_inplace(MlpModel& m, const Matrix& x, const std::vector<double>& y,
                              double step, MlpWorkspace& ws) {
  if (!(step > 0.0)) throw InvalidArgumentError("grad_step: step must be > 0");
  if (y.size() != x.rows()) throw InvalidArgumentError("grad_step: y length mismatch");
  const std::size_t n = x.rows();
  const std::size_t layers = m.weights.size();
  detail::forward_ws(m, x, ws);

  // delta = d loss_sum / d H for the current layer, starting at the output
  // with the raw residual; the (step/N) factor is applied at the update.
  if (ws.delta.rows() != n || ws.delta.cols() != 1) ws.delta = Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) ws.delta(i, 0) = ws.pre[layers - 1](i, 0) - y[i];

  const double lr = step / static_cast<double>(n);
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& a = (l == 0) ? x : ws.post[l - 1];
    const double wsc = m.weight_scale(l);
    const double bs = m.bias_scale();
    const std::size_t nin = m.weights[l].rows();
    const std::size_t nout = m.weights[l].cols();
    const Matrix& delta = ws.delta;

    // Bias gradient first: it only needs column sums of delta.
    for (std::size_t j = 0; j < nout; ++j) {
      double g = 0.0;
      for (std::size_t i = 0; i < n; ++i) g += delta(i, j);
      m.biases[l][j] -= lr * bs * g;
    }

    // Backpropagated delta for the layer below, using the current weights
    // before they are overwritten.
    const bool propagate = l > 0;
    if (propagate) {
      Matrix& next = ws.delta_next;
      if (next.rows() != n || next.cols() != nin) next = Matrix(n, nin);
      const Matrix& w = m.weights[l];
      const Matrix& h_prev = ws.pre[l - 1];
      if (nout == 1) {
        const double* wc = w.data().data();
        for (std::size_t i = 0; i < n; ++i) {
          const double d0 = delta(i, 0) * wsc;
          const double* hp = h_prev.row_ptr(i);
          double* ni = next.row_ptr(i);
          for (std::size_t k = 0; k < nin; ++k)
            ni[k] = d0 * wc[k] * detail::act_deriv(m.config.activation, hp[k]);
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const double* di = delta.row_ptr(i);
          double* ni = next.row_ptr(i);
          for (std::size_t k = 0; k < nin; ++k) {
            const double* wk = w.row_ptr(k);
            double s = 0.0;
            for (std::size_t j = 0; j < nout; ++j) s += di[j] * wk[j];
            ni[k] = s * wsc * detail::act_deriv(m.config.activation, h_prev(i, k));
          }
        }
      }
    }

    Matrix& wout = m.weights[l];
    if (nout == 1) {
      double* wc = wout.data().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row_ptr(i);
        const double f = -lr * wsc * delta(i, 0);
        for (std::size_t k = 0; k < nin; ++k) wc[k] += f * ai[k];
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row_ptr(i);
        const double* di = delta.row_ptr(i);
        for (std::size_t k = 0; k < nin; ++k) {
          const double f = -lr * wsc * ai[k];
          double* wk = wout.row_ptr(k);
          for (std::size_t j = 0; j < nout; ++j) wk[j] += f * di[j];
        }
      }
    }

    if (propagate) std::swap(ws.delta, ws.delta_next);
  }

  for (std::size_t l = 0; l < layers; ++l) {
    if (!m.weights[l].all_finite())
      throw NumericOverflowError("grad_step: non-finite weight after update");
    for (const double b : m.biases[l])
      if (!std::isfinite(b)) throw NumericOverflowError("grad_step: non-finite bias after update");
  }
}

// Value-returning variant of the gradient step.
inline MlpModel grad_step(const MlpModel& m, const Matrix& x, const std::vector<double>& y,
                          double step) {
  MlpModel out = m;
  MlpWorkspace ws;
  grad_step_inplace(out, x, y, step, ws);
  return out;
}

namespace detail {

// Writes the gradient of f(x_i) with respect to the raw trainable parameters
// into row i of jac (layer order: W_0 row-major, b_0, W_1, b_1, ...).
inline void jacobian_rows(const MlpModel& m, const ForwardCache& c, std::size_t row_begin,
                          std::size_t row_end, Matrix& jac, std::size_t jac_row_offset) {
  const std::size_t layers = m.weights.size();
  for (std::size_t i = row_begin; i < row_end; ++i) {
    std::vector<std::vector<double>> deltas(layers + 1);
    deltas[layers] = {1.0};
    for (std::size_t l = layers; l-- > 1;) {
      const Matrix& w = m.weights[l];
      const double ws = m.weight_scale(l);
      const std::vector<double>& dnext = deltas[l + 1];
      std::vector<double> d(w.rows());
      for (std::size_t k = 0; k < w.rows(); ++k) {
        const double* wk = w.row_ptr(k);
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) s += dnext[j] * wk[j];
        d[k] = s * ws * act_deriv(m.config.activation, c.pre[l - 1](i, k));
      }
      deltas[l] = std::move(d);
    }

    double* out = jac.row_ptr(i - row_begin + jac_row_offset);
    std::size_t pos = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      const Matrix& w = m.weights[l];
      const double ws = m.weight_scale(l);
      const double bs = m.bias_scale();
      const double* ai = c.post[l].row_ptr(i);
      const std::vector<double>& d = deltas[l + 1];
      for (std::size_t k = 0; k < w.rows(); ++k) {
        const double f = ws * ai[k];
        for (std::size_t j = 0; j < w.cols(); ++j) out[pos++] = f * d[j];
      }
      for (std::size_t j = 0; j < w.cols(); ++j) out[pos++] = bs * d[j];
    }
  }
}

}  // namespace detail

// Row i = gradient of f at example i with respect to all raw parameters.
inline Matrix per_example_jacobian(const MlpModel& m, const Matrix& x) {
  if (x.rows() == 0) throw InvalidArgumentError("per_example_jacobian: empty input");
  const detail::ForwardCache c = detail::forward_all(m, x);
  Matrix jac(x.rows(), m.param_count());
  detail::jacobian_rows(m, c, 0, x.rows(), jac, 0);
  return jac;
}

// Empirical tangent-kernel matrix K(i,j) = (1/N) <grad f(x_i), grad f(x_j)>,
// additionally divided by the hidden width under standard parameterization.
// When the full Jacobian would exceed max_jacobian_entries, the Gram matrix
// is accumulated from row blocks instead.
inline KernelMatrix empirical_ntk(const MlpModel& m, const Matrix& x,
                                  std::size_t max_jacobian_entries = (std::size_t{1} << 27)) {
  if (x.rows() == 0) throw InvalidArgumentError("empirical_ntk: empty input");
  const std::size_t n = x.rows();
  const std::size_t np = m.param_count();
  double scale = 1.0 / static_cast<double>(n);
  if (m.config.parameterization == Parameterization::standard)
    scale /= static_cast<double>(m.config.hidden_width());

  Matrix k(n, n);
  const detail::ForwardCache c = detail::forward_all(m, x);
  if (n * np <= max_jacobian_entries) {
    Matrix jac(n, np);
    detail::jacobian_rows(m, c, 0, n, jac, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* ji = jac.row_ptr(i);
      for (std::size_t j = i; j < n; ++j) {
        const double* jj = jac.row_ptr(j);
        double s = 0.0;
        for (std::size_t t = 0; t < np; ++t) s += ji[t] * jj[t];
        k(i, j) = s * scale;
        k(j, i) = k(i, j);
      }
    }
  } else {
    const std::size_t block = std::max<std::size_t>(1, max_jacobian_entries / (2 * np));
    Matrix ja(block, np), jb(block, np);
    for (std::size_t a = 0; a < n; a += block) {
      const std::size_t ae = std::min(a + block, n);
      detail::jacobian_rows(m, c, a, ae, ja, 0);
      for (std::size_t b = a; b < n; b += block) {
        const std::size_t be = std::min(b + block, n);
        const Matrix& jbb = (b == a) ? ja : (detail::jacobian_rows(m, c, b, be, jb, 0), jb);
        for (std::size_t i = a; i < ae; ++i) {
          const double* ji = ja.row_ptr(i - a);
          for (std::size_t j = std::max(b, i); j < be; ++j) {
            const double* jj = jbb.row_ptr(j - b);
            double s = 0.0;
            for (std::size_t t = 0; t < np; ++t) s += ji[t] * jj[t];
            k(i, j) = s * scale;
            k(j, i) = k(i, j);
          }
        }
      }
    }
  }
  return KernelMatrix(std::move(k));
}

inline double mse_loss(const std::vector<double>& pred, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - y[i];
    s += r * r;
  }
  return s / (2.0 * static_cast<double>(pred.size()));
}

}  // namespace vif
