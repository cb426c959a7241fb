#pragma once

#include <memory>
#include <variant>

#include "vif/dataset.hpp"
#include "vif/gbdt.hpp"
#include "vif/kernel.hpp"
#include "vif/mlp.hpp"

namespace vif {

// The two trainable families behind one value type. Models are immutable;
// training produces new values.
using FittedModel = std::variant<MlpModel, GbdtEnsemble>;
using ModelConfig = std::variant<MlpConfig, GbdtConfig>;

inline std::vector<double> predict(const FittedModel& m, const Matrix& x) {
  return std::visit(
      [&](const auto& model) {
        if constexpr (std::is_same_v<std::decay_t<decltype(model)>, MlpModel>)
          return mlp_forward(model, x);
        else
          return model.predict(x);
      },
      m);
}

// Fresh untrained model: initialized parameters for an MLP, an empty ensemble
// for GBDT (trees are grown during training).
inline FittedModel make_model(const ModelConfig& cfg, RngStream rng) {
  if (std::holds_alternative<MlpConfig>(cfg)) return mlp_init(std::get<MlpConfig>(cfg), rng);
  GbdtEnsemble e;
  e.config = std::get<GbdtConfig>(cfg);
  e.config.validate();
  return e;
}

inline ModelConfig config_of(const FittedModel& m) {
  if (std::holds_alternative<MlpModel>(m)) return std::get<MlpModel>(m).config;
  return std::get<GbdtEnsemble>(m).config;
}

// Function-space step size of one training iteration; the scale on which the
// kernel stopping rules measure time.
inline double kernel_step(const FittedModel& m) {
  if (std::holds_alternative<MlpModel>(m)) return std::get<MlpModel>(m).config.eta0;
  return std::get<GbdtEnsemble>(m).config.epsilon;
}

// Kernel matrix induced by the model at its current parameters on the given
// rows: the tangent kernel for an MLP, the stationary tree kernel for GBDT.
inline KernelMatrix model_kernel(const FittedModel& m, const Dataset& data) {
  if (std::holds_alternative<MlpModel>(m))
    return empirical_ntk(std::get<MlpModel>(m), data.x);
  return stationary_kernel(data, std::get<GbdtEnsemble>(m).config);
}

// Uniform trainer interface over both families, used by the early-stopping
// driver: step() runs one epoch (one full-batch gradient step / one boosting
// iteration), mark_best() checkpoints the current state.
class MlpTrainerAdapter {
 public:
  MlpTrainerAdapter(MlpModel model, const Matrix& x, std::vector<double> y)
      : model_(std::move(model)), best_(model_), x_(x), y_(std::move(y)) {}

  void attach_validation(const Matrix& x, std::vector<double> y) {
    val_x_ = x;
    val_y_ = std::move(y);
    has_val_ = true;
  }

  void step() { grad_step_inplace(model_, x_, y_, model_.config.param_step(), step_ws_); }
  double train_loss() const { return eval_loss(x_, y_, eval_ws_); }
  double val_loss() const { return has_val_ ? eval_loss(val_x_, val_y_, val_ws_) : train_loss(); }
  void mark_best() { best_ = model_; }
  FittedModel best_model() const { return best_; }
  FittedModel current_model() const { return model_; }
  std::vector<double> current_train_predictions() const {
    detail::forward_ws(model_, x_, eval_ws_);
    return eval_ws_.pre.back().column(0);
  }

 private:
  double eval_loss(const Matrix& x, const std::vector<double>& y, MlpWorkspace& ws) const {
    detail::forward_ws(model_, x, ws);
    const Matrix& out = ws.pre.back();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double r = out(i, 0) - y[i];
      s += r * r;
    }
    return s / (2.0 * static_cast<double>(y.size()));
  }

  MlpModel model_;
  MlpModel best_;
  Matrix x_;
  std::vector<double> y_;
  bool has_val_ = false;
  Matrix val_x_;
  std::vector<double> val_y_;
  MlpWorkspace step_ws_;
  mutable MlpWorkspace eval_ws_;
  mutable MlpWorkspace val_ws_;
};

class GbdtTrainerAdapter {
 public:
  GbdtTrainerAdapter(const GbdtEnsemble& warm, const Matrix& x, std::vector<double> y,
                     RngStream rng)
      : trainer_(warm.config,
                 (warm.trees.empty() && !warm.base) ? nullptr
                                                    : std::make_shared<const GbdtEnsemble>(warm),
                 x, std::move(y), rng) {}

  void attach_validation(const Matrix& x, std::vector<double> y) {
    trainer_.attach_validation(x, std::move(y));
  }

  void step() { trainer_.step(); }
  double train_loss() const { return trainer_.train_loss(); }
  double val_loss() const { return trainer_.val_loss(); }
  void mark_best() { best_iters_ = trainer_.iterations(); }
  FittedModel best_model() const { return trainer_.snapshot(best_iters_); }
  FittedModel current_model() const { return trainer_.finish(); }

 private:
  GbdtTrainer trainer_;
  std::size_t best_iters_ = 0;
};

}  // namespace vif
