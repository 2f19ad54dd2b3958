#include "tsa/optim.hpp"

#include <cmath>

#include "tsa/error.hpp"

namespace tsa {

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be a finite value >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
}

AdamState AdamState::zeros(std::span<MatrixXd* const> params) {
  AdamState s;
  for (const MatrixXd* p : params) {
    s.m.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    s.v.push_back(MatrixXd::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(std::span<MatrixXd* const> params, std::span<const MatrixXd> grads, AdamState& state,
               const OptimizerConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, " + std::to_string(state.m.size()) + " moment slots");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    MatrixXd& w = *params[k];
    const MatrixXd& g = grads[k];
    if (g.rows() != w.rows() || g.cols() != w.cols() || state.m[k].rows() != w.rows() ||
        state.m[k].cols() != w.cols()) {
      throw ShapeError("adam_step: gradient " + std::to_string(k) + " does not match its parameter");
    }
    const MatrixXd grad = g + cfg.weight_decay * w;
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * grad;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const auto m_hat = state.m[k].array() / c1;
    const auto v_hat = state.v[k].array() / c2;
    w.array() -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
  }
}

}  // namespace tsa
