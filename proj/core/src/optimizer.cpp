#include "mmcoord/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "mmcoord/error.hpp"

namespace mmcoord {

std::string_view to_string(DecayMode mode) { return mode == DecayMode::decoupled ? "decoupled" : "l2"; }

DecayMode parse_decay_mode(std::string_view text) {
  if (text == "decoupled") return DecayMode::decoupled;
  if (text == "l2") return DecayMode::l2;
  throw_validation("unknown decay mode '" + std::string(text) + "' (expected decoupled|l2)");
}

OptimState init_optim_state(const Model& params, const AdamConfig& config, double lr_max) {
  OptimState state;
  state.config = config;
  state.lr_max = lr_max;
  state.first_moment = params.zeros_like();
  state.second_moment = params.zeros_like();
  return state;
}

void adam_step(OptimState& state, Model& params, const Gradients& grads, double lr) {
  if (!(lr > 0.0)) throw_validation("adam_step needs lr > 0");
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  auto p = named_tensors(params);
  const auto g = named_tensors(grads);
  auto m = named_tensors(state.first_moment);
  auto v = named_tensors(state.second_moment);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw_validation("adam_step: parameter, gradient and moment layouts differ");
  }

  for (std::size_t k = 0; k < p.size(); ++k) {
    const bool decays = p[k].decays && c.weight_decay != 0.0;
    for (std::size_t i = 0; i < p[k].data.size(); ++i) {
      double& w = p[k].data[i];
      double grad = g[k].data[i];
      if (decays && c.decay_mode == DecayMode::decoupled) w -= lr * c.weight_decay * w;
      if (decays && c.decay_mode == DecayMode::l2) grad += c.weight_decay * w;

      double& m1 = m[k].data[i];
      double& m2 = v[k].data[i];
      m1 = c.beta1 * m1 + (1.0 - c.beta1) * grad;
      m2 = c.beta2 * m2 + (1.0 - c.beta2) * grad * grad;
      const double m_hat = m1 / correction1;
      const double v_hat = m2 / correction2;
      w -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

double cosine_lr(double progress, double lr_max) {
  if (!(progress >= 0.0 && progress <= 1.0)) throw_validation("cosine_lr progress must lie in [0, 1]");
  return 0.5 * lr_max * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mmcoord
