#pragma once

#include <cstdint>
#include <string_view>

#include "mmcoord/model.hpp"

namespace mmcoord {

/// decoupled: p -= lr * wd * p before the Adam update (AdamW);
/// l2: wd * p is added to the gradient.
enum class DecayMode { decoupled, l2 };

std::string_view to_string(DecayMode mode);
DecayMode parse_decay_mode(std::string_view text);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.2;
  DecayMode decay_mode = DecayMode::decoupled;
};

struct OptimState {
  AdamConfig config;
  double lr_max = 1e-4;
  std::uint64_t step = 0;
  Model first_moment;
  Model second_moment;
};

OptimState init_optim_state(const Model& params, const AdamConfig& config, double lr_max);

/// One bias-corrected Adam step. Biases, LayerNorm affine terms and log_tau
/// are never decayed.
void adam_step(OptimState& state, Model& params, const Gradients& grads, double lr);

/// 0.5 * lr_max * (1 + cos(pi * progress)), progress in [0, 1].
double cosine_lr(double progress, double lr_max);

}  // namespace mmcoord
