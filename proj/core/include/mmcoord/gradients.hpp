#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "mmcoord/dataset.hpp"
#include "mmcoord/losses.hpp"
#include "mmcoord/model.hpp"

namespace mmcoord {

/// Forward pass over every modality pair; when `grads` is non-null it is
/// overwritten with exact gradients (reverse mode through pair loss,
/// similarity and encoder). Throws Error(numerical) naming the first
/// non-finite tensor.
TotalLoss evaluate_total_loss(const Model& model, const Batch& batch, const LossConfig& config,
                              Gradients* grads);

struct LossAndGrad {
  TotalLoss loss;
  Gradients grads;
};

/// d_log_tau is zero for PCMR and for a fixed temperature.
LossAndGrad grad_total_loss(const Model& model, const Batch& batch, const LossConfig& config);

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

/// (f(x + h) - f(x - h)) / 2h
double central_difference(const std::function<double(double)>& f, double x, double h);

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subsample of this
  /// many coordinates (at least 200).
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
};

/// Compares grad_total_loss against central differences of total_loss.
GradCheckResult finite_diff_check(const Model& model, const Batch& batch, const LossConfig& config,
                                  const GradCheckOptions& options = {});

/// A random model/batch pair for gradient verification.
struct RandomInstanceSpec {
  std::size_t modalities = 3;
  std::size_t dim = 8;
  std::size_t hidden = 8;
  std::size_t batch = 4;
  std::size_t min_input_dim = 3;
  std::size_t max_input_dim = 6;
  /// Per (sample, modality) probability of a missing view; every sample keeps
  /// at least two views.
  double missing_rate = 0.0;
  /// Copies sample 0's first-modality row into sample 1 (a shared view, so
  /// the regression target gets off-diagonal ones).
  bool shared_view = false;
  std::uint64_t seed = 0;
};

struct RandomInstance {
  Model model;
  Batch batch;
};

/// Inputs ~ N(0, 1); the model is freshly initialized and then has its biases
/// and LayerNorm affine terms perturbed so every parameter path is exercised.
RandomInstance random_instance(const RandomInstanceSpec& spec);

}  // namespace mmcoord
