#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmcoord/dataset.hpp"
#include "mmcoord/types.hpp"

namespace mmcoord {

inline constexpr double kLayerNormEps = 1e-5;

/// Shared coordination space: output width D and feed-forward hidden width H.
struct CoordinationSpace {
  std::size_t dim = 256;
  std::size_t hidden = 256;

  void validate() const;
};

/// Learnable parameters of one modality's projection head:
///   h = W0 x + b0
///   u = h + W2 relu(W1 h + b1) + b2
///   y = gamma * normalize(u) + beta
struct ProjectionParams {
  std::string modality;
  Matrix w0;  // D x D_in
  Vector b0;  // D
  Matrix w1;  // H x D
  Vector b1;  // H
  Matrix w2;  // D x H
  Vector b2;  // D
  Vector gamma;
  Vector beta;

  std::size_t input_dim() const { return static_cast<std::size_t>(w0.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(w0.rows()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }

  /// Same shapes, all entries zero (used as gradient / moment storage).
  ProjectionParams zeros_like() const;
  bool all_finite() const;
};

/// A named view into one parameter tensor. `decays` is false for biases and
/// LayerNorm affine terms, which are excluded from weight decay.
struct TensorView {
  std::string_view name;
  std::span<double> data;
  std::vector<std::size_t> shape;
  bool decays = false;
};

struct ConstTensorView {
  std::string_view name;
  std::span<const double> data;
  std::vector<std::size_t> shape;
  bool decays = false;
};

std::vector<TensorView> tensors(ProjectionParams& params);
std::vector<ConstTensorView> tensors(const ProjectionParams& params);

/// Fan-in uniform init: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0,
/// gamma 1, beta 0. Bit-reproducible for a given seed.
ProjectionParams init_projection(const ModalitySpec& spec, const CoordinationSpace& space,
                                 std::uint64_t seed);

/// gamma * (x - mean) / sqrt(popvar + eps) + beta
Vector layer_norm(const Vector& x, const Vector& gamma, const Vector& beta,
                  double eps = kLayerNormEps);

/// Intermediate values of a forward pass over the present rows of a batch.
struct EncodeCache {
  std::vector<Eigen::Index> rows;  // batch row of each present sample
  Matrix x;                        // P x D_in
  Matrix h;                        // P x D
  Matrix pre;                      // P x H, W1 h + b1
  Matrix normed;                   // P x D, (u - mean) * inv_std
  Vector inv_std;                  // P
};

/// Encodes every present row; absent rows come back as zero rows.
Matrix encode(const ProjectionParams& params, const Matrix& inputs, std::span<const std::uint8_t> presence);
Matrix encode(const ProjectionParams& params, const Matrix& inputs, std::span<const std::uint8_t> presence,
              EncodeCache& cache);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output) (B x D).
void encode_backward(const ProjectionParams& params, const EncodeCache& cache, const Matrix& d_out,
                     ProjectionParams& grads);

}  // namespace mmcoord
