#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmcoord/dataset.hpp"
#include "mmcoord/encoder.hpp"

namespace mmcoord {

/// CLIP's initial temperature, 1 / 0.07.
inline const double kDefaultLogTau = std::log(1.0 / 0.07);

/// One projection head per modality (in dataset order) plus the shared
/// log-temperature.
struct Model {
  CoordinationSpace space;
  std::vector<ProjectionParams> encoders;
  double log_tau = kDefaultLogTau;

  std::size_t modality_count() const { return encoders.size(); }
  std::size_t encoder_index(std::string_view modality) const;
  const ProjectionParams& encoder(std::string_view modality) const;

  /// Same layout, every value zero.
  Model zeros_like() const;
  bool all_finite() const;
};

/// Gradients mirror the parameter layout; `log_tau` holds d(loss)/d(log_tau).
using Gradients = Model;

/// Each modality's head is seeded from mix_seed(seed, modality index).
Model init_model(std::span<const ModalitySpec> modalities, const CoordinationSpace& space,
                 std::uint64_t seed, double log_tau = kDefaultLogTau);

/// Flat view of every parameter tensor, named "<modality>/<tensor>"; the
/// temperature appears last as the scalar "log_tau".
struct NamedTensor {
  std::string name;
  std::span<double> data;
  std::vector<std::size_t> shape;
  bool decays = false;
};
struct ConstNamedTensor {
  std::string name;
  std::span<const double> data;
  std::vector<std::size_t> shape;
  bool decays = false;
};

std::vector<NamedTensor> named_tensors(Model& model);
std::vector<ConstNamedTensor> named_tensors(const Model& model);

std::size_t parameter_count(const Model& model);

}  // namespace mmcoord
