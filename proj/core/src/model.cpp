#include "mmcoord/model.hpp"

#include <cmath>

#include "mmcoord/error.hpp"
#include "mmcoord/random.hpp"

namespace mmcoord {

std::size_t Model::encoder_index(std::string_view modality) const {
  for (std::size_t m = 0; m < encoders.size(); ++m) {
    if (encoders[m].modality == modality) return m;
  }
  throw_validation("model has no encoder for modality '" + std::string(modality) + "'");
}

const ProjectionParams& Model::encoder(std::string_view modality) const {
  return encoders[encoder_index(modality)];
}

Model Model::zeros_like() const {
  Model z;
  z.space = space;
  z.log_tau = 0.0;
  z.encoders.reserve(encoders.size());
  for (const auto& e : encoders) z.encoders.push_back(e.zeros_like());
  return z;
}

bool Model::all_finite() const {
  if (!std::isfinite(log_tau)) return false;
  for (const auto& e : encoders) {
    if (!e.all_finite()) return false;
  }
  return true;
}

Model init_model(std::span<const ModalitySpec> modalities, const CoordinationSpace& space,
                 std::uint64_t seed, double log_tau) {
  Model model;
  model.space = space;
  model.log_tau = log_tau;
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    model.encoders.push_back(init_projection(modalities[m], space, mix_seed(seed, m)));
  }
  return model;
}

namespace {

template <typename Out, typename ModelT>
std::vector<Out> flatten(ModelT& model) {
  std::vector<Out> out;
  for (auto& enc : model.encoders) {
    for (auto& t : tensors(enc)) {
      out.push_back(Out{enc.modality + "/" + std::string(t.name), t.data, t.shape, t.decays});
    }
  }
  out.push_back(Out{"log_tau", std::span(&model.log_tau, 1), {}, false});
  return out;
}

}  // namespace

std::vector<NamedTensor> named_tensors(Model& model) { return flatten<NamedTensor>(model); }

std::vector<ConstNamedTensor> named_tensors(const Model& model) {
  return flatten<ConstNamedTensor>(model);
}

std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& t : named_tensors(model)) n += t.data.size();
  return n;
}

}  // namespace mmcoord
