#include "mmcoord/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmcoord/error.hpp"
#include "mmcoord/random.hpp"

namespace mmcoord {
namespace {

bool any_absent(const Presence& p) {
  return std::any_of(p.begin(), p.end(), [](std::uint8_t v) { return v == 0; });
}

void check_finite(const Gradients& grads) {
  for (const auto& t : named_tensors(grads)) {
    for (double v : t.data) {
      if (!std::isfinite(v)) throw_numerical("non-finite gradient in tensor '" + t.name + "'");
    }
  }
}

}  // namespace

TotalLoss evaluate_total_loss(const Model& model, const Batch& batch, const LossConfig& config,
                              Gradients* grads) {
  const std::size_t M = model.modality_count();
  if (M < 2) throw_validation("total_loss needs at least two modalities");
  if (batch.modality_count() != M) {
    throw_validation("batch has " + std::to_string(batch.modality_count()) +
                     " modalities but the model has " + std::to_string(M));
  }
  if (batch.size() < 2) throw_validation("loss computation needs a batch of at least 2");

  std::vector<EncodeCache> caches(M);
  std::vector<Matrix> embedded(M);
  for (std::size_t m = 0; m < M; ++m) {
    embedded[m] = encode(model.encoders[m], batch.inputs[m], batch.presence[m], caches[m]);
    if (!embedded[m].allFinite()) {
      throw_numerical("non-finite encoder output for modality '" + model.encoders[m].modality + "'");
    }
  }

  const bool regression = config.family == LossFamily::pcmr;
  TargetMatrix target;
  if (regression) target = target_from_batch(batch, config.target_threshold);
  const double tau = config.tau(model.log_tau);

  std::vector<Matrix> d_embedded;
  if (grads) {
    d_embedded.reserve(M);
    for (std::size_t m = 0; m < M; ++m) d_embedded.push_back(Matrix::Zero(embedded[m].rows(), embedded[m].cols()));
  }

  TotalLoss total;
  double d_tau = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = i + 1; j < M; ++j) {
      SimilarityMatrix s = cosine_similarity_matrix(embedded[i], embedded[j]);
      s.query_modality = model.encoders[i].modality;
      s.db_modality = model.encoders[j].modality;

      const bool masked = any_absent(batch.presence[i]) || any_absent(batch.presence[j]);
      std::optional<Mask> mask;
      if (masked) {
        mask = build_mask(batch.presence[i], batch.presence[j],
                          regression ? MaskKind::regression : MaskKind::contrastive);
      }
      const Mask* mask_ptr = mask ? &*mask : nullptr;

      PairLoss pair = regression
                          ? pcmr_pair_loss_with_grad(s, target, config.rho, mask_ptr)
                          : pcmc_pair_loss_with_grad(s, tau, mask_ptr, config.reduction);
      if (!std::isfinite(pair.value)) {
        throw_numerical("non-finite loss for pair " + s.query_modality + "-" + s.db_modality);
      }
      total.terms.push_back(PairTerm{s.query_modality + "-" + s.db_modality, i, j, pair.value});
      total.value += pair.value;

      if (grads) {
        cosine_similarity_backward(embedded[i], embedded[j], pair.d_s, d_embedded[i], d_embedded[j]);
        d_tau += pair.d_tau;
      }
    }
  }

  if (grads) {
    *grads = model.zeros_like();
    for (std::size_t m = 0; m < M; ++m) {
      encode_backward(model.encoders[m], caches[m], d_embedded[m], grads->encoders[m]);
    }
    const bool clamped = model.log_tau >= std::log(config.tau_max);
    grads->log_tau = config.learns_tau() && !clamped ? d_tau * tau : 0.0;
    check_finite(*grads);
  }
  return total;
}

LossAndGrad grad_total_loss(const Model& model, const Batch& batch, const LossConfig& config) {
  LossAndGrad out;
  out.loss = evaluate_total_loss(model, batch, config, &out.grads);
  return out;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

GradCheckResult finite_diff_check(const Model& model, const Batch& batch, const LossConfig& config,
                                  const GradCheckOptions& options) {
  const LossAndGrad analytic = grad_total_loss(model, batch, config);

  Model probe = model;
  auto params = named_tensors(probe);
  const auto grad_tensors = named_tensors(analytic.grads);

  struct Coord {
    std::size_t tensor;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].name == "log_tau" && !config.learns_tau()) continue;
    for (std::size_t k = 0; k < params[t].data.size(); ++k) coords.push_back({t, k});
  }
  const std::size_t keep = std::max<std::size_t>(options.max_coordinates, 200);
  if (options.max_coordinates > 0 && coords.size() > keep) {
    Rng rng(options.seed);
    rng.shuffle(std::span<Coord>(coords));
    coords.resize(keep);
  }

  GradCheckResult result;
  result.coordinates = coords.size();
  for (const auto& c : coords) {
    double& slot = params[c.tensor].data[c.index];
    const double original = slot;
    auto f = [&](double v) {
      slot = v;
      return evaluate_total_loss(probe, batch, config, nullptr).value;
    };
    const double numeric = central_difference(f, original, options.step);
    slot = original;

    const double err = relative_error(grad_tensors[c.tensor].data[c.index], numeric);
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_tensor = params[c.tensor].name;
    }
  }
  return result;
}

RandomInstance random_instance(const RandomInstanceSpec& spec) {
  if (spec.modalities < 2) throw_validation("random instance needs at least two modalities");
  if (spec.batch < 2) throw_validation("random instance needs a batch of at least 2");
  if (spec.min_input_dim < 1 || spec.max_input_dim < spec.min_input_dim) {
    throw_validation("random instance: bad input dim range");
  }
  Rng rng(mix_seed(spec.seed, 0));

  std::vector<ModalitySpec> mods;
  for (std::size_t m = 0; m < spec.modalities; ++m) {
    const std::size_t span = spec.max_input_dim - spec.min_input_dim + 1;
    mods.push_back(ModalitySpec{"m" + std::to_string(m), spec.min_input_dim + rng.below(span), {}});
  }

  RandomInstance out;
  out.model = init_model(mods, CoordinationSpace{spec.dim, spec.hidden}, mix_seed(spec.seed, 1));
  for (auto& enc : out.model.encoders) {
    for (auto& t : tensors(enc)) {
      if (t.decays) continue;
      for (double& v : t.data) v += 0.3 * rng.normal();
    }
  }
  out.model.log_tau = std::log(rng.uniform(1.0, 5.0));

  const auto B = static_cast<Eigen::Index>(spec.batch);
  Batch& batch = out.batch;
  batch.last = spec.batch;
  for (std::size_t b = 0; b < spec.batch; ++b) batch.entity_indices.push_back(b);
  for (const auto& mod : mods) {
    Matrix x(B, static_cast<Eigen::Index>(mod.dim));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    batch.inputs.push_back(std::move(x));
    batch.presence.emplace_back(spec.batch, 1);
  }
  if (spec.shared_view) batch.inputs[0].row(1) = batch.inputs[0].row(0);

  for (std::size_t b = 0; b < spec.batch; ++b) {
    std::size_t present = spec.modalities;
    for (std::size_t m = 0; m < spec.modalities; ++m) {
      if (present > 2 && rng.uniform() < spec.missing_rate) {
        batch.presence[m][b] = 0;
        batch.inputs[m].row(static_cast<Eigen::Index>(b)).setZero();
        --present;
      }
    }
  }
  return out;
}

}  // namespace mmcoord
