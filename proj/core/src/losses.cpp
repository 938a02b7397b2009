#include "mmcoord/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmcoord/error.hpp"
#include "mmcoord/gradients.hpp"

namespace mmcoord {

std::string_view to_string(LossFamily family) { return family == LossFamily::pcmc ? "pcmc" : "pcmr"; }
std::string_view to_string(TauMode mode) { return mode == TauMode::fixed ? "fixed" : "learned"; }
std::string_view to_string(CeReduction reduction) {
  return reduction == CeReduction::mean ? "mean" : "sum";
}

LossFamily parse_loss_family(std::string_view text) {
  if (text == "pcmc") return LossFamily::pcmc;
  if (text == "pcmr") return LossFamily::pcmr;
  throw_validation("unknown loss family '" + std::string(text) + "' (expected pcmc|pcmr)");
}

TauMode parse_tau_mode(std::string_view text) {
  if (text == "fixed") return TauMode::fixed;
  if (text == "learned") return TauMode::learned;
  throw_validation("unknown tau mode '" + std::string(text) + "' (expected fixed|learned)");
}

CeReduction parse_ce_reduction(std::string_view text) {
  if (text == "mean") return CeReduction::mean;
  if (text == "sum") return CeReduction::sum;
  throw_validation("unknown CE reduction '" + std::string(text) + "' (expected mean|sum)");
}

void LossConfig::validate() const {
  if (!(tau_max > 0.0)) throw_validation("tau_max must be positive");
  if (!std::isfinite(log_tau) || std::exp(log_tau) > tau_max * (1.0 + 1e-12)) {
    throw_validation("initial temperature must be finite and at most tau_max");
  }
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw_validation("rho must be a finite value >= 0");
  if (!(target_threshold > 0.0 && target_threshold < 1.0)) {
    throw_validation("target threshold must lie in (0, 1)");
  }
}

double LossConfig::tau(double live_log_tau) const {
  return std::exp(std::min(live_log_tau, std::log(tau_max)));
}

PairLoss ce_loss_with_grad(const SimilarityMatrix& s, double tau, const Mask* mask,
                           CeReduction reduction) {
  const Matrix& S = s.values;
  const Eigen::Index B = S.rows();
  if (B < 2 || S.cols() != B) throw_validation("ce_loss needs a square similarity block with B >= 2");
  if (mask && (mask->values.rows() != B || mask->values.cols() != B)) {
    throw_validation("shape mismatch between similarity block and mask");
  }
  if (mask && mask->kind != MaskKind::contrastive) {
    throw_validation("ce_loss expects a contrastive mask");
  }

  auto pass = [&](Eigen::Index p, Eigen::Index q) { return !mask || mask->passes(p, q); };

  PairLoss out;
  out.d_s = Matrix::Zero(B, B);
  // d(loss)/d(logit) per entry, before the reduction weight is applied.
  Matrix d_logits = Matrix::Zero(B, B);
  std::size_t rows = 0;
  double total = 0.0;

  std::vector<double> prob(static_cast<std::size_t>(B));
  for (Eigen::Index p = 0; p < B; ++p) {
    if (!pass(p, p)) continue;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (Eigen::Index q = 0; q < B; ++q) {
      if (pass(p, q)) max_logit = std::max(max_logit, tau * S(p, q));
    }
    if (!std::isfinite(max_logit)) {
      throw_validation("ce_loss: row " + std::to_string(p) + " has no unmasked column");
    }
    double denom = 0.0;
    for (Eigen::Index q = 0; q < B; ++q) {
      const auto k = static_cast<std::size_t>(q);
      prob[k] = pass(p, q) ? std::exp(tau * S(p, q) - max_logit) : 0.0;
      denom += prob[k];
    }
    total += -(tau * S(p, p) - max_logit - std::log(denom));
    for (Eigen::Index q = 0; q < B; ++q) {
      d_logits(p, q) = prob[static_cast<std::size_t>(q)] / denom - (p == q ? 1.0 : 0.0);
    }
    ++rows;
  }

  if (rows == 0) return out;
  const double weight = reduction == CeReduction::mean ? 1.0 / static_cast<double>(rows) : 1.0;
  out.value = total * weight;
  d_logits *= weight;
  out.d_s = tau * d_logits;
  out.d_tau = d_logits.cwiseProduct(S).sum();
  return out;
}

double ce_loss(const SimilarityMatrix& s, double tau, const Mask* mask, CeReduction reduction) {
  return ce_loss_with_grad(s, tau, mask, reduction).value;
}

PairLoss pcmc_pair_loss_with_grad(const SimilarityMatrix& s, double tau, const Mask* mask,
                                  CeReduction reduction) {
  PairLoss forward = ce_loss_with_grad(s, tau, mask, reduction);
  const SimilarityMatrix st = s.transposed();
  PairLoss backward;
  if (mask) {
    const Mask mt = mask->transposed();
    backward = ce_loss_with_grad(st, tau, &mt, reduction);
  } else {
    backward = ce_loss_with_grad(st, tau, nullptr, reduction);
  }
  PairLoss out;
  out.value = 0.5 * (forward.value + backward.value);
  out.d_s = 0.5 * (forward.d_s + backward.d_s.transpose());
  out.d_tau = 0.5 * (forward.d_tau + backward.d_tau);
  return out;
}

double pcmc_pair_loss(const SimilarityMatrix& s, double tau, const Mask* mask, CeReduction reduction) {
  return pcmc_pair_loss_with_grad(s, tau, mask, reduction).value;
}

PairLoss pcmr_pair_loss_with_grad(const SimilarityMatrix& s, const TargetMatrix& t, double rho,
                                  const Mask* mask) {
  const Matrix& S = s.values;
  if (S.rows() != t.values.rows() || S.cols() != t.values.cols()) {
    throw_validation("shape mismatch between similarity block and target matrix");
  }
  if (mask && (mask->values.rows() != S.rows() || mask->values.cols() != S.cols())) {
    throw_validation("shape mismatch between similarity block and mask");
  }
  if (mask && mask->kind != MaskKind::regression) {
    throw_validation("pcmr_pair_loss expects a regression mask");
  }

  Matrix residual = S - t.values;
  if (mask) residual = residual.cwiseProduct(mask->values);
  // Sequential row-major sum: masked entries add exact zeros, so the value
  // equals the norm of the pass-entry submatrix bit for bit.
  double squared = 0.0;
  for (Eigen::Index p = 0; p < residual.rows(); ++p) {
    for (Eigen::Index q = 0; q < residual.cols(); ++q) squared += residual(p, q) * residual(p, q);
  }
  const double norm = std::sqrt(squared);

  PairLoss out;
  out.value = std::pow(norm, 2.0 + rho);
  // d ||X||^(2+rho) / dX = (2+rho) ||X||^rho X
  out.d_s = (2.0 + rho) * std::pow(norm, rho) * residual;
  return out;
}

double pcmr_pair_loss(const SimilarityMatrix& s, const TargetMatrix& t, double rho, const Mask* mask) {
  return pcmr_pair_loss_with_grad(s, t, rho, mask).value;
}

TotalLoss total_loss(const Batch& batch, const Model& model, const LossConfig& config) {
  return evaluate_total_loss(model, batch, config, nullptr);
}

}  // namespace mmcoord
