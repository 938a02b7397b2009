#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mmcoord/dataset.hpp"
#include "mmcoord/model.hpp"
#include "mmcoord/similarity.hpp"

namespace mmcoord {

enum class LossFamily { pcmc, pcmr };
enum class TauMode { fixed, learned };
/// `mean` averages cross-entropy over contributing rows; `sum` is the plain sum.
enum class CeReduction { mean, sum };

std::string_view to_string(LossFamily family);
std::string_view to_string(TauMode mode);
std::string_view to_string(CeReduction reduction);
LossFamily parse_loss_family(std::string_view text);
TauMode parse_tau_mode(std::string_view text);
CeReduction parse_ce_reduction(std::string_view text);

struct LossConfig {
  LossFamily family = LossFamily::pcmc;
  TauMode tau_mode = TauMode::learned;
  double log_tau = kDefaultLogTau;  // initial value; the live value is Model::log_tau
  double tau_max = 100.0;
  double rho = 1.0;
  double target_threshold = kDefaultTargetThreshold;
  CeReduction reduction = CeReduction::mean;

  void validate() const;
  /// exp(log_tau) clamped to tau_max.
  double tau(double live_log_tau) const;
  /// True when d(loss)/d(log_tau) is non-zero for this configuration.
  bool learns_tau() const { return family == LossFamily::pcmc && tau_mode == TauMode::learned; }
};

/// Loss value plus its gradient with respect to the similarity block (and tau).
struct PairLoss {
  double value = 0.0;
  Matrix d_s;
  double d_tau = 0.0;
};

/// Temperature-scaled cross-entropy with the diagonal as the target class.
/// With a contrastive mask, masked columns leave the softmax and a row only
/// contributes when its own diagonal entry passes.
double ce_loss(const SimilarityMatrix& s, double tau, const Mask* mask = nullptr,
               CeReduction reduction = CeReduction::mean);
PairLoss ce_loss_with_grad(const SimilarityMatrix& s, double tau, const Mask* mask = nullptr,
                           CeReduction reduction = CeReduction::mean);

/// 1/2 (CE(S) + CE(S^T)).
double pcmc_pair_loss(const SimilarityMatrix& s, double tau, const Mask* mask = nullptr,
                      CeReduction reduction = CeReduction::mean);
PairLoss pcmc_pair_loss_with_grad(const SimilarityMatrix& s, double tau, const Mask* mask = nullptr,
                                  CeReduction reduction = CeReduction::mean);

/// ||M . (S - T)||_F^(2 + rho), M the regression mask (all ones when absent).
double pcmr_pair_loss(const SimilarityMatrix& s, const TargetMatrix& t, double rho,
                      const Mask* mask = nullptr);
PairLoss pcmr_pair_loss_with_grad(const SimilarityMatrix& s, const TargetMatrix& t, double rho,
                                  const Mask* mask = nullptr);

struct PairTerm {
  std::string label;  // "<mi>-<mj>"
  std::size_t first = 0;
  std::size_t second = 0;
  double value = 0.0;
};

struct TotalLoss {
  double value = 0.0;
  std::vector<PairTerm> terms;  // C(M, 2) entries, i < j order
};

/// Sum of the configured pair loss over every modality pair i < j.
TotalLoss total_loss(const Batch& batch, const Model& model, const LossConfig& config);

}  // namespace mmcoord
