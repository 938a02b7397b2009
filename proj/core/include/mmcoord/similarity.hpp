#pragma once

#include <span>
#include <string>

#include "mmcoord/dataset.hpp"
#include "mmcoord/types.hpp"

namespace mmcoord {

inline constexpr double kNormFloor = 1e-12;
inline constexpr double kDefaultTargetThreshold = 0.99;

/// Cosine similarities between the rows of a query block and a database block.
struct SimilarityMatrix {
  Matrix values;
  std::string query_modality;
  std::string db_modality;

  SimilarityMatrix transposed() const;
};

/// values[p][q] = <a_p, b_q> / (max(|a_p|, eps) * max(|b_q|, eps))
SimilarityMatrix cosine_similarity_matrix(const Matrix& a, const Matrix& b);

/// Backprop through cosine_similarity_matrix: accumulates into d_a and d_b.
void cosine_similarity_backward(const Matrix& a, const Matrix& b, const Matrix& d_s, Matrix& d_a,
                                Matrix& d_b);

/// Rows scaled to unit length (rows with norm below the floor divided by it).
Matrix normalize_rows(const Matrix& a);

/// Binary B x B target: T[p][q] = 1 iff some modality's same-view similarity
/// exceeds the threshold. The diagonal is always 1.
struct TargetMatrix {
  Matrix values;
};

/// Missing views must already be -inf in `same_view_sims`.
TargetMatrix build_target_matrix(std::span<const Matrix> same_view_sims,
                                 double threshold = kDefaultTargetThreshold);

/// Same-view similarities taken on the raw batch inputs (absent views -inf),
/// so the target stays fixed through training.
TargetMatrix target_from_batch(const Batch& batch, double threshold = kDefaultTargetThreshold);

enum class MaskKind { contrastive, regression };

/// Entry (p, q) passes iff the query modality is present in sample p and the
/// database modality is present in sample q. Contrastive masks are additive
/// (0 / -inf), regression masks multiplicative (1 / 0).
struct Mask {
  MaskKind kind = MaskKind::contrastive;
  Matrix values;

  bool passes(Eigen::Index p, Eigen::Index q) const;
  Mask transposed() const;
};

Mask build_mask(std::span<const std::uint8_t> query_present, std::span<const std::uint8_t> db_present,
                MaskKind kind);

}  // namespace mmcoord
