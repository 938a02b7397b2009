#include "mmcoord/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmcoord/error.hpp"

namespace mmcoord {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fixed-order dot product: dot(a, b) and dot(b, a) are bit-identical.
double dot(const double* a, const double* b, Eigen::Index n) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

Vector clamped_norms(const Matrix& a) {
  Vector n(a.rows());
  for (Eigen::Index p = 0; p < a.rows(); ++p) {
    n(p) = std::max(std::sqrt(dot(a.row(p).data(), a.row(p).data(), a.cols())), kNormFloor);
  }
  return n;
}

// d/dx of x / max(|x|, eps), applied to the upstream gradient g.
void backprop_row_normalization(const Matrix& x, const Vector& norms, const Matrix& d_unit,
                                Matrix& d_x) {
  for (Eigen::Index p = 0; p < x.rows(); ++p) {
    const double n = norms(p);
    if (n > kNormFloor) {
      const auto unit = x.row(p) / n;
      d_x.row(p) += (d_unit.row(p) - unit * unit.dot(d_unit.row(p))) / n;
    } else {
      d_x.row(p) += d_unit.row(p) / kNormFloor;
    }
  }
}

}  // namespace

SimilarityMatrix SimilarityMatrix::transposed() const {
  return SimilarityMatrix{values.transpose(), db_modality, query_modality};
}

SimilarityMatrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw_validation("shape mismatch in cosine_similarity_matrix: " + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
  const Vector na = clamped_norms(a);
  const Vector nb = clamped_norms(b);
  SimilarityMatrix s;
  s.values.resize(a.rows(), b.rows());
  for (Eigen::Index p = 0; p < a.rows(); ++p) {
    for (Eigen::Index q = 0; q < b.rows(); ++q) {
      s.values(p, q) = dot(a.row(p).data(), b.row(q).data(), a.cols()) / (na(p) * nb(q));
    }
  }
  return s;
}

Matrix normalize_rows(const Matrix& a) {
  const Vector n = clamped_norms(a);
  Matrix out = a;
  for (Eigen::Index p = 0; p < a.rows(); ++p) out.row(p) /= n(p);
  return out;
}

void cosine_similarity_backward(const Matrix& a, const Matrix& b, const Matrix& d_s, Matrix& d_a,
                                Matrix& d_b) {
  const Vector na = clamped_norms(a);
  const Vector nb = clamped_norms(b);
  Matrix ua = a;
  Matrix ub = b;
  for (Eigen::Index p = 0; p < a.rows(); ++p) ua.row(p) /= na(p);
  for (Eigen::Index q = 0; q < b.rows(); ++q) ub.row(q) /= nb(q);

  const Matrix d_ua = d_s * ub;
  const Matrix d_ub = d_s.transpose() * ua;
  backprop_row_normalization(a, na, d_ua, d_a);
  backprop_row_normalization(b, nb, d_ub, d_b);
}

TargetMatrix build_target_matrix(std::span<const Matrix> same_view_sims, double threshold) {
  if (same_view_sims.empty()) throw_validation("build_target_matrix needs at least one modality");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw_validation("target threshold must lie in (0, 1)");
  }
  const Eigen::Index B = same_view_sims.front().rows();
  for (const auto& s : same_view_sims) {
    if (s.rows() != B || s.cols() != B) throw_validation("shape mismatch in build_target_matrix");
  }

  TargetMatrix t;
  t.values = Matrix::Zero(B, B);
  for (Eigen::Index p = 0; p < B; ++p) {
    for (Eigen::Index q = 0; q < B; ++q) {
      if (p == q) {
        t.values(p, q) = 1.0;
        continue;
      }
      double best = kNegInf;
      for (const auto& s : same_view_sims) best = std::max(best, s(p, q));
      t.values(p, q) = best > threshold ? 1.0 : 0.0;
    }
  }
  return t;
}

TargetMatrix target_from_batch(const Batch& batch, double threshold) {
  std::vector<Matrix> sims;
  sims.reserve(batch.modality_count());
  for (std::size_t m = 0; m < batch.modality_count(); ++m) {
    Matrix s = cosine_similarity_matrix(batch.inputs[m], batch.inputs[m]).values;
    const auto& present = batch.presence[m];
    for (Eigen::Index p = 0; p < s.rows(); ++p) {
      for (Eigen::Index q = 0; q < s.cols(); ++q) {
        if (!present[static_cast<std::size_t>(p)] || !present[static_cast<std::size_t>(q)]) {
          s(p, q) = kNegInf;
        }
      }
    }
    sims.push_back(std::move(s));
  }
  return build_target_matrix(sims, threshold);
}

bool Mask::passes(Eigen::Index p, Eigen::Index q) const {
  return kind == MaskKind::contrastive ? values(p, q) == 0.0 : values(p, q) == 1.0;
}

Mask Mask::transposed() const { return Mask{kind, values.transpose()}; }

Mask build_mask(std::span<const std::uint8_t> query_present, std::span<const std::uint8_t> db_present,
                MaskKind kind) {
  const double pass = kind == MaskKind::contrastive ? 0.0 : 1.0;
  const double fail = kind == MaskKind::contrastive ? kNegInf : 0.0;
  Mask mask;
  mask.kind = kind;
  mask.values.resize(static_cast<Eigen::Index>(query_present.size()),
                     static_cast<Eigen::Index>(db_present.size()));
  for (std::size_t p = 0; p < query_present.size(); ++p) {
    for (std::size_t q = 0; q < db_present.size(); ++q) {
      mask.values(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) =
          query_present[p] && db_present[q] ? pass : fail;
    }
  }
  return mask;
}

}  // namespace mmcoord
