#include "mmcoord/encoder.hpp"

#include <cmath>

#include "mmcoord/error.hpp"
#include "mmcoord/random.hpp"

namespace mmcoord {

void CoordinationSpace::validate() const {
  if (dim < 2) throw_validation("coordination space dim must be at least 2");
  if (hidden < 1) throw_validation("hidden width must be at least 1");
}

ProjectionParams ProjectionParams::zeros_like() const {
  ProjectionParams z;
  z.modality = modality;
  z.w0 = Matrix::Zero(w0.rows(), w0.cols());
  z.b0 = Vector::Zero(b0.size());
  z.w1 = Matrix::Zero(w1.rows(), w1.cols());
  z.b1 = Vector::Zero(b1.size());
  z.w2 = Matrix::Zero(w2.rows(), w2.cols());
  z.b2 = Vector::Zero(b2.size());
  z.gamma = Vector::Zero(gamma.size());
  z.beta = Vector::Zero(beta.size());
  return z;
}

bool ProjectionParams::all_finite() const {
  for (const auto& t : tensors(*this)) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

namespace {

template <typename View, typename Params>
std::vector<View> collect(Params& p) {
  auto mat = [](auto& m) { return std::vector<std::size_t>{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}; };
  auto vec = [](auto& v) { return std::vector<std::size_t>{static_cast<std::size_t>(v.size())}; };
  auto span_of = [](auto& t) { return std::span(t.data(), static_cast<std::size_t>(t.size())); };
  return {
      View{"W0", span_of(p.w0), mat(p.w0), true},
      View{"b0", span_of(p.b0), vec(p.b0), false},
      View{"W1", span_of(p.w1), mat(p.w1), true},
      View{"b1", span_of(p.b1), vec(p.b1), false},
      View{"W2", span_of(p.w2), mat(p.w2), true},
      View{"b2", span_of(p.b2), vec(p.b2), false},
      View{"gamma", span_of(p.gamma), vec(p.gamma), false},
      View{"beta", span_of(p.beta), vec(p.beta), false},
  };
}

void fill_uniform(Matrix& w, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
}

}  // namespace

std::vector<TensorView> tensors(ProjectionParams& params) { return collect<TensorView>(params); }

std::vector<ConstTensorView> tensors(const ProjectionParams& params) {
  return collect<ConstTensorView>(params);
}

ProjectionParams init_projection(const ModalitySpec& spec, const CoordinationSpace& space,
                                 std::uint64_t seed) {
  space.validate();
  if (spec.dim < 1) throw_validation("modality '" + spec.name + "' has dim 0");
  const auto D = static_cast<Eigen::Index>(space.dim);
  const auto H = static_cast<Eigen::Index>(space.hidden);
  const auto in = static_cast<Eigen::Index>(spec.dim);

  Rng rng(seed);
  ProjectionParams p;
  p.modality = spec.name;
  p.w0.resize(D, in);
  p.w1.resize(H, D);
  p.w2.resize(D, H);
  fill_uniform(p.w0, rng);
  fill_uniform(p.w1, rng);
  fill_uniform(p.w2, rng);
  p.b0 = Vector::Zero(D);
  p.b1 = Vector::Zero(H);
  p.b2 = Vector::Zero(D);
  p.gamma = Vector::Ones(D);
  p.beta = Vector::Zero(D);
  return p;
}

Vector layer_norm(const Vector& x, const Vector& gamma, const Vector& beta, double eps) {
  const double mean = x.mean();
  const Vector centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  return gamma.cwiseProduct(centered / std::sqrt(var + eps)) + beta;
}

Matrix encode(const ProjectionParams& params, const Matrix& inputs, std::span<const std::uint8_t> presence) {
  EncodeCache cache;
  return encode(params, inputs, presence, cache);
}

Matrix encode(const ProjectionParams& params, const Matrix& inputs, std::span<const std::uint8_t> presence,
              EncodeCache& cache) {
  if (static_cast<std::size_t>(inputs.cols()) != params.input_dim()) {
    throw_validation("shape mismatch: encoder '" + params.modality + "' expects " +
                     std::to_string(params.input_dim()) + " input columns, got " +
                     std::to_string(inputs.cols()));
  }
  if (presence.size() != static_cast<std::size_t>(inputs.rows())) {
    throw_validation("shape mismatch: presence flags do not match input rows");
  }

  cache.rows.clear();
  for (std::size_t b = 0; b < presence.size(); ++b) {
    if (presence[b]) cache.rows.push_back(static_cast<Eigen::Index>(b));
  }
  const auto P = static_cast<Eigen::Index>(cache.rows.size());
  const auto D = static_cast<Eigen::Index>(params.dim());

  cache.x.resize(P, inputs.cols());
  for (Eigen::Index i = 0; i < P; ++i) cache.x.row(i) = inputs.row(cache.rows[static_cast<std::size_t>(i)]);

  cache.h = cache.x * params.w0.transpose();
  cache.h.rowwise() += params.b0.transpose();
  cache.pre = cache.h * params.w1.transpose();
  cache.pre.rowwise() += params.b1.transpose();
  Matrix u = cache.h + cache.pre.cwiseMax(0.0) * params.w2.transpose();
  u.rowwise() += params.b2.transpose();

  cache.normed.resize(P, D);
  cache.inv_std.resize(P);
  Matrix out = Matrix::Zero(inputs.rows(), D);
  for (Eigen::Index i = 0; i < P; ++i) {
    const double mean = u.row(i).mean();
    const auto centered = (u.row(i).array() - mean).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(D);
    cache.inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.normed.row(i) = centered * cache.inv_std(i);
    out.row(cache.rows[static_cast<std::size_t>(i)]) =
        cache.normed.row(i).cwiseProduct(params.gamma.transpose()) + params.beta.transpose();
  }
  return out;
}

void encode_backward(const ProjectionParams& params, const EncodeCache& cache, const Matrix& d_out,
                     ProjectionParams& grads) {
  const auto P = static_cast<Eigen::Index>(cache.rows.size());
  if (P == 0) return;
  const auto D = static_cast<double>(params.dim());

  Matrix d_y(P, d_out.cols());
  for (Eigen::Index i = 0; i < P; ++i) d_y.row(i) = d_out.row(cache.rows[static_cast<std::size_t>(i)]);

  grads.gamma += d_y.cwiseProduct(cache.normed).colwise().sum().transpose();
  grads.beta += d_y.colwise().sum().transpose();

  // LayerNorm: du = inv_std * (dn - mean(dn) - n * mean(dn * n))
  Matrix d_n = d_y.array().rowwise() * params.gamma.transpose().array();
  Matrix d_u(P, d_n.cols());
  for (Eigen::Index i = 0; i < P; ++i) {
    const double mean_dn = d_n.row(i).sum() / D;
    const double mean_dn_n = d_n.row(i).dot(cache.normed.row(i)) / D;
    d_u.row(i) = cache.inv_std(i) *
                 (d_n.row(i).array() - mean_dn - cache.normed.row(i).array() * mean_dn_n).matrix();
  }

  const Matrix relu = cache.pre.cwiseMax(0.0);
  grads.w2 += d_u.transpose() * relu;
  grads.b2 += d_u.colwise().sum().transpose();
  Matrix d_pre = d_u * params.w2;
  d_pre = d_pre.cwiseProduct((cache.pre.array() > 0.0).cast<double>().matrix());
  grads.w1 += d_pre.transpose() * cache.h;
  grads.b1 += d_pre.colwise().sum().transpose();

  const Matrix d_h = d_u + d_pre * params.w1;
  grads.w0 += d_h.transpose() * cache.x;
  grads.b0 += d_h.colwise().sum().transpose();
}

}  // namespace mmcoord
