#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "isoret/errors.hpp"
#include "isoret/hashing.hpp"

// Mean-free linear document embedding.
//
// A document is a bag of (token_id, count). Each token has a float base
// vector f(t) of dimension d. The transform is fixed once derived; there is
// nothing to train:
//
//   u(t)  = P * f(t)            remove nuisance directions (corpus mean
//                               plus any user-supplied axes)
//   w(t)  = 1 - cos(u(t), mu)   mean-distance weight in [0, 2], where mu is
//                               the corpus mean with user axes removed
//   xbar  = sum(c*w*u) / sum(c*w)
//   z     = normalize(R * xbar) R is a seeded {-1,+1} sign matrix, 256 x d
//   q     = round(z * 127)      one int8 per component, clamped to [-127,127]

namespace isoret {

inline constexpr Eigen::Index kReducedDim = 256;
inline constexpr int kQuantScale = 127;

// Tolerances shared by the whole transform.
inline constexpr double kOrthoTol = 1e-6;      // basis orthonormality
inline constexpr double kResidualDropTol = 1e-9;  // Gram-Schmidt drop
inline constexpr double kZeroNormTol = 1e-12;  // "effectively zero" norm
inline constexpr double kQuantNormTol = 1e-3;  // unit-norm check before quantizing

using BaseVector = Eigen::VectorXd;
using ReducedVector = Eigen::Matrix<double, kReducedDim, 1>;
using QuantizedVector = Eigen::Matrix<std::int8_t, kReducedDim, 1>;

template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a,
              const Eigen::MatrixBase<DerivedB>& b) {
  const double den = a.norm() * b.norm();
  if (den < kZeroNormTol) throw ZeroVector("cosine of a zero vector");
  return static_cast<double>(a.dot(b)) / den;
}

/// Orthogonal-complement projector with the projected corpus mean attached.
///
/// `basis` holds m orthonormal columns (the directions to remove); applying
/// the projector computes f - basis * (basis^T * f). `projected_mean` is the
/// corpus mean with the user-supplied nuisance axes (not the mean itself)
/// projected out; it is what token weights measure distance from.
template <typename Scalar = double>
class Projector {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Projector(Matrix basis, Vector projected_mean)
      : basis_(std::move(basis)), projected_mean_(std::move(projected_mean)) {
    const Eigen::Index d = projected_mean_.rows();
    if (d <= 0) throw InvalidDimension("projector dimension must be positive");
    if (basis_.cols() > 0 && basis_.rows() != d)
      throw DimensionMismatch(d, basis_.rows());
    if (basis_.cols() >= d)
      throw InvalidDimension("nuisance basis spans the whole space");
    if (basis_.cols() > 0) {
      const Matrix gram = basis_.transpose() * basis_;
      const double err =
          (gram - Matrix::Identity(basis_.cols(), basis_.cols()))
              .cwiseAbs()
              .maxCoeff();
      if (err > kOrthoTol)
        throw std::invalid_argument("projector basis is not orthonormal");
    }
  }

  /// Projector that removes nothing (empty basis, zero mean).
  static Projector identity(Eigen::Index dim) {
    return Projector(Matrix(dim, 0), Vector::Zero(dim));
  }

  template <typename Derived>
  Vector project(const Eigen::MatrixBase<Derived>& f) const {
    if (f.rows() != dim()) throw DimensionMismatch(dim(), f.rows());
    if (basis_.cols() == 0) return f;
    return f - basis_ * (basis_.transpose() * f);
  }

  Eigen::Index dim() const { return projected_mean_.rows(); }
  Eigen::Index rank() const { return basis_.cols(); }
  const Matrix& basis() const { return basis_; }
  const Vector& projected_mean() const { return projected_mean_; }

 private:
  Matrix basis_;
  Vector projected_mean_;
};

using ProjectorXd = Projector<double>;

namespace detail {

/// Modified Gram-Schmidt. Candidates with residual norm below
/// kResidualDropTol are dropped (dependent or numerically degenerate).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> orthonormalize(
    std::span<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> candidates,
    Eigen::Index dim) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Matrix q(dim, static_cast<Eigen::Index>(candidates.size()));
  Eigen::Index m = 0;
  for (const Vector& v : candidates) {
    if (v.rows() != dim) throw DimensionMismatch(dim, v.rows());
    Vector r = v;
    for (Eigen::Index j = 0; j < m; ++j) r -= q.col(j) * q.col(j).dot(r);
    const Scalar n = r.norm();
    if (n < Scalar(kResidualDropTol)) continue;
    q.col(m++) = r / n;
  }
  return q.leftCols(m);
}

}  // namespace detail

/// Derives the transform's projector from the corpus mean and optional
/// extra nuisance axes. The removed subspace is span(mean, axes...); the
/// attached weighting mean is the corpus mean with only the extra axes
/// projected out (the raw mean when there are none).
template <typename Scalar>
Projector<Scalar> build_projector(
    std::span<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> nuisance_axes,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& corpus_mean) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index d = corpus_mean.rows();
  if (d <= 0) throw InvalidDimension("corpus mean must be non-empty");
  if (corpus_mean.norm() < Scalar(kZeroNormTol))
    throw DegenerateMean("corpus mean norm below 1e-12");

  std::vector<Vector> all;
  all.reserve(nuisance_axes.size() + 1);
  all.push_back(corpus_mean);
  for (const Vector& a : nuisance_axes) all.push_back(a);
  auto basis = detail::orthonormalize<Scalar>(all, d);

  Vector mu = corpus_mean;
  if (!nuisance_axes.empty()) {
    auto qn = detail::orthonormalize<Scalar>(nuisance_axes, d);
    mu -= qn * (qn.transpose() * mu);
  }
  return Projector<Scalar>(std::move(basis), std::move(mu));
}

inline ProjectorXd build_projector(const std::vector<BaseVector>& nuisance_axes,
                                   const BaseVector& corpus_mean) {
  return build_projector<double>(
      std::span<const BaseVector>(nuisance_axes.data(), nuisance_axes.size()),
      corpus_mean);
}

template <typename Derived, typename Scalar>
typename Projector<Scalar>::Vector project_token(
    const Eigen::MatrixBase<Derived>& f, const Projector<Scalar>& p) {
  return p.project(f);
}

/// Weight 1 - cos(u, mu), clamped to [0, 2]. Tokens indistinguishable from
/// the mean weigh ~0, orthogonal ones ~1, opposed ones ~2. A numerically
/// zero u weighs 0 (it carries no usable direction).
template <typename DerivedU, typename DerivedM>
double token_weight(const Eigen::MatrixBase<DerivedU>& u,
                    const Eigen::MatrixBase<DerivedM>& mu) {
  const double mu_norm = mu.norm();
  if (mu_norm < kZeroNormTol)
    throw DegenerateMean("weighting mean norm below 1e-12");
  if (u.rows() != mu.rows()) throw DimensionMismatch(mu.rows(), u.rows());
  const double u_norm = u.norm();
  if (u_norm < kZeroNormTol) return 0.0;
  const double c = static_cast<double>(u.dot(mu)) / (u_norm * mu_norm);
  return std::clamp(1.0 - c, 0.0, 2.0);
}

struct WeightedToken {
  std::uint32_t token_id = 0;
  std::uint64_t count = 1;
  double weight = 0.0;
  BaseVector projected;
};

/// Count-and-weight mean: sum(c*w*u) / sum(c*w). Invariant under token
/// reordering and under splitting a count across duplicate entries.
inline BaseVector weighted_mean(std::span<const WeightedToken> tokens) {
  if (tokens.empty()) throw EmptyRepresentation("no tokens to average");
  const Eigen::Index d = tokens.front().projected.rows();
  BaseVector num = BaseVector::Zero(d);
  double den = 0.0;
  for (const WeightedToken& t : tokens) {
    if (t.projected.rows() != d) throw DimensionMismatch(d, t.projected.rows());
    const double cw = static_cast<double>(t.count) * t.weight;
    num.noalias() += cw * t.projected;
    den += cw;
  }
  if (den < kZeroNormTol)
    throw EmptyRepresentation("all token weights vanish");
  return num / den;
}

/// Seeded {-1,+1} sign matrix, kReducedDim rows by base_dim columns.
///
/// Entries are a pure function of (seed, row, column) so any two builds of
/// the same seed and dimension agree bit for bit:
///   word(seed, row, block) = splitmix64(seed ^ (row << 32) ^ block)
///   entry(row, col)        = bit 63 - (col % 64) of word(seed, row, col / 64)
///                            set bit -> +1, clear bit -> -1
/// Each 64-bit word covers 64 consecutive columns, highest bit first.
template <typename Scalar = double>
class JlMatrix {
 public:
  using Matrix =
      Eigen::Matrix<Scalar, kReducedDim, Eigen::Dynamic, Eigen::RowMajor>;

  static JlMatrix generate(std::uint64_t seed, Eigen::Index base_dim) {
    if (base_dim < kReducedDim)
      throw InvalidDimension("base dimension " + std::to_string(base_dim) +
                             " is below the reduced dimension 256");
    JlMatrix r;
    r.seed_ = seed;
    r.entries_.resize(kReducedDim, base_dim);
    for (Eigen::Index row = 0; row < kReducedDim; ++row) {
      for (Eigen::Index col = 0; col < base_dim; col += 64) {
        const std::uint64_t word =
            sign_word(seed, row, static_cast<std::uint64_t>(col) / 64);
        const Eigen::Index hi = std::min<Eigen::Index>(64, base_dim - col);
        for (Eigen::Index b = 0; b < hi; ++b)
          r.entries_(row, col + b) =
              (word >> (63 - b)) & 1u ? Scalar(1) : Scalar(-1);
      }
    }
    return r;
  }

  static std::uint64_t sign_word(std::uint64_t seed, Eigen::Index row,
                                 std::uint64_t block) {
    return splitmix64(seed ^ (static_cast<std::uint64_t>(row) << 32) ^ block);
  }

  const Matrix& entries() const { return entries_; }
  std::uint64_t seed() const { return seed_; }
  Eigen::Index base_dim() const { return entries_.cols(); }

 private:
  Matrix entries_;
  std::uint64_t seed_ = 0;
};

inline JlMatrix<double> make_jl_matrix(std::uint64_t seed,
                                       Eigen::Index base_dim) {
  return JlMatrix<double>::generate(seed, base_dim);
}

/// Projects to the reduced space and normalizes to unit length.
template <typename Derived, typename Scalar>
Eigen::Matrix<Scalar, kReducedDim, 1> jl_project(
    const Eigen::MatrixBase<Derived>& x, const JlMatrix<Scalar>& r) {
  if (x.rows() != r.base_dim()) throw DimensionMismatch(r.base_dim(), x.rows());
  if (x.norm() < kZeroNormTol) throw ZeroVector("projecting a zero vector");
  Eigen::Matrix<Scalar, kReducedDim, 1> y = r.entries() * x;
  const Scalar n = y.norm();
  if (n < Scalar(kZeroNormTol))
    throw ZeroVector("sign projection collapsed the vector to zero");
  return y / n;
}

/// Symmetric int8 quantization of a unit vector: round(z * 127), clamped to
/// [-127, 127]. -128 never appears, so negation stays lossless.
inline QuantizedVector quantize(const ReducedVector& z) {
  const double n = z.norm();
  if (std::abs(n - 1.0) > kQuantNormTol) throw NotNormalized(n);
  QuantizedVector q;
  for (Eigen::Index i = 0; i < kReducedDim; ++i) {
    const long v = std::lround(z[i] * kQuantScale);
    q[i] = static_cast<std::int8_t>(std::clamp(v, -127L, 127L));
  }
  return q;
}

inline ReducedVector dequantize(const QuantizedVector& q) {
  return q.cast<double>() / static_cast<double>(kQuantScale);
}

/// Exact cosine between two int8 vectors. Dot products and squared norms
/// are accumulated in int32 (magnitudes stay below 256 * 127^2 < 2^23) and
/// divided in double, so a vector against itself is exactly 1.0.
template <typename DerivedA, typename DerivedB>
double cosine_q(const Eigen::MatrixBase<DerivedA>& a,
                const Eigen::MatrixBase<DerivedB>& b) {
  static_assert(std::is_same_v<typename DerivedA::Scalar, std::int8_t>);
  static_assert(std::is_same_v<typename DerivedB::Scalar, std::int8_t>);
  if (a.rows() != kReducedDim || b.rows() != kReducedDim)
    throw DimensionMismatch(kReducedDim, a.rows() != kReducedDim ? a.rows()
                                                                 : b.rows());
  const Eigen::Matrix<std::int32_t, kReducedDim, 1> ai =
      a.template cast<std::int32_t>();
  const Eigen::Matrix<std::int32_t, kReducedDim, 1> bi =
      b.template cast<std::int32_t>();
  const std::int32_t na2 = ai.squaredNorm();
  const std::int32_t nb2 = bi.squaredNorm();
  if (na2 == 0 || nb2 == 0) throw ZeroVector("cosine of a zero int8 vector");
  const std::int32_t dot = ai.dot(bi);
  return static_cast<double>(dot) /
         std::sqrt(static_cast<double>(na2) * static_cast<double>(nb2));
}

/// Full document transform. `table` supplies base vectors by token id and
/// needs only `contains(id)` and `vector(id)`. Duplicate ids are merged by
/// summing counts, so token order and count splitting cannot change the
/// result.
template <typename Table>
QuantizedVector embed_document(
    std::span<const std::pair<std::uint32_t, std::uint64_t>> tokens,
    const Table& table, const ProjectorXd& projector,
    const JlMatrix<double>& jl) {
  if (projector.dim() != jl.base_dim())
    throw DimensionMismatch(jl.base_dim(), projector.dim());
  if (tokens.empty()) throw EmptyRepresentation("document has no tokens");

  std::map<std::uint32_t, std::uint64_t> counts;
  for (const auto& [id, c] : tokens) counts[id] += c;

  std::vector<WeightedToken> weighted;
  weighted.reserve(counts.size());
  for (const auto& [id, c] : counts) {
    if (!table.contains(id)) continue;
    BaseVector u = projector.project(table.vector(id));
    const double w = token_weight(u, projector.projected_mean());
    weighted.push_back(WeightedToken{id, c, w, std::move(u)});
  }
  if (weighted.empty())
    throw UnknownAllTokens("no document token has a base embedding");

  const BaseVector xbar = weighted_mean(weighted);
  return quantize(jl_project(xbar, jl));
}

}  // namespace isoret
