#ifndef MTLAB_SVD_HPP
#define MTLAB_SVD_HPP

#include <cstdint>
#include <utility>

#include "mtlab/matrix.hpp"

namespace mtlab {

// Relative cutoff shared by every rank decision in the library: singular
// values at or below kPinvRelTol * sigma_max count as zero.
inline constexpr double kPinvRelTol = 1e-12;

// Thin SVD A = U diag(sigma) V^T with p = min(rows, cols) columns.
// Invariants: sigma sorted descending and nonnegative; U and V have
// orthonormal columns; the first nonzero entry of each column of U is
// nonnegative (sign fixed by flipping the U/V pair).
struct SvdResult {
  DenseMatrix u;
  Vec sigma;
  DenseMatrix v;
};

// Deterministic thin SVD via Householder QR followed by one-sided Jacobi
// on the triangular factor. Throws NumericalError if Jacobi fails to
// converge within the sweep cap (60).
SvdResult svd(const DenseMatrix& a);

DenseMatrix reconstruct(const SvdResult& s);

// Moore-Penrose pseudo-inverse. Singular values below 1e-12 * sigma_max are
// treated as zero.
DenseMatrix pinv(const DenseMatrix& a);

// x = pinv(A) y without forming the pseudo-inverse explicitly.
Vec pinv_apply(const DenseMatrix& a, const Vec& y);
Vec pinv_apply(const SvdResult& s, const Vec& y);

// Best rank-r approximation factors (truncated SVD). Requires 1 <= r <= min(m,n).
SvdResult rank_r_approx(const DenseMatrix& a, std::size_t r);

// sigma_max / sigma_min. Returns +infinity when sigma_min < 1e-12 * sigma_max.
// Zero matrix -> ArgumentError.
double condition_number(const DenseMatrix& a);

// (cos, sin) of the angle between two nonzero vectors; cos keeps its sign,
// sin is nonnegative, cos clamped to [-1, 1].
std::pair<double, double> cos_sin(const Vec& a, const Vec& b);

// Haar-ish random orthonormal d x d matrix: QR of a seeded gaussian matrix
// with the Q columns sign-fixed by the R diagonal.
DenseMatrix random_orthonormal(std::size_t d, std::uint64_t seed);

// Householder QR with thin Q (m x n, requires m >= n); R is n x n upper
// triangular.
struct QrResult {
  DenseMatrix q;
  DenseMatrix r;
};
QrResult householder_qr(const DenseMatrix& a);

// Orthonormal basis of the column span: left singular vectors with
// sigma > 1e-12 * sigma_max. Zero matrix yields a 0-column result.
DenseMatrix orthonormal_basis(const DenseMatrix& a);

// Cosines of principal angles between the column spans of a and b
// (inputs orthonormalized internally), descending, clamped to [0, 1].
Vec principal_cosines(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace mtlab

#endif
