#include "mtlab/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"

namespace mtlab {

namespace {

constexpr int kJacobiSweepCap = 60;

// Column-level noise floor, relative to the Frobenius norm. Shared between
// the sweep loop and the final normalization so a column the sweeps refused
// to touch is also never promoted to a singular direction.
constexpr double kColTol = 64.0 * std::numeric_limits<double>::epsilon();

// One-sided Jacobi on the columns of w (n x n working copy); accumulates the
// right rotations into v. On exit the columns of w are mutually orthogonal.
void one_sided_jacobi(DenseMatrix& w, DenseMatrix& v) {
  const std::size_t n = w.cols();
  const double tol = kColTol;
  // Rotations preserve the Frobenius norm, so this cutoff is stable across
  // sweeps. Columns this small carry no usable singular value and rotating
  // against them just churns rounding noise.
  double fro2 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) fro2 += w.data()[i] * w.data()[i];
  const double tiny = fro2 * tol * tol;
  for (int sweep = 0; sweep < kJacobiSweepCap; ++sweep) {
    std::size_t rotations = 0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) {
          const double wp = w(i, p), wq = w(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (alpha <= tiny || beta <= tiny) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < w.rows(); ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < v.rows(); ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
        ++rotations;
      }
    }
    if (rotations == 0) return;
  }
  throw NumericalError("svd: Jacobi sweep cap reached without convergence");
}

// Fill columns of u whose singular value vanished with unit vectors
// orthonormal to everything already present, drawn deterministically from
// the standard basis.
void complete_orthonormal(DenseMatrix& u, const std::vector<bool>& filled) {
  const std::size_t m = u.rows(), p = u.cols();
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < p; ++j) {
    if (filled[j]) continue;
    bool done = false;
    for (; candidate < m && !done; ++candidate) {
      Vec e(m, 0.0);
      e[candidate] = 1.0;
      for (std::size_t k = 0; k < p; ++k) {
        if (k == j || (!filled[k] && k > j)) continue;
        double proj = 0.0;
        for (std::size_t i = 0; i < m; ++i) proj += u(i, k) * e[i];
        for (std::size_t i = 0; i < m; ++i) e[i] -= proj * u(i, k);
      }
      const double n = kernels::norm2(e);
      if (n > 0.5) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = e[i] / n;
        done = true;
      }
    }
    if (!done) throw NumericalError("svd: orthonormal completion failed");
  }
}

void apply_sign_convention(DenseMatrix& u, DenseMatrix& v) {
  for (std::size_t j = 0; j < u.cols(); ++j) {
    double lead = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      if (u(i, j) != 0.0) {
        lead = u(i, j);
        break;
      }
    }
    if (lead < 0.0) {
      for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
      for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
    }
  }
}

// SVD of a matrix with rows >= cols: QR, Jacobi on R, back-multiply.
SvdResult svd_tall(const DenseMatrix& a) {
  const std::size_t n = a.cols();
  QrResult qr = householder_qr(a);
  DenseMatrix w = qr.r;
  DenseMatrix v = DenseMatrix::identity(n);
  one_sided_jacobi(w, v);

  Vec sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  double fro2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) fro2 += sigma[j] * sigma[j];
  const double sig_floor = kColTol * std::sqrt(fro2);

  DenseMatrix ur(n, n), vs(n, n);
  Vec sig(n);
  std::vector<bool> filled(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    for (std::size_t i = 0; i < n; ++i) vs(i, j) = v(i, src);
    if (sigma[src] > sig_floor) {
      sig[j] = sigma[src];
      for (std::size_t i = 0; i < n; ++i) ur(i, j) = w(i, src) / sig[j];
      filled[j] = true;
    }
  }
  complete_orthonormal(ur, filled);

  SvdResult out;
  out.u = kernels::matmul(qr.q, ur);
  out.sigma = std::move(sig);
  out.v = std::move(vs);
  apply_sign_convention(out.u, out.v);
  return out;
}

}  // namespace

QrResult householder_qr(const DenseMatrix& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m < n) throw ArgumentError("householder_qr: requires rows >= cols");
  if (m == 0 || n == 0) throw ArgumentError("householder_qr: empty matrix");
  DenseMatrix r = a;
  std::vector<Vec> vs(n);
  std::vector<double> betas(n, 0.0);

  for (std::size_t k = 0; k < n; ++k) {
    double normx = 0.0;
    for (std::size_t i = k; i < m; ++i) normx += r(i, k) * r(i, k);
    normx = std::sqrt(normx);
    Vec v(m - k, 0.0);
    if (normx == 0.0) {
      vs[k] = std::move(v);
      continue;
    }
    const double sign = r(k, k) >= 0.0 ? 1.0 : -1.0;
    const double alpha = -sign * normx;
    for (std::size_t i = k; i < m; ++i) v[i - k] = r(i, k);
    v[0] -= alpha;
    double vtv = 0.0;
    for (double x : v) vtv += x * x;
    if (vtv == 0.0) {
      vs[k] = std::move(v);
      continue;
    }
    const double beta = 2.0 / vtv;
    betas[k] = beta;
    for (std::size_t j = k; j < n; ++j) {
      double tau = 0.0;
      for (std::size_t i = k; i < m; ++i) tau += v[i - k] * r(i, j);
      tau *= beta;
      for (std::size_t i = k; i < m; ++i) r(i, j) -= tau * v[i - k];
    }
    vs[k] = std::move(v);
  }

  QrResult out;
  out.r = DenseMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) out.r(i, j) = r(i, j);

  out.q = DenseMatrix(m, n);
  for (std::size_t j = 0; j < n; ++j) out.q(j, j) = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    if (betas[k] == 0.0) continue;
    const Vec& v = vs[k];
    for (std::size_t j = 0; j < n; ++j) {
      double tau = 0.0;
      for (std::size_t i = k; i < m; ++i) tau += v[i - k] * out.q(i, j);
      tau *= betas[k];
      for (std::size_t i = k; i < m; ++i) out.q(i, j) -= tau * v[i - k];
    }
  }
  return out;
}

SvdResult svd(const DenseMatrix& a) {
  if (a.rows() == 0 || a.cols() == 0) throw ArgumentError("svd: empty matrix");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a.data()[i])) throw ArgumentError("svd: non-finite entry");
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(kernels::transpose(a));
  SvdResult out;
  out.u = std::move(t.v);
  out.sigma = std::move(t.sigma);
  out.v = std::move(t.u);
  apply_sign_convention(out.u, out.v);
  return out;
}

DenseMatrix reconstruct(const SvdResult& s) {
  DenseMatrix us = s.u;
  for (std::size_t j = 0; j < us.cols(); ++j)
    for (std::size_t i = 0; i < us.rows(); ++i) us(i, j) *= s.sigma[j];
  return kernels::matmul_a_bt(us, s.v);
}

DenseMatrix pinv(const DenseMatrix& a) {
  SvdResult s = svd(a);
  const double smax = s.sigma.empty() ? 0.0 : s.sigma[0];
  const double tol = kPinvRelTol * smax;
  DenseMatrix vs = s.v;
  for (std::size_t j = 0; j < vs.cols(); ++j) {
    const double inv = (smax > 0.0 && s.sigma[j] > tol) ? 1.0 / s.sigma[j] : 0.0;
    for (std::size_t i = 0; i < vs.rows(); ++i) vs(i, j) *= inv;
  }
  return kernels::matmul_a_bt(vs, s.u);
}

Vec pinv_apply(const SvdResult& s, const Vec& y) {
  if (y.size() != s.u.rows()) throw ArgumentError("pinv_apply: length mismatch");
  const double smax = s.sigma.empty() ? 0.0 : s.sigma[0];
  const double tol = kPinvRelTol * smax;
  Vec z = kernels::matvec_t(s.u, y);
  for (std::size_t j = 0; j < z.size(); ++j)
    z[j] = (smax > 0.0 && s.sigma[j] > tol) ? z[j] / s.sigma[j] : 0.0;
  return kernels::matvec(s.v, z);
}

Vec pinv_apply(const DenseMatrix& a, const Vec& y) { return pinv_apply(svd(a), y); }

SvdResult rank_r_approx(const DenseMatrix& a, std::size_t r) {
  const std::size_t p = std::min(a.rows(), a.cols());
  if (r < 1 || r > p) throw ArgumentError("rank_r_approx: r out of range");
  SvdResult s = svd(a);
  SvdResult out;
  out.u = DenseMatrix(s.u.rows(), r);
  out.v = DenseMatrix(s.v.rows(), r);
  out.sigma = Vec(s.sigma.begin(), s.sigma.begin() + static_cast<long>(r));
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < s.u.rows(); ++i) out.u(i, j) = s.u(i, j);
    for (std::size_t i = 0; i < s.v.rows(); ++i) out.v(i, j) = s.v(i, j);
  }
  return out;
}

double condition_number(const DenseMatrix& a) {
  bool all_zero = true;
  for (std::size_t i = 0; i < a.size() && all_zero; ++i)
    if (a.data()[i] != 0.0) all_zero = false;
  if (all_zero) throw ArgumentError("condition_number: zero matrix");
  SvdResult s = svd(a);
  const double smax = s.sigma.front();
  const double smin = s.sigma.back();
  if (smin < kPinvRelTol * smax) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

std::pair<double, double> cos_sin(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ArgumentError("cos_sin: length mismatch");
  const double na = kernels::norm2(a), nb = kernels::norm2(b);
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cos_sin: zero vector");
  double c = kernels::dot(a, b) / (na * nb);
  c = std::max(-1.0, std::min(1.0, c));
  return {c, std::sqrt(std::max(0.0, 1.0 - c * c))};
}

DenseMatrix random_orthonormal(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw ArgumentError("random_orthonormal: d must be positive");
  Rng rng(seed);
  DenseMatrix g = gaussian_matrix(d, d, rng);
  QrResult qr = householder_qr(g);
  for (std::size_t j = 0; j < d; ++j) {
    if (qr.r(j, j) < 0.0)
      for (std::size_t i = 0; i < d; ++i) qr.q(i, j) = -qr.q(i, j);
  }
  return qr.q;
}

DenseMatrix orthonormal_basis(const DenseMatrix& a) {
  SvdResult s = svd(a);
  const double smax = s.sigma.empty() ? 0.0 : s.sigma[0];
  const double tol = kPinvRelTol * smax;
  std::size_t rank = 0;
  for (double sv : s.sigma)
    if (smax > 0.0 && sv > tol) ++rank;
  DenseMatrix basis(a.rows(), rank);
  for (std::size_t j = 0; j < rank; ++j)
    for (std::size_t i = 0; i < a.rows(); ++i) basis(i, j) = s.u(i, j);
  return basis;
}

Vec principal_cosines(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw ArgumentError("principal_cosines: row mismatch");
  DenseMatrix qa = orthonormal_basis(a);
  DenseMatrix qb = orthonormal_basis(b);
  if (qa.cols() == 0 || qb.cols() == 0)
    throw ArgumentError("principal_cosines: zero-rank input");
  SvdResult s = svd(kernels::matmul_at_b(qa, qb));
  Vec c = s.sigma;
  for (double& x : c) x = std::min(1.0, x);
  return c;
}

}  // namespace mtlab
