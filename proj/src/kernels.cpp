#include "mtlab/kernels.hpp"

#include <cmath>
#include <cstdint>

namespace mtlab {
namespace kernels {

namespace {
thread_local bool g_parallel = true;

void check_mul(std::size_t inner_a, std::size_t inner_b, const char* what) {
  if (inner_a != inner_b) throw ArgumentError(std::string(what) + ": inner dimension mismatch");
}
}  // namespace

bool parallel_enabled() { return g_parallel; }
void set_parallel_enabled(bool on) { g_parallel = on; }

namespace serial_ref {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols(), b.rows(), "matmul");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.rows(), b.rows(), "matmul_at_b");
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols(), b.cols(), "matmul_a_bt");
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix gram(const DenseMatrix& a) {
  DenseMatrix c(a.cols(), a.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = i; j < a.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * a(k, j);
      c(i, j) = s;
      c(j, i) = s;
    }
  }
  return c;
}

Vec matvec(const DenseMatrix& a, const Vec& x) {
  check_mul(a.cols(), x.size(), "matvec");
  Vec y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    const double* r = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) s += r[k] * x[k];
    y[i] = s;
  }
  return y;
}

Vec matvec_t(const DenseMatrix& a, const Vec& x) {
  check_mul(a.rows(), x.size(), "matvec_t");
  Vec y(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, j) * x[k];
    y[j] = s;
  }
  return y;
}

}  // namespace serial_ref

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols(), b.rows(), "matmul");
  DenseMatrix c(a.rows(), b.cols());
  const std::int64_t n = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static) if (g_parallel && n > 64)
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.rows(), b.rows(), "matmul_at_b");
  DenseMatrix c(a.cols(), b.cols());
  const std::int64_t n = static_cast<std::int64_t>(a.cols());
#pragma omp parallel for schedule(static) if (g_parallel && n > 16)
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols(), b.cols(), "matmul_a_bt");
  DenseMatrix c(a.rows(), b.rows());
  const std::int64_t n = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static) if (g_parallel && n > 64)
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix gram(const DenseMatrix& a) {
  DenseMatrix c(a.cols(), a.cols());
  const std::int64_t n = static_cast<std::int64_t>(a.cols());
#pragma omp parallel for schedule(static) if (g_parallel && n > 16)
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t j = static_cast<std::size_t>(i); j < a.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * a(k, j);
      c(i, j) = s;
    }
  }
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < static_cast<std::size_t>(i); ++j) c(i, j) = c(j, i);
  return c;
}

Vec matvec(const DenseMatrix& a, const Vec& x) {
  check_mul(a.cols(), x.size(), "matvec");
  Vec y(a.rows());
  const std::int64_t n = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static) if (g_parallel && n > 256)
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* r = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) s += r[k] * x[k];
    y[i] = s;
  }
  return y;
}

Vec matvec_t(const DenseMatrix& a, const Vec& x) {
  check_mul(a.rows(), x.size(), "matvec_t");
  Vec y(a.cols());
  const std::int64_t n = static_cast<std::int64_t>(a.cols());
#pragma omp parallel for schedule(static) if (g_parallel && n > 256)
  for (std::int64_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, j) * x[k];
    y[j] = s;
  }
  return y;
}

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ArgumentError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

double frobenius(const DenseMatrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return std::sqrt(s);
}

void axpy(double alpha, const Vec& x, Vec& y) {
  if (x.size() != y.size()) throw ArgumentError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void madd(double alpha, const DenseMatrix& b, DenseMatrix& a) {
  if (!a.same_shape(b)) throw ArgumentError("madd: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += alpha * b.data()[i];
}

void scale(double alpha, DenseMatrix& a) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] *= alpha;
}

void scale(double alpha, Vec& a) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= alpha;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace kernels
}  // namespace mtlab
