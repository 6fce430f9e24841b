#ifndef MTLAB_KERNELS_HPP
#define MTLAB_KERNELS_HPP

#include "mtlab/matrix.hpp"

namespace mtlab {
namespace kernels {

// The OpenMP kernels parallelize over output elements only, so every output
// entry is accumulated in the same order as in the serial reference. That
// keeps results bitwise identical to serial_ref:: for any thread count,
// which the replay and byte-identical-artifact guarantees rely on.

// Thread-local switch: harness worker threads flip this off so sweep cells
// stay internally single-threaded while cells run concurrently.
bool parallel_enabled();
void set_parallel_enabled(bool on);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);       // A * B
DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b);  // A^T * B
DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b);  // A * B^T
DenseMatrix gram(const DenseMatrix& a);                               // A^T * A
Vec matvec(const DenseMatrix& a, const Vec& x);                       // A * x
Vec matvec_t(const DenseMatrix& a, const Vec& x);                     // A^T * x

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& a);
double frobenius(const DenseMatrix& a);

// y += alpha * x
void axpy(double alpha, const Vec& x, Vec& y);
// A += alpha * B
void madd(double alpha, const DenseMatrix& b, DenseMatrix& a);
void scale(double alpha, DenseMatrix& a);
void scale(double alpha, Vec& a);

DenseMatrix transpose(const DenseMatrix& a);

// Serial reference implementations, kept for testing and benchmarking the
// parallel versions against.
namespace serial_ref {
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix gram(const DenseMatrix& a);
Vec matvec(const DenseMatrix& a, const Vec& x);
Vec matvec_t(const DenseMatrix& a, const Vec& x);
}  // namespace serial_ref

}  // namespace kernels
}  // namespace mtlab

#endif
