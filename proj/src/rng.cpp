#include "mtlab/rng.hpp"

#include "mtlab/kernels.hpp"

namespace mtlab {

DenseMatrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
  return m;
}

Vec random_unit_vector(std::size_t d, Rng& rng) {
  if (d == 0) throw ArgumentError("random_unit_vector: d must be positive");
  Vec v = rng.gaussian_vec(d);
  double n = kernels::norm2(v);
  while (n == 0.0) {
    v = rng.gaussian_vec(d);
    n = kernels::norm2(v);
  }
  kernels::scale(1.0 / n, v);
  return v;
}

}  // namespace mtlab
