#ifndef MTLAB_RNG_HPP
#define MTLAB_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mtlab/matrix.hpp"

namespace mtlab {

// Every random quantity in the library flows from an explicit 64-bit seed
// through this wrapper. The underlying generator is std::mt19937_64, whose
// output sequence is fixed by the C++ standard, and all variate transforms
// are implemented here (not via std::*_distribution, which is
// implementation-defined), so identical seeds replay bit-identically on any
// conforming platform.
//
// Transforms:
//   uniform01: (x >> 11) * 2^-53, uniform on [0, 1)
//   gaussian:  Box-Muller on two uniform01 draws, second value cached
//   uniform_int(n): multiply-free rejection on the top bits
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed), have_spare_(false), spare_(0.0) {}

  std::uint64_t next_u64() { return gen_(); }

  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n) by rejection, bias-free.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  // Fisher-Yates shuffle, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<double> gaussian_vec(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = gaussian();
    return v;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_;
  double spare_;
};

// Entries drawn i.i.d. N(0,1) in row-major order.
DenseMatrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng);

// Uniform direction on the unit sphere (gaussian draw, normalized).
Vec random_unit_vector(std::size_t d, Rng& rng);

// splitmix64 step, used to derive independent sub-seeds from a base seed and
// a stream tag without correlating the resulting mt19937_64 streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mtlab

#endif
