#ifndef MTLAB_ERRORS_HPP
#define MTLAB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mtlab {

// Bad caller input: shape mismatches, invalid config values, missing fields.
// The CLI maps this to exit code 1.
struct ArgumentError : std::invalid_argument {
  explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numerical breakdown: iteration caps hit, non-finite values, divergence.
// The CLI maps this to exit code 2.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training loss exceeded the divergence guard or went non-finite.
struct DivergenceError : NumericalError {
  DivergenceError(const std::string& msg, int epoch_)
      : NumericalError(msg), epoch(epoch_) {}
  int epoch;
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mtlab

#endif
