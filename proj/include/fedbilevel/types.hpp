#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fedbilevel {

/// Dense model parameter vector. All arithmetic is 64-bit.
using ModelVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (bad sizes, bad parameters).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Iterates left the finite region or exceeded the divergence threshold.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int round)
      : Error(what), round_(round) {}
  int round() const noexcept { return round_; }

 private:
  int round_;
};

inline bool all_finite(const ModelVector& x) { return x.allFinite(); }

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace fedbilevel
