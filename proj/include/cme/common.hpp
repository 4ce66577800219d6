#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cme {

using Index = std::int32_t;

template <int Dim>
using Vec = Eigen::Matrix<double, Dim, 1>;

template <int Dim>
using Mat = Eigen::Matrix<double, Dim, Dim>;

using Vec2 = Vec<2>;
using Vec3 = Vec<3>;
using Mat3 = Mat<3>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user parameters or scenario configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed mesh input or invalid mesh topology/geometry.
class MeshError : public Error {
 public:
  using Error::Error;
};

/// Degenerate geometry: a point with no usable prior weights, a singular
/// dual Hessian, an empty support boundary.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// det F <= 0 at a quadrature point (or in a direct material call, id = -1).
class InversionError : public Error {
 public:
  InversionError(const std::string& what, std::int64_t where)
      : Error(what), where_(where) {}
  std::int64_t where() const noexcept { return where_; }

 private:
  std::int64_t where_;
};

/// Explicit integration blew up (NaN or displacement beyond the divergence
/// threshold).
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, std::int64_t step)
      : Error(what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace cme
