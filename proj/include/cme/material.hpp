#pragma once

#include "cme/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace cme {

struct LameParameters {
  double lambda = 0.0;
  double mu = 0.0;
};

/// Lame parameters from Young's modulus and Poisson's ratio.
inline LameParameters lame_from_engineering(double youngs_modulus, double poisson) {
  if (!(youngs_modulus > 0.0)) throw ConfigError("Young's modulus must be positive");
  if (poisson >= 0.5) {
    throw ConfigError("Poisson's ratio " + std::to_string(poisson) +
                      " is incompressible (must be < 0.5)");
  }
  if (poisson <= -1.0) throw ConfigError("Poisson's ratio must be > -1");
  LameParameters p;
  p.mu = youngs_modulus / (2.0 * (1.0 + poisson));
  p.lambda = youngs_modulus * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  return p;
}

/// Compressible neo-Hookean solid,
/// W = mu/2 (I1 - 3) - mu ln J + lambda/2 (ln J)^2.
class NeoHookean {
 public:
  NeoHookean(double lambda, double mu, double density)
      : lambda_(lambda), mu_(mu), density_(density) {
    if (!(mu > 0.0)) throw ConfigError("shear modulus must be positive");
    if (lambda < 0.0) throw ConfigError("first Lame parameter must be non-negative");
    if (!(density > 0.0)) throw ConfigError("density must be positive");
  }

  static NeoHookean from_engineering(double youngs_modulus, double poisson,
                                     double density) {
    const auto p = lame_from_engineering(youngs_modulus, poisson);
    return {p.lambda, p.mu, density};
  }

  double lambda() const { return lambda_; }
  double mu() const { return mu_; }
  double density() const { return density_; }

  double strain_energy(const Mat3& F) const {
    const double J = checked_det(F);
    const double lnJ = std::log(J);
    const double I1 = (F.transpose() * F).trace();
    return 0.5 * mu_ * (I1 - 3.0) - mu_ * lnJ + 0.5 * lambda_ * lnJ * lnJ;
  }

  /// Second Piola-Kirchhoff stress S = mu (I - C^-1) + lambda ln J C^-1.
  Mat3 pk2_stress(const Mat3& F) const {
    const double J = checked_det(F);
    const Mat3 Cinv = (F.transpose() * F).inverse();
    Mat3 S = (lambda_ * std::log(J) - mu_) * Cinv;
    S.diagonal().array() += mu_;
    return S;
  }

  /// First Piola-Kirchhoff stress P = F S; also returns W through `energy`.
  Mat3 pk1_stress(const Mat3& F, double* energy = nullptr) const {
    const double J = checked_det(F);
    const double lnJ = std::log(J);
    const Mat3 C = F.transpose() * F;
    const Mat3 Cinv = C.inverse();
    Mat3 S = (lambda_ * lnJ - mu_) * Cinv;
    S.diagonal().array() += mu_;
    if (energy) {
      *energy = 0.5 * mu_ * (C.trace() - 3.0) - mu_ * lnJ + 0.5 * lambda_ * lnJ * lnJ;
    }
    return F * S;
  }

 private:
  static double checked_det(const Mat3& F) {
    const double J = F.determinant();
    if (!(J > 0.0)) {
      throw InversionError("deformation gradient with det F = " + std::to_string(J) +
                               " (inverted material)",
                           -1);
    }
    return J;
  }

  double lambda_;
  double mu_;
  double density_;
};

}  // namespace cme
