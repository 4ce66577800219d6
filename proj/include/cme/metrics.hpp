#pragma once

#include "cme/common.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace cme {

/// Normalized root mean square error: sqrt(mean((u_h - u_an)^2)) divided by
/// the range of u_an. With `root = false` the mean square is not rooted.
inline double nrmse(std::span<const double> u_h, std::span<const double> u_an,
                    bool root = true) {
  if (u_h.size() != u_an.size()) throw ConfigError("nrmse: size mismatch");
  if (u_h.empty()) throw ConfigError("nrmse: empty input");
  const auto [lo, hi] = std::minmax_element(u_an.begin(), u_an.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) throw ConfigError("nrmse: analytical solution has zero range");
  double sq = 0.0;
  for (std::size_t i = 0; i < u_h.size(); ++i) {
    const double d = u_h[i] - u_an[i];
    sq += d * d;
  }
  sq /= static_cast<double>(u_h.size());
  return (root ? std::sqrt(sq) : sq) / range;
}

/// Signed relative error in mean strain energy density.
inline double sre_w(double mean_w, double mean_w_ref) {
  if (mean_w_ref == 0.0) throw ConfigError("sre_w: zero reference energy");
  return (mean_w - mean_w_ref) / mean_w_ref;
}

}  // namespace cme
