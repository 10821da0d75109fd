#pragma once

// Per-pair loss/gradient terms shared by the serial and parallel kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

namespace tvp::kernels::detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double lr_pair(std::span<const double> xp, std::span<const double> xn, bool y, std::span<const double> theta,
                      double* grad) {
  const double z = dot(theta, xn) - dot(theta, xp);
  const double loss = y ? softplus(-z) : softplus(z);
  if (grad) {
    const double coef = sigmoid(z) - (y ? 1.0 : 0.0);
    for (std::size_t k = 0; k < theta.size(); ++k) grad[k] += coef * (xn[k] - xp[k]);
  }
  return loss;
}

inline double ccs_pair(std::span<const double> xp, std::span<const double> xn, std::span<const double> theta,
                       double* grad) {
  const double pp = sigmoid(dot(theta, xp));
  const double pn = sigmoid(dot(theta, xn));
  const double consistency = 1.0 - pp - pn;
  const bool pos_is_min = pp <= pn;
  const double conf = pos_is_min ? pp : pn;
  if (grad) {
    const double dpp = -2.0 * consistency + (pos_is_min ? 2.0 * conf : 0.0);
    const double dpn = -2.0 * consistency + (pos_is_min ? 0.0 : 2.0 * conf);
    const double cp = dpp * pp * (1.0 - pp);
    const double cn = dpn * pn * (1.0 - pn);
    for (std::size_t k = 0; k < theta.size(); ++k) grad[k] += cp * xp[k] + cn * xn[k];
  }
  return consistency * consistency + conf * conf;
}

// r = x+ - x- + 2 (theta.x-) theta; loss ||r||; d||r||/dtheta = 2 [(theta.r) x- + (theta.x-) r] / ||r||.
// scratch must hold d doubles.
inline double ccr_pair(std::span<const double> xp, std::span<const double> xn, std::span<const double> theta,
                       double* grad, double* scratch) {
  const std::size_t d = theta.size();
  const double s = dot(theta, xn);
  double rr = 0.0;
  double tr = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double r = xp[k] - xn[k] + 2.0 * s * theta[k];
    scratch[k] = r;
    rr += r * r;
    tr += theta[k] * r;
  }
  const double norm = std::sqrt(rr);
  if (grad && norm > 0.0) {
    const double c = 2.0 / norm;
    for (std::size_t k = 0; k < d; ++k) grad[k] += c * (tr * xn[k] + s * scratch[k]);
  }
  return norm;
}

}  // namespace tvp::kernels::detail
