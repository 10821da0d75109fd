#include <algorithm>
#include <vector>

#include "pair_math.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/kernels.hpp"

namespace tvp::kernels::serial {

using detail::dot;

void pooled_mean(const PairView& x, std::span<double> mu) {
  std::fill(mu.begin(), mu.end(), 0.0);
  for (std::size_t i = 0; i < x.n; ++i) {
    const auto p = x.pos_row(i);
    const auto q = x.neg_row(i);
    for (std::size_t k = 0; k < x.d; ++k) mu[k] += p[k] + q[k];
  }
  const double inv = 1.0 / (2.0 * static_cast<double>(x.n));
  for (auto& m : mu) m *= inv;
}

void class_mean_difference(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<double> out) {
  std::vector<double> sum_true(x.d, 0.0);
  std::vector<double> sum_false(x.d, 0.0);
  std::size_t n_true = 0;
  std::size_t n_false = 0;
  for (std::size_t i = 0; i < x.n; ++i) {
    const bool y = label_pos[i] != 0;
    auto& pos_sum = y ? sum_true : sum_false;
    auto& neg_sum = y ? sum_false : sum_true;
    const auto p = x.pos_row(i);
    const auto q = x.neg_row(i);
    for (std::size_t k = 0; k < x.d; ++k) {
      pos_sum[k] += p[k];
      neg_sum[k] += q[k];
    }
    ++n_true;
    ++n_false;
  }
  if (n_true == 0 || n_false == 0) fail(ErrorKind::InvalidInput, "mass-mean direction needs both classes");
  for (std::size_t k = 0; k < x.d; ++k) {
    out[k] = sum_true[k] / static_cast<double>(n_true) - sum_false[k] / static_cast<double>(n_false);
  }
}

double lr_loss_grad(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<const double> theta,
                    std::span<double> grad) {
  double* g = grad.empty() ? nullptr : grad.data();
  if (g) std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.n; ++i) loss += detail::lr_pair(x.pos_row(i), x.neg_row(i), label_pos[i] != 0, theta, g);
  const double inv = 1.0 / static_cast<double>(x.n);
  if (g) for (auto& v : grad) v *= inv;
  return loss * inv;
}

double ccs_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad) {
  double* g = grad.empty() ? nullptr : grad.data();
  if (g) std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.n; ++i) loss += detail::ccs_pair(x.pos_row(i), x.neg_row(i), theta, g);
  const double inv = 1.0 / static_cast<double>(x.n);
  if (g) for (auto& v : grad) v *= inv;
  return loss * inv;
}

double ccr_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad) {
  double* g = grad.empty() ? nullptr : grad.data();
  if (g) std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> scratch(x.d);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.n; ++i) {
    loss += detail::ccr_pair(x.pos_row(i), x.neg_row(i), theta, g, scratch.data());
  }
  const double inv = 1.0 / static_cast<double>(x.n);
  if (g) for (auto& v : grad) v *= inv;
  return loss * inv;
}

void pair_logits(const PairView& x, std::span<const double> theta, std::span<double> logit_pos,
                 std::span<double> logit_neg) {
  for (std::size_t i = 0; i < x.n; ++i) {
    logit_pos[i] = dot(theta, x.pos_row(i));
    logit_neg[i] = dot(theta, x.neg_row(i));
  }
}

}  // namespace tvp::kernels::serial
