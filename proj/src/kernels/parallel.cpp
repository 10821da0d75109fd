#include <omp.h>

#include <algorithm>
#include <vector>

#include "pair_math.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/kernels.hpp"

namespace tvp::kernels::parallel {

namespace {

std::size_t block_count(std::size_t n) { return (n + kBlockPairs - 1) / kBlockPairs; }

// Runs body(first, last, loss_acc, grad_acc, scratch) over fixed pair blocks in
// parallel, then folds the per-block partials in block order.
template <typename Body>
double blocked_reduce(std::size_t n, std::size_t d, std::span<double> out_vec, Body&& body) {
  const std::size_t blocks = block_count(n);
  const bool want_vec = !out_vec.empty();
  std::vector<double> loss_part(blocks, 0.0);
  std::vector<double> vec_part(want_vec ? blocks * d : 0, 0.0);

#pragma omp parallel
  {
    std::vector<double> scratch(d);
#pragma omp for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
      const auto ub = static_cast<std::size_t>(b);
      const std::size_t first = ub * kBlockPairs;
      const std::size_t last = std::min(n, first + kBlockPairs);
      loss_part[ub] = body(first, last, want_vec ? vec_part.data() + ub * d : nullptr, scratch.data());
    }
  }

  double loss = 0.0;
  for (double l : loss_part) loss += l;
  if (want_vec) {
    std::fill(out_vec.begin(), out_vec.end(), 0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
      const double* part = vec_part.data() + b * d;
      for (std::size_t k = 0; k < d; ++k) out_vec[k] += part[k];
    }
  }
  return loss;
}

}  // namespace

void pooled_mean(const PairView& x, std::span<double> mu) {
  blocked_reduce(x.n, x.d, mu, [&](std::size_t first, std::size_t last, double* acc, double*) {
    for (std::size_t i = first; i < last; ++i) {
      const auto p = x.pos_row(i);
      const auto q = x.neg_row(i);
      for (std::size_t k = 0; k < x.d; ++k) acc[k] += p[k] + q[k];
    }
    return 0.0;
  });
  const double inv = 1.0 / (2.0 * static_cast<double>(x.n));
  for (auto& m : mu) m *= inv;
}

void class_mean_difference(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<double> out) {
  if (x.n == 0) fail(ErrorKind::InvalidInput, "mass-mean direction needs both classes");
  // Every pair contributes one true and one false statement, so both class
  // counts equal n and the difference reduces to a signed sum of x+ - x-.
  blocked_reduce(x.n, x.d, out, [&](std::size_t first, std::size_t last, double* acc, double*) {
    for (std::size_t i = first; i < last; ++i) {
      const double sign = label_pos[i] != 0 ? 1.0 : -1.0;
      const auto p = x.pos_row(i);
      const auto q = x.neg_row(i);
      for (std::size_t k = 0; k < x.d; ++k) acc[k] += sign * (p[k] - q[k]);
    }
    return 0.0;
  });
  const double inv = 1.0 / static_cast<double>(x.n);
  for (auto& v : out) v *= inv;
}

double lr_loss_grad(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<const double> theta,
                    std::span<double> grad) {
  const double loss = blocked_reduce(x.n, x.d, grad, [&](std::size_t first, std::size_t last, double* acc, double*) {
    double l = 0.0;
    for (std::size_t i = first; i < last; ++i) l += detail::lr_pair(x.pos_row(i), x.neg_row(i), label_pos[i] != 0, theta, acc);
    return l;
  });
  const double inv = 1.0 / static_cast<double>(x.n);
  for (auto& v : grad) v *= inv;
  return loss * inv;
}

double ccs_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad) {
  const double loss = blocked_reduce(x.n, x.d, grad, [&](std::size_t first, std::size_t last, double* acc, double*) {
    double l = 0.0;
    for (std::size_t i = first; i < last; ++i) l += detail::ccs_pair(x.pos_row(i), x.neg_row(i), theta, acc);
    return l;
  });
  const double inv = 1.0 / static_cast<double>(x.n);
  for (auto& v : grad) v *= inv;
  return loss * inv;
}

double ccr_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad) {
  const double loss =
      blocked_reduce(x.n, x.d, grad, [&](std::size_t first, std::size_t last, double* acc, double* scratch) {
        double l = 0.0;
        for (std::size_t i = first; i < last; ++i) l += detail::ccr_pair(x.pos_row(i), x.neg_row(i), theta, acc, scratch);
        return l;
      });
  const double inv = 1.0 / static_cast<double>(x.n);
  for (auto& v : grad) v *= inv;
  return loss * inv;
}

void pair_logits(const PairView& x, std::span<const double> theta, std::span<double> logit_pos,
                 std::span<double> logit_neg) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x.n); ++i) {
    const auto u = static_cast<std::size_t>(i);
    logit_pos[u] = detail::dot(theta, x.pos_row(u));
    logit_neg[u] = detail::dot(theta, x.neg_row(u));
  }
}

}  // namespace tvp::kernels::parallel

namespace tvp::kernels {

void pooled_mean(Exec e, const PairView& x, std::span<double> mu) {
  e == Exec::Serial ? serial::pooled_mean(x, mu) : parallel::pooled_mean(x, mu);
}

void class_mean_difference(Exec e, const PairView& x, std::span<const std::uint8_t> label_pos, std::span<double> out) {
  e == Exec::Serial ? serial::class_mean_difference(x, label_pos, out)
                    : parallel::class_mean_difference(x, label_pos, out);
}

double lr_loss_grad(Exec e, const PairView& x, std::span<const std::uint8_t> label_pos, std::span<const double> theta,
                    std::span<double> grad) {
  return e == Exec::Serial ? serial::lr_loss_grad(x, label_pos, theta, grad)
                           : parallel::lr_loss_grad(x, label_pos, theta, grad);
}

double ccs_loss_grad(Exec e, const PairView& x, std::span<const double> theta, std::span<double> grad) {
  return e == Exec::Serial ? serial::ccs_loss_grad(x, theta, grad) : parallel::ccs_loss_grad(x, theta, grad);
}

double ccr_loss_grad(Exec e, const PairView& x, std::span<const double> theta, std::span<double> grad) {
  return e == Exec::Serial ? serial::ccr_loss_grad(x, theta, grad) : parallel::ccr_loss_grad(x, theta, grad);
}

void pair_logits(Exec e, const PairView& x, std::span<const double> theta, std::span<double> logit_pos,
                 std::span<double> logit_neg) {
  e == Exec::Serial ? serial::pair_logits(x, theta, logit_pos, logit_neg)
                    : parallel::pair_logits(x, theta, logit_pos, logit_neg);
}

}  // namespace tvp::kernels
