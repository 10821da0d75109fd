#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

// Data-parallel reductions over contrast pairs. Every kernel exists twice:
// `serial` is the plain reference loop, `parallel` splits pairs into fixed
// blocks of kBlockPairs, reduces each block under OpenMP, and sums the block
// partials in block order. The parallel result therefore does not depend on
// the thread count.

namespace tvp::kernels {

inline constexpr std::size_t kBlockPairs = 128;

// Row-major n x d views of the affirmed and negated activations.
struct PairView {
  std::span<const double> pos;
  std::span<const double> neg;
  std::size_t n = 0;
  std::size_t d = 0;

  std::span<const double> pos_row(std::size_t i) const { return pos.subspan(i * d, d); }
  std::span<const double> neg_row(std::size_t i) const { return neg.subspan(i * d, d); }
};

enum class Exec : std::uint8_t { Serial, Parallel };

namespace serial {
// mu = (1/2n) sum(x+ + x-)
void pooled_mean(const PairView& x, std::span<double> mu);
// mean(x | y=1) - mean(x | y=0), pooling x+ (label y+) with x- (label 1-y+)
void class_mean_difference(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<double> out);
// Logistic loss on x' = x- - x+ with target y+. grad may be empty.
double lr_loss_grad(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<const double> theta,
                    std::span<double> grad);
// Consistency + confidence loss with one theta shared by x+ and x-.
double ccs_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad);
// Mean reflection residual ||x+ - (I - 2 theta theta^T) x-||; gradient w.r.t. the unconstrained theta.
double ccr_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad);
void pair_logits(const PairView& x, std::span<const double> theta, std::span<double> logit_pos,
                 std::span<double> logit_neg);
}  // namespace serial

namespace parallel {
// mu = (1/2n) sum(x+ + x-)
void pooled_mean(const PairView& x, std::span<double> mu);
// mean(x | y=1) - mean(x | y=0), pooling x+ (label y+) with x- (label 1-y+)
void class_mean_difference(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<double> out);
// Logistic loss on x' = x- - x+ with target y+. grad may be empty.
double lr_loss_grad(const PairView& x, std::span<const std::uint8_t> label_pos, std::span<const double> theta,
                    std::span<double> grad);
// Consistency + confidence loss with one theta shared by x+ and x-.
double ccs_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad);
// Mean reflection residual ||x+ - (I - 2 theta theta^T) x-||; gradient w.r.t. the unconstrained theta.
double ccr_loss_grad(const PairView& x, std::span<const double> theta, std::span<double> grad);
void pair_logits(const PairView& x, std::span<const double> theta, std::span<double> logit_pos,
                 std::span<double> logit_neg);
}  // namespace parallel

// Dispatchers used by the training code.
void pooled_mean(Exec e, const PairView& x, std::span<double> mu);
void class_mean_difference(Exec e, const PairView& x, std::span<const std::uint8_t> label_pos, std::span<double> out);
double lr_loss_grad(Exec e, const PairView& x, std::span<const std::uint8_t> label_pos, std::span<const double> theta,
                    std::span<double> grad);
double ccs_loss_grad(Exec e, const PairView& x, std::span<const double> theta, std::span<double> grad);
double ccr_loss_grad(Exec e, const PairView& x, std::span<const double> theta, std::span<double> grad);
void pair_logits(Exec e, const PairView& x, std::span<const double> theta, std::span<double> logit_pos,
                 std::span<double> logit_neg);

}  // namespace tvp::kernels
