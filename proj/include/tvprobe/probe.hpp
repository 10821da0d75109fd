#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvprobe/kernels.hpp"
#include "tvprobe/types.hpp"

namespace tvp {

class ActivationStore;

// Contrast pairs in float64, row-major, plus per-pair labels.
struct PairSet {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> pos;
  std::vector<double> neg;
  std::vector<std::uint8_t> label_positive;
  std::vector<Relation> relation;
  std::vector<std::uint64_t> sample_ids;

  kernels::PairView view() const { return {pos, neg, n, d}; }
  std::span<const double> pos_row(std::size_t i) const { return std::span<const double>(pos).subspan(i * d, d); }
  std::span<const double> neg_row(std::size_t i) const { return std::span<const double>(neg).subspan(i * d, d); }

  void push_back(std::span<const double> x_pos, std::span<const double> x_neg, bool label, Relation rel,
                 std::uint64_t sample_id);
};

// Pairs of one (variant, layer), restricted to `ids` when given (ids must be sorted).
PairSet gather_pairs(const ActivationStore& store, PromptVariant variant, std::uint16_t layer,
                     std::span<const std::uint64_t> ids = {});

struct NormalizationStats {
  std::vector<double> mu;
};

struct Direction {
  std::vector<double> theta;
  Method method = Method::Mmp;
  int layer = 0;
  TrainSetting train_setting = TrainSetting::PosPrem;
  double scale = 1.0;
  std::uint64_t seed = 0;
  std::vector<double> mu;
  std::vector<double> train_loss_trace;
  double final_loss = 0.0;
};

struct TrainConfig {
  double learning_rate = 0.001;
  int steps = 1000;
  std::vector<std::uint64_t> seeds = default_seeds();
  // Standard deviation of the random init is init_scale / sqrt(d).
  double init_scale = 1.0;
  // Keep every trace_every-th loss value; 0 disables the trace.
  int trace_every = 0;
  kernels::Exec exec = kernels::Exec::Parallel;

  static std::vector<std::uint64_t> default_seeds(std::size_t count = 30);
  void validate() const;
};

// Subtracts the pooled mean of all x+ and x- from every vector.
NormalizationStats mean_normalize(PairSet& pairs, kernels::Exec exec = kernels::Exec::Parallel);
// Applies previously computed statistics.
void apply_normalization(PairSet& pairs, const NormalizationStats& stats);

double sigmoid(double z);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// sigmoid(scale * x.theta); x must already be normalized with the direction's mu.
double probe_eval(const Direction& direction, std::span<const double> x);

Direction train_mmp(const PairSet& normalized, kernels::Exec exec = kernels::Exec::Parallel);

// Minimizes the logistic loss on x' = x- - x+ with target y+, starting from
// zero. The returned theta is the negated minimizer, so that sigmoid(x.theta)
// scores the truth of a single statement.
Direction train_lr(const PairSet& normalized, const TrainConfig& config);

// One direction per seed, in config.seeds order.
std::vector<Direction> train_ccs(const PairSet& normalized, const TrainConfig& config);
std::vector<Direction> train_ccr(const PairSet& normalized, const TrainConfig& config);

// Returns P x with P = I - 2 theta theta^T; theta must be unit length (1e-6).
std::vector<double> householder_reflect(std::span<const double> unit_theta, std::span<const double> x);

// Mean per-pair objectives, evaluated with the serial kernels.
double lr_objective(const PairSet& pairs, std::span<const double> theta);
double ccs_objective(const PairSet& pairs, std::span<const double> theta);
double ccr_objective(const PairSet& pairs, std::span<const double> unit_theta);

// Lowest final loss; ties go to the earliest entry.
const Direction& best_loss_direction(std::span<const Direction> runs);

// Accuracy of the combined-probability rule over pairs; ties at 0.5 count as wrong.
double pair_accuracy(const Direction& direction, const PairSet& normalized);

// Negates unsupervised directions whose training accuracy is below 0.5.
Direction orient_direction(Direction direction, const PairSet& normalized_train);

struct CalibrationResult {
  Direction direction;
  bool ok = true;
  bool capped = false;
  double achieved_std = 0.0;
};

inline constexpr double kMinScale = 1e-4;
inline constexpr double kMaxScale = 1e4;

// Sets each direction's scale so that the population std of its combined
// probabilities on `no_prem_eval` equals target_std. Pairs are raw
// activations; each direction's own mu is applied.
std::vector<CalibrationResult> calibrate(std::span<const Direction> directions, const PairSet& no_prem_eval,
                                         double target_std = 0.25);

// Direction export file (JSON): method, layer, train_setting, seed, scale, mu, theta.
std::string direction_to_json(const Direction& d);
Direction direction_from_json(const std::string& text);
void write_direction(const Direction& d, const std::filesystem::path& path);
Direction read_direction(const std::filesystem::path& path);

}  // namespace tvp
