#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvprobe/probe.hpp"
#include "tvprobe/types.hpp"

namespace tvp {

class ActivationStore;

// Probe outputs for one sample across the five evaluation cases.
struct CaseProbabilities {
  std::uint64_t sample_id = 0;
  Relation relation = Relation::Entailment;
  bool label_positive = true;
  double p_h = 0.5;      // no premise
  double p_pos = 0.5;    // affirmed premise
  double p_neg = 0.5;    // negated premise
  double p_unrel = 0.5;  // unrelated premise
  double p_corr = 0.5;   // corrupted premise
};

struct ErrorScores {
  double pe = 0.0;
  double e1 = 0.0;
  double e2 = 0.0;
  double e3 = 0.0;
  double e4 = 0.0;
};

enum class EvalCase : std::uint8_t { NoPremise, Affirmed, Negated, Unrelated, Corrupted };

// Fixed mapping of evaluation cases to prompt variants.
PromptVariant case_variant(EvalCase c);

inline constexpr double kUndefinedPeEpsilon = 1e-6;
inline constexpr double kLogRatioEpsilon = 1e-6;

double combined_prob(double p_plus, double p_minus);

struct ActivationRecord;
// combined_prob of a stored pair under a direction (its mu and scale applied).
double record_probability(const Direction& direction, const ActivationRecord& record);

// Fraction with (p > 0.5) == label; p == 0.5 counts as wrong.
double accuracy(std::span<const double> probs, std::span<const std::uint8_t> labels);
double accuracy(std::span<const CaseProbabilities> cases, EvalCase which);

double premise_effect(const CaseProbabilities& c);

// nullopt when |PE| < eps: the sample is excluded from error aggregation.
std::optional<ErrorScores> error_scores(const CaseProbabilities& c, double eps = kUndefinedPeEpsilon);

// Mean |PE| over all samples, untrimmed.
double premise_sensitivity(std::span<const CaseProbabilities> cases);

// Drops floor(n * trim_fraction) values from each end; nullopt when nothing remains.
std::optional<double> trimmed_mean(std::span<const double> values, double trim_fraction);

struct LayerReport {
  int layer = 0;
  Method method = Method::Mmp;
  TrainSetting train_setting = TrainSetting::PosPrem;
  std::size_t n_eval = 0;
  std::size_t n_undefined_pe = 0;
  double accuracy_pos = 0.0;
  double accuracy_noprem = 0.0;
  double premise_sensitivity = 0.0;
  // [relation][case] means, relation 0 = entailment, case in EvalCase order.
  std::array<std::array<double, 5>, 2> mean_probs{};
  std::optional<double> e1, e2, e3, e4;
  double e_star = 0.0;
  double log_ratio_e3_e4 = 0.0;
  bool log_ratio_clamped = false;
  double scale = 1.0;
  bool calibration_ok = true;  // false when degenerate or the target std was out of reach
};

// Fills e_star: for each of E1..E4, fractional ranks across the pooled group
// (1 = lowest, ties share the mean rank, missing scores rank last), averaged.
void error_rank_summary(std::span<LayerReport> group);

struct LogRatio {
  double value = 0.0;
  bool clamped = false;
};
LogRatio log_ratio_e3_e4(double e3, double e4);
LogRatio log_ratio_e3_e4(const LayerReport& report);

struct EvalOptions {
  double trim_fraction = 0.10;
  double pe_epsilon = kUndefinedPeEpsilon;
};

// Builds a report from per-sample case probabilities (e_star left at 0).
LayerReport summarize_cases(std::span<const CaseProbabilities> cases, const EvalOptions& options);

// Probe outputs for every eval sample that has all five cases at `layer`.
// Activations are normalized with the direction's mu and scaled by its scale.
std::vector<CaseProbabilities> case_probabilities(const ActivationStore& store, const Direction& direction,
                                                  std::uint16_t layer, std::span<const std::uint64_t> eval_ids);

// LM-head baseline cases from the store manifest's baseline table.
std::vector<CaseProbabilities> baseline_case_probabilities(const ActivationStore& store,
                                                           std::span<const std::uint64_t> eval_ids);

struct LayerSelection {
  int best_accuracy_layer = 0;
  int lowest_error_layer = 0;
};

// Ties go to the lower layer index. Reports must share method and setting.
LayerSelection select_layers(std::span<const LayerReport> reports);

struct SweepResult {
  std::vector<LayerReport> reports;
  LayerSelection selection;
};

// Calibrates each layer's direction on the no-prem eval records, evaluates
// every case, ranks the reports against each other, and selects layers.
SweepResult layer_sweep(const ActivationStore& store, std::span<const Direction> per_layer,
                        std::span<const std::uint64_t> eval_ids, const EvalOptions& options,
                        double calibration_target = 0.25);

// Table-shaped text: one row per (setting, method, selection) with accuracy,
// E*, mean case probabilities by relation, and trimmed E1..E4.
std::string format_results_table(std::span<const LayerReport> reports);

// Per-layer CSV: layer, method, setting, accuracy, sensitivity, e1..e4, e_star,
// log_ratio, followed by supporting columns.
std::string layer_reports_csv(std::span<const LayerReport> reports);

}  // namespace tvp
