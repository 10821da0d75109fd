#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tvprobe/probe.hpp"
#include "tvprobe/rng.hpp"
#include "tvprobe/store.hpp"
#include "tvprobe/types.hpp"

namespace tvp {

struct SyntheticConfig {
  std::uint32_t dimension = 64;
  std::uint64_t n_samples = 2000;
  std::uint32_t layer_count = 8;
  double noise_std = 0.1;
  double truth_scale = 1.0;
  double coupling = 0.8;  // alpha
  BeliefMode mode = BeliefMode::Conditional;
  double spurious_strength = 0.5;       // beta; only snli-kind corpora carry it
  double irrelevant_sensitivity = 0.0;  // gamma
  // Statement content shared by both members of a pair, orthogonal to the
  // truth and spurious directions.
  double content_std = 8.0;
  // Constant per-variant offset along its own channel; needs dimension >= 9.
  double context_shift = 0.5;
  DatasetKind dataset_kind = DatasetKind::EntailmentBank;
  // Per-layer signal multiplier; empty means ramp to 1 over the first half, then plateau.
  std::vector<double> snr_profile;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<double> layer_snr() const;
};

struct SyntheticGroundTruth {
  std::vector<double> theta_star;
  std::vector<double> theta_spur;
  // One unit vector per prompt variant, in variant encoding order; empty when context_shift is 0.
  std::vector<std::vector<double>> context_channels;
  std::vector<double> snr;
  SyntheticConfig config;
};

// Planted directions, orthonormalized from seeded Gaussian draws.
SyntheticGroundTruth make_ground_truth(const SyntheticConfig& config);

struct SampleDraw {
  Relation relation = Relation::Entailment;
  bool label_positive = true;
};
SampleDraw draw_sample(const SyntheticGroundTruth& truth, std::uint64_t sample_id);

// Signed truth position of the sample's own hypothesis, before any context.
double own_position(const SyntheticGroundTruth& truth, std::uint64_t sample_id, std::uint16_t layer);

// Premise representation for an original-* variant. Conditional mode places the
// stated polarity along theta*, marginal mode the premise's actual truth.
std::vector<double> premise_vector(const SyntheticGroundTruth& truth, std::uint64_t sample_id, PromptVariant variant,
                                   std::uint16_t layer);

// Truth position of the hypothesis given the premise's component along theta*.
double hypothesis_position(const SyntheticConfig& config, double q_along_truth, Relation relation, double own);

// position * theta* + isotropic noise drawn from rng.
std::vector<double> forward_hypothesis(const SyntheticGroundTruth& truth, std::span<const double> q_vec,
                                       Relation relation, double own, Rng& rng);

// The stored pair for one (sample, variant, layer). For original-* variants a
// replacement premise vector may be supplied; noise draws are unchanged by it.
ActivationRecord synthetic_record(const SyntheticGroundTruth& truth, std::uint64_t sample_id, PromptVariant variant,
                                  std::uint16_t layer, std::span<const double> premise_override = {});

struct SyntheticCorpus {
  StoreManifest manifest;
  std::vector<ActivationRecord> records;
  SyntheticGroundTruth truth;

  ActivationStore store() const { return ActivationStore(manifest, records); }
};

// All seven variants at every layer for samples 0..n-1. The manifest's baseline
// table reads p_correct = sigmoid(x+ . theta*) at the last layer.
SyntheticCorpus generate_corpus(const SyntheticConfig& config);

// Probe sigmoid(x . theta*) with zero mean.
Direction oracle_direction(const SyntheticGroundTruth& truth, int layer);

std::string config_to_json(const SyntheticConfig& config);
SyntheticConfig config_from_json(const std::string& text);

std::filesystem::path truth_path(const std::filesystem::path& store_path);
std::string truth_to_json(const SyntheticGroundTruth& truth);
SyntheticGroundTruth truth_from_json(const std::string& text);
void write_truth(const SyntheticGroundTruth& truth, const std::filesystem::path& path);
SyntheticGroundTruth read_truth(const std::filesystem::path& path);

}  // namespace tvp
