#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvprobe/probe.hpp"
#include "tvprobe/types.hpp"

namespace tvp {

class ActivationStore;
struct ActivationRecord;
struct SyntheticGroundTruth;

// Subtract on the affirmed premise, or add on the negated one.
enum class TargetCase : std::uint8_t { SubtractOnAffirmed, AddOnNegated };
enum class TokenRole : std::uint8_t { AnswerToken, FollowingPeriod };

std::string_view to_string(TargetCase t);
std::string_view to_string(TokenRole r);
TargetCase parse_target_case(std::string_view s);
TokenRole parse_token_role(std::string_view s);

// Prompt variant whose premise is moved, and the sign applied to the direction.
PromptVariant target_variant(TargetCase t);
double target_sign(TargetCase t);

struct LayerSteer {
  int layer = 0;
  // Steering and read-out probe for this layer; applied as a unit vector.
  Direction direction;
  // Norm of the mass-mean direction at this layer.
  double magnitude = 0.0;
};

struct LayerRange {
  int first = 8;
  int last = 14;
};

struct InterventionSpec {
  TargetCase target = TargetCase::SubtractOnAffirmed;
  LayerRange layers;
  std::vector<TokenRole> token_roles = {TokenRole::AnswerToken, TokenRole::FollowingPeriod};
  std::vector<LayerSteer> steers;  // sorted by layer, one per layer in range

  const LayerSteer* steer_for(int layer) const;
  void validate() const;
};

// Intersects `requested` with the layers that have both a steering and a
// mass-mean direction; an empty intersection is an error. Directions are
// matched by their layer field.
InterventionSpec make_intervention_spec(std::span<const Direction> steering, std::span<const Direction> mass_mean,
                                        TargetCase target, LayerRange requested = {});

struct InterventionCell {
  Relation relation = Relation::Entailment;
  int layer = -1;  // -1 pools all layers
  double mean_delta = 0.0;
  double stderr_delta = 0.0;
  std::size_t n = 0;
};

struct SampleDelta {
  std::uint64_t sample_id = 0;
  int layer = 0;
  Relation relation = Relation::Entailment;
  double p_before = 0.0;
  double p_after = 0.0;
  double delta = 0.0;
};

struct InterventionOutcome {
  // Per-layer cells in (layer, relation) order, followed by the pooled cells.
  std::vector<InterventionCell> cells;
  std::vector<SampleDelta> samples;
  // Sample ids present on only one side of a store comparison.
  std::vector<std::uint64_t> unmatched_ids;

  const InterventionCell* cell(Relation relation, int layer = -1) const;
};

InterventionOutcome summarize_deltas(std::vector<SampleDelta> samples);

// Closed loop on the synthetic forward map: each premise vector is moved by
// sign * magnitude * unit(theta), the hypothesis is regenerated with the same
// noise, and both versions are read out with the layer's direction.
InterventionOutcome intervene_synthetic(const SyntheticGroundTruth& truth, const InterventionSpec& spec,
                                        std::span<const std::uint64_t> sample_ids);

// Target-variant records after the intervention, as an extractor would emit them.
std::vector<ActivationRecord> intervened_records(const SyntheticGroundTruth& truth, const InterventionSpec& spec,
                                                 std::span<const std::uint64_t> sample_ids);

// Paired readout of pre and post stores over the spec's target variant and
// layers. Restricted to `sample_ids` when given.
InterventionOutcome intervention_effect(const ActivationStore& pre, const ActivationStore& post,
                                        const InterventionSpec& spec, std::span<const std::uint64_t> sample_ids = {});

// Exported spec carries a content hash that the extractor echoes into its manifest.
std::string spec_to_json(const InterventionSpec& spec);
InterventionSpec spec_from_json(const std::string& text);
std::string spec_hash(const InterventionSpec& spec);
void export_intervention_spec(const InterventionSpec& spec, const std::filesystem::path& path);
InterventionSpec import_intervention_spec(const std::filesystem::path& path);

// relation,layer,mean_delta,stderr,n
std::string outcome_csv(const InterventionOutcome& outcome);

}  // namespace tvp
