#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace tvp {

enum class DatasetKind : std::uint8_t { EntailmentBank, Snli };

enum class Relation : std::uint8_t { Entailment = 0, Contradiction = 1 };

enum class Polarity : std::uint8_t { Positive, Negative };

// Declaration order is the on-disk encoding of the variant byte in activation stores.
enum class PromptVariant : std::uint8_t {
  NoPrem = 0,
  OriginalPosPrem = 1,
  OriginalNegPrem = 2,
  RandomPosPrem = 3,
  RandomNegPrem = 4,
  ShufflePosPrem = 5,
  ShuffleNegPrem = 6,
};

inline constexpr std::array<PromptVariant, 7> kAllVariants = {
    PromptVariant::NoPrem,        PromptVariant::OriginalPosPrem, PromptVariant::OriginalNegPrem,
    PromptVariant::RandomPosPrem, PromptVariant::RandomNegPrem,   PromptVariant::ShufflePosPrem,
    PromptVariant::ShuffleNegPrem,
};

enum class Method : std::uint8_t { Mmp, Lr, Ccs, Ccr, LmHeadBaseline };

enum class TrainSetting : std::uint8_t { NoPrem, PosPrem };

enum class BeliefMode : std::uint8_t { Prior, Conditional, Marginal };

// Premise polarity stated by a variant; NoPrem has none and reports Positive.
Polarity premise_polarity(PromptVariant v);
bool has_premise(PromptVariant v);
bool is_original(PromptVariant v);
bool is_random(PromptVariant v);
bool is_shuffle(PromptVariant v);

// The prompt variant a training setting draws its pairs from.
PromptVariant training_variant(TrainSetting s);

inline int relation_sign(Relation r) { return r == Relation::Entailment ? 1 : -1; }

std::string_view to_string(DatasetKind k);
std::string_view to_string(Relation r);
std::string_view to_string(Polarity p);
std::string_view to_string(PromptVariant v);
std::string_view to_string(Method m);
std::string_view to_string(TrainSetting s);
std::string_view to_string(BeliefMode m);

// Parsers throw tvp::Error(InvalidInput) on unknown names.
DatasetKind parse_dataset_kind(std::string_view s);
Relation parse_relation(std::string_view s);
Polarity parse_polarity(std::string_view s);
PromptVariant parse_variant(std::string_view s);
Method parse_method(std::string_view s);
TrainSetting parse_train_setting(std::string_view s);
BeliefMode parse_belief_mode(std::string_view s);

}  // namespace tvp
