#include "tvprobe/types.hpp"

#include "tvprobe/error.hpp"

namespace tvp {

namespace {

template <typename Enum, std::size_t N>
Enum parse_from(std::string_view s, const std::array<std::pair<std::string_view, Enum>, N>& table,
                std::string_view what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  fail(ErrorKind::InvalidInput, "unknown " + std::string(what) + ": '" + std::string(s) + "'");
}

}  // namespace

Polarity premise_polarity(PromptVariant v) {
  switch (v) {
    case PromptVariant::OriginalNegPrem:
    case PromptVariant::RandomNegPrem:
    case PromptVariant::ShuffleNegPrem:
      return Polarity::Negative;
    default:
      return Polarity::Positive;
  }
}

bool has_premise(PromptVariant v) { return v != PromptVariant::NoPrem; }

bool is_original(PromptVariant v) {
  return v == PromptVariant::OriginalPosPrem || v == PromptVariant::OriginalNegPrem;
}

bool is_random(PromptVariant v) {
  return v == PromptVariant::RandomPosPrem || v == PromptVariant::RandomNegPrem;
}

bool is_shuffle(PromptVariant v) {
  return v == PromptVariant::ShufflePosPrem || v == PromptVariant::ShuffleNegPrem;
}

PromptVariant training_variant(TrainSetting s) {
  return s == TrainSetting::NoPrem ? PromptVariant::NoPrem : PromptVariant::OriginalPosPrem;
}

std::string_view to_string(DatasetKind k) {
  return k == DatasetKind::EntailmentBank ? "entailment-bank" : "snli";
}

std::string_view to_string(Relation r) {
  return r == Relation::Entailment ? "entailment" : "contradiction";
}

std::string_view to_string(Polarity p) { return p == Polarity::Positive ? "positive" : "negative"; }

std::string_view to_string(PromptVariant v) {
  switch (v) {
    case PromptVariant::NoPrem:
      return "no-prem";
    case PromptVariant::OriginalPosPrem:
      return "original-pos-prem";
    case PromptVariant::OriginalNegPrem:
      return "original-neg-prem";
    case PromptVariant::RandomPosPrem:
      return "random-pos-prem";
    case PromptVariant::RandomNegPrem:
      return "random-neg-prem";
    case PromptVariant::ShufflePosPrem:
      return "shuffle-pos-prem";
    case PromptVariant::ShuffleNegPrem:
      return "shuffle-neg-prem";
  }
  return "?";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Mmp:
      return "mmp";
    case Method::Lr:
      return "lr";
    case Method::Ccs:
      return "ccs";
    case Method::Ccr:
      return "ccr";
    case Method::LmHeadBaseline:
      return "lm-head-baseline";
  }
  return "?";
}

std::string_view to_string(TrainSetting s) { return s == TrainSetting::NoPrem ? "no-prem" : "pos-prem"; }

std::string_view to_string(BeliefMode m) {
  switch (m) {
    case BeliefMode::Prior:
      return "prior";
    case BeliefMode::Conditional:
      return "conditional";
    case BeliefMode::Marginal:
      return "marginal";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, DatasetKind>, 4> table{{
      {"entailment-bank", DatasetKind::EntailmentBank},
      {"entbank", DatasetKind::EntailmentBank},
      {"snli", DatasetKind::Snli},
      {"SNLI", DatasetKind::Snli},
  }};
  return parse_from(s, table, "dataset kind");
}

Relation parse_relation(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, Relation>, 2> table{{
      {"entailment", Relation::Entailment},
      {"contradiction", Relation::Contradiction},
  }};
  return parse_from(s, table, "relation");
}

Polarity parse_polarity(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, Polarity>, 2> table{{
      {"positive", Polarity::Positive},
      {"negative", Polarity::Negative},
  }};
  return parse_from(s, table, "polarity");
}

PromptVariant parse_variant(std::string_view s) {
  for (PromptVariant v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorKind::InvalidInput, "unknown prompt variant: '" + std::string(s) + "'");
}

Method parse_method(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, Method>, 5> table{{
      {"mmp", Method::Mmp},
      {"lr", Method::Lr},
      {"ccs", Method::Ccs},
      {"ccr", Method::Ccr},
      {"lm-head-baseline", Method::LmHeadBaseline},
  }};
  return parse_from(s, table, "method");
}

TrainSetting parse_train_setting(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, TrainSetting>, 2> table{{
      {"no-prem", TrainSetting::NoPrem},
      {"pos-prem", TrainSetting::PosPrem},
  }};
  return parse_from(s, table, "train setting");
}

BeliefMode parse_belief_mode(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, BeliefMode>, 3> table{{
      {"prior", BeliefMode::Prior},
      {"conditional", BeliefMode::Conditional},
      {"marginal", BeliefMode::Marginal},
  }};
  return parse_from(s, table, "belief mode");
}

}  // namespace tvp
