#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tvprobe/types.hpp"

namespace tvp {

struct ContrastSample {
  std::uint64_t sample_id = 0;
  DatasetKind dataset_kind = DatasetKind::EntailmentBank;
  std::string context_text;
  std::vector<std::string> premises;
  std::vector<std::string> distractor_premises;
  std::string hypothesis_core;
  Relation relation = Relation::Entailment;
  // Whether the affirmed hypothesis is true given the premises.
  bool label_positive = true;
};

// Half-open range [begin, end) in Unicode code points.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const CharSpan&) const = default;
};

struct PromptRecord {
  std::uint64_t sample_id = 0;
  PromptVariant variant = PromptVariant::NoPrem;
  Polarity hypothesis_polarity = Polarity::Positive;
  std::string text;
  // One span per premise, covering "correct." or "incorrect.".
  std::vector<CharSpan> premise_answer_spans;
  // Code point index of the prompt-final period.
  std::size_t final_period_index = 0;
};

enum class StatementRole : std::uint8_t { Premise, Hypothesis };
enum class PictureSlot : std::uint8_t { A, B, None };

inline constexpr std::string_view kEntailmentBankPreamble = "You are given the following question:";
inline constexpr std::string_view kSnliPreamble =
    "You are looking at a picture (A) which is placed next to an unrelated picture (B).";

// Renders one meta-statement line, including its trailing period.
//   entailment-bank premise:    The statement "<s>" is [in]correct.
//   entailment-bank hypothesis: Answering the question with "<s>" is [in]correct.
//   snli premise (slot A/B):    Describing A as "<s>" is [in]correct.
//   snli hypothesis:            Saying (about picture A) that: "<s>" is [in]correct.
std::string render_meta_statement(std::string_view statement, Polarity polarity, DatasetKind kind,
                                  StatementRole role, PictureSlot slot = PictureSlot::None);

// Replaces every ASCII letter by a uniformly random letter, keeping case,
// length, and all non-letter characters in place.
std::string corrupt_sentence(std::string_view text, std::uint64_t rng_seed);

// Premises used for the unrelated-premise case. For snli the corpus must be
// sorted by sample_id; throws SkipSample / InvalidInput when none exist.
std::vector<std::string> select_unrelated_premises(const ContrastSample& sample,
                                                   std::span<const ContrastSample> corpus,
                                                   std::uint64_t rng_seed);

// Per-sample seed, so builds are reproducible regardless of corpus order.
std::uint64_t sample_seed(std::uint64_t global_seed, std::uint64_t sample_id);

PromptRecord build_prompt(const ContrastSample& sample, PromptVariant variant, Polarity polarity,
                          std::uint64_t rng_seed, std::span<const ContrastSample> corpus = {});

// Code point count of a UTF-8 string.
std::size_t utf8_length(std::string_view s);

// Source ingestion. Entailment-bank records: {id, question, answer, premises[],
// distractors[], relation}. SNLI records: {id, premise, hypothesis, gold_label};
// neutral pairs are dropped. Both return samples sorted by sample_id.
std::vector<ContrastSample> load_entailment_bank(const std::filesystem::path& path);
std::vector<ContrastSample> load_snli(const std::filesystem::path& path);
std::vector<ContrastSample> parse_entailment_bank(std::string_view jsonl);
std::vector<ContrastSample> parse_snli(std::string_view jsonl);

struct PromptBuildSummary {
  std::size_t records = 0;
  std::size_t skipped_shuffle_samples = 0;
};

// Renders all seven variants in both polarities for every sample.
std::vector<PromptRecord> build_all_prompts(std::span<const ContrastSample> corpus,
                                            std::uint64_t global_seed, PromptBuildSummary* summary = nullptr);

std::string prompt_record_to_json_line(const PromptRecord& r);
PromptRecord prompt_record_from_json_line(std::string_view line);
void write_prompt_records(const std::filesystem::path& path, std::span<const PromptRecord> records);
std::vector<PromptRecord> read_prompt_records(const std::filesystem::path& path);

}  // namespace tvp
