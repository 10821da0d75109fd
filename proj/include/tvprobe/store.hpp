#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tvprobe/types.hpp"

namespace tvp {

// Paired activations of the affirmed and negated hypothesis prompts for one
// (sample, variant, layer). The negated label is implied as 1 - label_positive.
struct ActivationRecord {
  std::uint64_t sample_id = 0;
  PromptVariant variant = PromptVariant::NoPrem;
  std::uint16_t layer = 0;
  bool label_positive = false;
  Relation relation = Relation::Entailment;
  std::vector<float> vec_pos;
  std::vector<float> vec_neg;

  bool operator==(const ActivationRecord&) const = default;
};

// LM-head probabilities of the "correct"/"incorrect" answer tokens, renormalized to sum to one.
struct BaselineEntry {
  std::uint64_t sample_id = 0;
  PromptVariant variant = PromptVariant::NoPrem;
  double p_correct = 0.5;
  double p_incorrect = 0.5;

  bool operator==(const BaselineEntry&) const = default;
};

struct StoreManifest {
  std::uint32_t dimension = 0;
  std::uint32_t layer_count = 0;
  std::string model_tag;
  // (variant, layer) -> record count; filled by write_store.
  std::map<std::pair<PromptVariant, std::uint16_t>, std::uint64_t> counts;
  std::vector<BaselineEntry> baseline;

  std::vector<PromptVariant> variants() const;
  bool operator==(const StoreManifest&) const = default;
};

// Binary layout, little-endian:
//   header  "TVJA" | version u16 | dimension u32 | record count u64      (18 bytes)
//   record  sample_id u64 | variant u8 | layer u16 | label u8 | relation u8 | pad[3]
//           | vec_pos f32[d] | vec_neg f32[d]                             (16 + 8d bytes)
// The manifest is a JSON sidecar at manifest_path(store).
inline constexpr char kStoreMagic[4] = {'T', 'V', 'J', 'A'};
inline constexpr std::uint16_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 18;
inline constexpr std::size_t kRecordHeaderBytes = 16;

std::filesystem::path manifest_path(const std::filesystem::path& store_path);

class ActivationStore {
 public:
  ActivationStore() = default;
  ActivationStore(StoreManifest manifest, std::vector<ActivationRecord> records);

  const StoreManifest& manifest() const { return manifest_; }
  std::uint32_t dimension() const { return manifest_.dimension; }
  std::span<const ActivationRecord> records() const { return records_; }

  // Records of one (variant, layer), sorted by sample_id.
  std::vector<const ActivationRecord*> select(PromptVariant variant, std::uint16_t layer) const;
  const ActivationRecord* find(std::uint64_t sample_id, PromptVariant variant, std::uint16_t layer) const;

  // Sorted unique sample ids present anywhere in the store.
  std::vector<std::uint64_t> sample_ids() const;
  std::vector<std::uint16_t> layers() const;

 private:
  StoreManifest manifest_;
  std::vector<ActivationRecord> records_;
  std::map<std::pair<PromptVariant, std::uint16_t>, std::vector<std::size_t>> index_;
};

// Serializes the binary payload only; throws InvalidInput naming the first inconsistent record.
std::vector<std::uint8_t> encode_store(std::span<const ActivationRecord> records, std::uint32_t dimension);
ActivationStore decode_store(std::span<const std::uint8_t> bytes, StoreManifest manifest);

// Writes payload and sidecar; the manifest's counts are recomputed from the records.
void write_store(std::span<const ActivationRecord> records, StoreManifest manifest,
                 const std::filesystem::path& path);
ActivationStore read_store(const std::filesystem::path& path);

std::string manifest_to_json(const StoreManifest& m);
StoreManifest manifest_from_json(const std::string& text);

struct Split {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> eval;
};

// Deterministic partition of sample ids, shared by every variant and layer.
Split split_train_eval(std::span<const std::uint64_t> sample_ids, double fraction, std::uint64_t seed);
inline Split split_train_eval(const ActivationStore& store, double fraction, std::uint64_t seed) {
  const auto ids = store.sample_ids();
  return split_train_eval(ids, fraction, seed);
}

}  // namespace tvp
