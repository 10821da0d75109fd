#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tvprobe/evaluation.hpp"
#include "tvprobe/probe.hpp"
#include "tvprobe/store.hpp"
#include "tvprobe/types.hpp"

namespace tvp {

struct ProbeRun {
  Direction direction;  // oriented, with mu set
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
};

struct TrainedProbe {
  Direction best;
  std::vector<ProbeRun> runs;  // one per seed for ccs/ccr, a single entry otherwise
  std::size_t selected = 0;
};

// Gathers the setting's pairs on the train split, mean-normalizes, trains,
// picks the lowest-loss seed and orients it. Accuracies use the combined
// rule on the same variant, eval pairs normalized with the training mean.
TrainedProbe train_probe(const ActivationStore& store, TrainSetting setting, Method method, std::uint16_t layer,
                         const Split& split, const TrainConfig& config);

// <root>/<setting>/<method>/layer_<L>.json
std::filesystem::path direction_path(const std::filesystem::path& root, TrainSetting setting, Method method,
                                     int layer);

// Throws InvalidInput naming the first missing file.
std::vector<Direction> load_directions(const std::filesystem::path& root, TrainSetting setting, Method method,
                                       std::span<const std::uint16_t> layers);

std::string split_to_json(const Split& split, double fraction, std::uint64_t seed);
Split split_from_json(const std::string& text);
void write_split(const Split& split, double fraction, std::uint64_t seed, const std::filesystem::path& path);
Split read_split(const std::filesystem::path& path);

struct EvalRequest {
  std::vector<Method> methods;
  std::vector<TrainSetting> settings;
  EvalOptions options;
  double calibration_target = 0.25;
  bool include_baseline = true;  // only when the manifest has a baseline table
};

struct EvalRun {
  // Every (setting, method, layer) report plus the baseline row, with e_star
  // ranked over this whole pool.
  std::vector<LayerReport> reports;
  std::vector<Direction> calibrated;
};

EvalRun evaluate_directions(const ActivationStore& store, const std::filesystem::path& direction_root,
                            std::span<const std::uint64_t> eval_ids, const EvalRequest& request);

// Symmetric matrix of pairwise cosine similarities.
std::vector<std::vector<double>> cosine_matrix(std::span<const Direction> directions);
std::string cosine_matrix_csv(std::span<const std::string> labels, const std::vector<std::vector<double>>& m);

}  // namespace tvp
