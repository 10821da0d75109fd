#include "tvprobe/pipeline.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "text_io.hpp"
#include "tvprobe/error.hpp"

namespace tvp {

using nlohmann::json;

TrainedProbe train_probe(const ActivationStore& store, TrainSetting setting, Method method, std::uint16_t layer,
                         const Split& split, const TrainConfig& config) {
  if (method == Method::LmHeadBaseline) fail(ErrorKind::InvalidInput, "the LM-head baseline is not trainable");
  const PromptVariant variant = training_variant(setting);
  PairSet train = gather_pairs(store, variant, layer, split.train);
  if (train.n == 0) {
    fail(ErrorKind::InvalidInput,
         fmt::format("no {} training records at layer {}", to_string(variant), layer));
  }
  const NormalizationStats stats = mean_normalize(train, config.exec);
  PairSet eval = gather_pairs(store, variant, layer, split.eval);
  apply_normalization(eval, stats);

  std::vector<Direction> raw;
  switch (method) {
    case Method::Mmp:
      raw.push_back(train_mmp(train, config.exec));
      break;
    case Method::Lr:
      raw.push_back(train_lr(train, config));
      break;
    case Method::Ccs:
      raw = train_ccs(train, config);
      break;
    case Method::Ccr:
      raw = train_ccr(train, config);
      break;
    case Method::LmHeadBaseline:
      break;
  }

  TrainedProbe out;
  const Direction& best = best_loss_direction(raw);
  out.selected = static_cast<std::size_t>(&best - raw.data());
  for (auto& d : raw) {
    d.layer = layer;
    d.train_setting = setting;
    d.mu = stats.mu;
    ProbeRun run;
    run.direction = orient_direction(std::move(d), train);
    run.train_accuracy = pair_accuracy(run.direction, train);
    run.eval_accuracy = pair_accuracy(run.direction, eval);
    out.runs.push_back(std::move(run));
  }
  out.best = out.runs[out.selected].direction;
  return out;
}

std::filesystem::path direction_path(const std::filesystem::path& root, TrainSetting setting, Method method,
                                     int layer) {
  return root / std::string(to_string(setting)) / std::string(to_string(method)) / fmt::format("layer_{:03d}.json", layer);
}

std::vector<Direction> load_directions(const std::filesystem::path& root, TrainSetting setting, Method method,
                                       std::span<const std::uint16_t> layers) {
  std::vector<Direction> out;
  for (auto l : layers) {
    Direction d = read_direction(direction_path(root, setting, method, l));
    if (d.layer != l || d.method != method || d.train_setting != setting) {
      fail(ErrorKind::Schema, "direction file " + direction_path(root, setting, method, l).string() +
                                  " does not match its location");
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string split_to_json(const Split& split, double fraction, std::uint64_t seed) {
  const json j = {{"fraction", fraction}, {"seed", seed}, {"train", split.train}, {"eval", split.eval}};
  return j.dump();
}

Split split_from_json(const std::string& text) {
  Split s;
  try {
    const json j = json::parse(text);
    s.train = j.at("train").get<std::vector<std::uint64_t>>();
    s.eval = j.at("eval").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("split file: ") + e.what());
  }
  if (!std::is_sorted(s.train.begin(), s.train.end()) || !std::is_sorted(s.eval.begin(), s.eval.end())) {
    fail(ErrorKind::Schema, "split file ids must be sorted");
  }
  return s;
}

void write_split(const Split& split, double fraction, std::uint64_t seed, const std::filesystem::path& path) {
  detail::write_text_file(path, split_to_json(split, fraction, seed) + "\n");
}

Split read_split(const std::filesystem::path& path) { return split_from_json(detail::read_text_file(path, "split file")); }

EvalRun evaluate_directions(const ActivationStore& store, const std::filesystem::path& direction_root,
                            std::span<const std::uint64_t> eval_ids, const EvalRequest& request) {
  if (request.methods.empty()) fail(ErrorKind::InvalidInput, "no methods to evaluate");
  const auto layers = store.layers();
  EvalRun run;
  for (TrainSetting setting : request.settings) {
    for (Method method : request.methods) {
      if (method == Method::LmHeadBaseline) continue;
      const auto dirs = load_directions(direction_root, setting, method, layers);
      SweepResult sweep = layer_sweep(store, dirs, eval_ids, request.options, request.calibration_target);
      for (std::size_t i = 0; i < dirs.size(); ++i) {
        Direction c = dirs[i];
        c.scale = sweep.reports[i].scale;
        run.calibrated.push_back(std::move(c));
      }
      run.reports.insert(run.reports.end(), sweep.reports.begin(), sweep.reports.end());
    }
  }
  if (request.include_baseline && !store.manifest().baseline.empty()) {
    const auto cases = baseline_case_probabilities(store, eval_ids);
    if (!cases.empty()) {
      LayerReport r = summarize_cases(cases, request.options);
      r.layer = -1;
      r.method = Method::LmHeadBaseline;
      r.train_setting = TrainSetting::NoPrem;
      run.reports.push_back(r);
    }
  }
  error_rank_summary(run.reports);
  return run;
}

std::vector<std::vector<double>> cosine_matrix(std::span<const Direction> directions) {
  const std::size_t n = directions.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    m[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      m[i][j] = m[j][i] = cosine_similarity(directions[i].theta, directions[j].theta);
    }
  }
  return m;
}

std::string cosine_matrix_csv(std::span<const std::string> labels, const std::vector<std::vector<double>>& m) {
  std::string out = "direction";
  for (const auto& l : labels) out += "," + l;
  out += '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += labels[i];
    for (double v : m[i]) out += fmt::format(",{:.6f}", v);
    out += '\n';
  }
  return out;
}

}  // namespace tvp
