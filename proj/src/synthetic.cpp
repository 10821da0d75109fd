#include "tvprobe/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "text_io.hpp"
#include "tvprobe/error.hpp"

namespace tvp {

using nlohmann::json;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kDirTag = 0xd1;
constexpr std::uint64_t kRelationTag = 0x5a;
constexpr std::uint64_t kPremiseTag = 0x9e;
constexpr std::uint64_t kNoiseTag = 0x4e01;
constexpr std::uint64_t kContentTag = 0xc0;
constexpr std::uint64_t kLeakTag = 0x1ee;

std::vector<double> gaussian(std::size_t d, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = stddev * n(rng);
  return v;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
}

void remove_component(std::span<double> v, std::span<const double> unit) { axpy(-dot(v, unit), unit, v); }

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

bool needs_channels(const SyntheticConfig& c) { return c.context_shift != 0.0; }

}  // namespace

void SyntheticConfig::validate() const {
  auto finite_nonneg = [](double x) { return std::isfinite(x) && x >= 0.0; };
  if (dimension < 2) fail(ErrorKind::InvalidInput, "synthetic dimension must be at least 2");
  if (n_samples < 2) fail(ErrorKind::InvalidInput, "synthetic corpus needs at least 2 samples");
  if (layer_count < 1 || layer_count > 65535) fail(ErrorKind::InvalidInput, "layer_count must be in [1, 65535]");
  if (!finite_nonneg(noise_std)) fail(ErrorKind::InvalidInput, "noise_std must be finite and >= 0");
  if (!(std::isfinite(truth_scale) && truth_scale > 0.0)) fail(ErrorKind::InvalidInput, "truth_scale must be > 0");
  if (!(coupling >= 0.0 && coupling <= 1.0)) fail(ErrorKind::InvalidInput, "coupling must be in [0, 1]");
  if (!finite_nonneg(spurious_strength)) fail(ErrorKind::InvalidInput, "spurious_strength must be >= 0");
  if (!finite_nonneg(irrelevant_sensitivity)) fail(ErrorKind::InvalidInput, "irrelevant_sensitivity must be >= 0");
  if (!finite_nonneg(content_std)) fail(ErrorKind::InvalidInput, "content_std must be >= 0");
  if (!std::isfinite(context_shift)) fail(ErrorKind::InvalidInput, "context_shift must be finite");
  if (needs_channels(*this) && dimension < 2 + kAllVariants.size()) {
    fail(ErrorKind::InvalidInput, "context_shift needs dimension >= 9; set it to 0 for smaller dimensions");
  }
  if (!snr_profile.empty()) {
    if (snr_profile.size() != layer_count) {
      fail(ErrorKind::InvalidInput, "snr_profile has " + std::to_string(snr_profile.size()) + " entries for " +
                                        std::to_string(layer_count) + " layers");
    }
    for (double m : snr_profile) {
      if (!finite_nonneg(m)) fail(ErrorKind::InvalidInput, "snr_profile entries must be finite and >= 0");
    }
  }
}

std::vector<double> SyntheticConfig::layer_snr() const {
  if (!snr_profile.empty()) return snr_profile;
  std::vector<double> m(layer_count);
  const double half = std::max(1.0, static_cast<double>(layer_count) / 2.0);
  for (std::uint32_t l = 0; l < layer_count; ++l) m[l] = std::min(1.0, static_cast<double>(l + 1) / half);
  return m;
}

SyntheticGroundTruth make_ground_truth(const SyntheticConfig& config) {
  config.validate();
  SyntheticGroundTruth t;
  t.config = config;
  t.snr = config.layer_snr();
  const std::size_t d = config.dimension;
  const std::size_t count = 2 + (needs_channels(config) ? kAllVariants.size() : 0);

  Rng rng(derive_seed({config.seed, kDirTag}));
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    auto v = gaussian(d, 1.0, rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) remove_component(v, b);
    }
    const double n = norm(v);
    if (n < 1e-8) continue;
    for (auto& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  t.theta_star = basis[0];
  t.theta_spur = basis[1];
  t.context_channels.assign(basis.begin() + 2, basis.end());
  return t;
}

SampleDraw draw_sample(const SyntheticGroundTruth& truth, std::uint64_t sample_id) {
  Rng rng(derive_seed({truth.config.seed, kRelationTag, sample_id}));
  std::bernoulli_distribution coin(0.5);
  SampleDraw s;
  s.relation = coin(rng) ? Relation::Entailment : Relation::Contradiction;
  s.label_positive = s.relation == Relation::Entailment;
  return s;
}

double own_position(const SyntheticGroundTruth& truth, std::uint64_t sample_id, std::uint16_t layer) {
  const double sign = draw_sample(truth, sample_id).label_positive ? 1.0 : -1.0;
  return truth.snr.at(layer) * truth.config.truth_scale * sign;
}

std::vector<double> premise_vector(const SyntheticGroundTruth& truth, std::uint64_t sample_id, PromptVariant variant,
                                   std::uint16_t layer) {
  if (!is_original(variant)) {
    fail(ErrorKind::InvalidInput, std::string("premise vectors exist only for original variants, got ") +
                                      std::string(to_string(variant)));
  }
  const auto& c = truth.config;
  double stated = premise_polarity(variant) == Polarity::Positive ? 1.0 : -1.0;
  if (c.mode == BeliefMode::Marginal) stated = 1.0;
  Rng rng(derive_seed({c.seed, kPremiseTag, sample_id, layer}));
  auto q = gaussian(c.dimension, c.noise_std, rng);
  axpy(truth.snr.at(layer) * c.truth_scale * stated, truth.theta_star, q);
  return q;
}

double hypothesis_position(const SyntheticConfig& config, double q_along_truth, Relation relation, double own) {
  if (config.mode == BeliefMode::Prior) return own;
  return relation_sign(relation) * config.coupling * q_along_truth + (1.0 - config.coupling) * own;
}

std::vector<double> forward_hypothesis(const SyntheticGroundTruth& truth, std::span<const double> q_vec,
                                       Relation relation, double own, Rng& rng) {
  if (q_vec.size() != truth.theta_star.size()) fail(ErrorKind::InvalidInput, "premise vector dimension mismatch");
  const double position = hypothesis_position(truth.config, dot(q_vec, truth.theta_star), relation, own);
  auto h = gaussian(truth.theta_star.size(), truth.config.noise_std, rng);
  axpy(position, truth.theta_star, h);
  return h;
}

ActivationRecord synthetic_record(const SyntheticGroundTruth& truth, std::uint64_t sample_id, PromptVariant variant,
                                  std::uint16_t layer, std::span<const double> premise_override) {
  const auto& c = truth.config;
  const std::size_t d = c.dimension;
  const double m = truth.snr.at(layer);
  const SampleDraw draw = draw_sample(truth, sample_id);
  const double own = own_position(truth, sample_id, layer);

  Rng noise_pos(derive_seed({c.seed, kNoiseTag, sample_id, layer, 0}));
  Rng noise_neg(derive_seed({c.seed, kNoiseTag, sample_id, layer, 1}));

  std::vector<double> x_pos;
  double position = 0.0;
  if (is_original(variant)) {
    std::vector<double> q;
    std::span<const double> qs = premise_override;
    if (qs.empty()) {
      q = premise_vector(truth, sample_id, variant, layer);
      qs = q;
    }
    x_pos = forward_hypothesis(truth, qs, draw.relation, own, noise_pos);
    position = hypothesis_position(c, dot(qs, truth.theta_star), draw.relation, own);
  } else {
    if (!premise_override.empty()) fail(ErrorKind::InvalidInput, "premise override needs an original variant");
    position = c.mode == BeliefMode::Prior ? own : (1.0 - c.coupling) * own;
    if (variant != PromptVariant::NoPrem) {
      Rng leak(derive_seed({c.seed, kLeakTag, sample_id, layer, static_cast<std::uint64_t>(variant)}));
      std::normal_distribution<double> n(0.0, 1.0);
      position += c.irrelevant_sensitivity * m * c.truth_scale * n(leak);
    }
    x_pos = gaussian(d, c.noise_std, noise_pos);
    axpy(position, truth.theta_star, x_pos);
  }
  auto x_neg = gaussian(d, c.noise_std, noise_neg);
  axpy(-position, truth.theta_star, x_neg);

  if (c.dataset_kind == DatasetKind::Snli && c.spurious_strength > 0.0) {
    const double s = c.spurious_strength * m * (draw.label_positive ? 1.0 : -1.0);
    axpy(s, truth.theta_spur, x_pos);
    axpy(-s, truth.theta_spur, x_neg);
  }
  if (!truth.context_channels.empty()) {
    const auto& ch = truth.context_channels.at(static_cast<std::size_t>(variant));
    axpy(c.context_shift, ch, x_pos);
    axpy(c.context_shift, ch, x_neg);
  }
  if (c.content_std > 0.0) {
    Rng rng(derive_seed({c.seed, kContentTag, sample_id, layer}));
    auto z = gaussian(d, c.content_std, rng);
    remove_component(z, truth.theta_star);
    axpy(1.0, z, x_pos);
    axpy(1.0, z, x_neg);
  }

  ActivationRecord r;
  r.sample_id = sample_id;
  r.variant = variant;
  r.layer = layer;
  r.label_positive = draw.label_positive;
  r.relation = draw.relation;
  r.vec_pos = to_float(x_pos);
  r.vec_neg = to_float(x_neg);
  return r;
}

SyntheticCorpus generate_corpus(const SyntheticConfig& config) {
  SyntheticCorpus out;
  out.truth = make_ground_truth(config);
  const auto n = config.n_samples;
  const std::size_t nv = kAllVariants.size();
  const std::size_t nl = config.layer_count;
  const auto last = static_cast<std::uint16_t>(nl - 1);

  out.records.resize(n * nv * nl);
  out.manifest.baseline.resize(n * nv);
#pragma omp parallel for schedule(static)
  for (std::int64_t si = 0; si < static_cast<std::int64_t>(n); ++si) {
    const auto id = static_cast<std::uint64_t>(si);
    for (std::size_t v = 0; v < nv; ++v) {
      for (std::size_t l = 0; l < nl; ++l) {
        out.records[(id * nv + v) * nl + l] = synthetic_record(out.truth, id, kAllVariants[v], static_cast<std::uint16_t>(l));
      }
      const ActivationRecord& top = out.records[(id * nv + v) * nl + last];
      double z = 0.0;
      for (std::size_t k = 0; k < top.vec_pos.size(); ++k) z += static_cast<double>(top.vec_pos[k]) * out.truth.theta_star[k];
      BaselineEntry& b = out.manifest.baseline[id * nv + v];
      b.sample_id = id;
      b.variant = kAllVariants[v];
      b.p_correct = sigmoid(z);
      b.p_incorrect = 1.0 - b.p_correct;
    }
  }

  out.manifest.dimension = config.dimension;
  out.manifest.layer_count = config.layer_count;
  out.manifest.model_tag = "synthetic-" + std::string(to_string(config.mode));
  for (const auto& r : out.records) ++out.manifest.counts[{r.variant, r.layer}];
  return out;
}

Direction oracle_direction(const SyntheticGroundTruth& truth, int layer) {
  Direction d;
  d.theta = truth.theta_star;
  d.mu.assign(truth.theta_star.size(), 0.0);
  d.method = Method::Mmp;
  d.layer = layer;
  d.train_setting = TrainSetting::PosPrem;
  return d;
}

namespace {

json config_json(const SyntheticConfig& c) {
  return {
      {"dimension", c.dimension},
      {"n_samples", c.n_samples},
      {"layer_count", c.layer_count},
      {"noise_std", c.noise_std},
      {"truth_scale", c.truth_scale},
      {"coupling", c.coupling},
      {"mode", to_string(c.mode)},
      {"spurious_strength", c.spurious_strength},
      {"irrelevant_sensitivity", c.irrelevant_sensitivity},
      {"content_std", c.content_std},
      {"context_shift", c.context_shift},
      {"dataset_kind", to_string(c.dataset_kind)},
      {"snr_profile", c.snr_profile},
      {"seed", c.seed},
  };
}

// Missing keys keep their defaults, so partial config files are accepted.
SyntheticConfig config_from(const json& j) {
  SyntheticConfig c;
  c.dimension = j.value("dimension", c.dimension);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.layer_count = j.value("layer_count", c.layer_count);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.truth_scale = j.value("truth_scale", c.truth_scale);
  c.coupling = j.value("coupling", c.coupling);
  if (j.contains("mode")) c.mode = parse_belief_mode(j.at("mode").get<std::string>());
  c.spurious_strength = j.value("spurious_strength", c.spurious_strength);
  c.irrelevant_sensitivity = j.value("irrelevant_sensitivity", c.irrelevant_sensitivity);
  c.content_std = j.value("content_std", c.content_std);
  c.context_shift = j.value("context_shift", c.context_shift);
  if (j.contains("dataset_kind")) c.dataset_kind = parse_dataset_kind(j.at("dataset_kind").get<std::string>());
  c.snr_profile = j.value("snr_profile", c.snr_profile);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

std::string config_to_json(const SyntheticConfig& config) { return config_json(config).dump(2); }

SyntheticConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("synthetic config: ") + e.what());
  }
}

std::filesystem::path truth_path(const std::filesystem::path& store_path) {
  auto p = store_path;
  p += ".truth.json";
  return p;
}

std::string truth_to_json(const SyntheticGroundTruth& truth) {
  const json j = {
      {"theta_star", truth.theta_star},
      {"theta_spur", truth.theta_spur},
      {"context_channels", truth.context_channels},
      {"snr", truth.snr},
      {"config", config_json(truth.config)},
  };
  return j.dump(2);
}

SyntheticGroundTruth truth_from_json(const std::string& text) {
  SyntheticGroundTruth t;
  try {
    const json j = json::parse(text);
    t.theta_star = j.at("theta_star").get<std::vector<double>>();
    t.theta_spur = j.at("theta_spur").get<std::vector<double>>();
    t.context_channels = j.at("context_channels").get<std::vector<std::vector<double>>>();
    t.snr = j.at("snr").get<std::vector<double>>();
    t.config = config_from(j.at("config"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("ground-truth file: ") + e.what());
  }
  if (t.theta_star.size() != t.config.dimension || t.theta_spur.size() != t.config.dimension) {
    fail(ErrorKind::Schema, "ground-truth directions do not match the configured dimension");
  }
  if (t.snr.size() != t.config.layer_count) fail(ErrorKind::Schema, "ground-truth snr does not match layer_count");
  return t;
}

void write_truth(const SyntheticGroundTruth& truth, const std::filesystem::path& path) {
  detail::write_text_file(path, truth_to_json(truth) + "\n");
}

SyntheticGroundTruth read_truth(const std::filesystem::path& path) {
  return truth_from_json(detail::read_text_file(path, "ground-truth file"));
}

}  // namespace tvp
