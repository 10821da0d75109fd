#include "tvprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <boost/math/tools/roots.hpp>
#include <nlohmann/json.hpp>

#include "text_io.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/rng.hpp"
#include "tvprobe/store.hpp"

namespace tvp {

using nlohmann::json;

void PairSet::push_back(std::span<const double> x_pos, std::span<const double> x_neg, bool label, Relation rel,
                        std::uint64_t sample_id) {
  if (n == 0 && d == 0) d = x_pos.size();
  if (x_pos.size() != d || x_neg.size() != d) fail(ErrorKind::InvalidInput, "pair dimension mismatch");
  pos.insert(pos.end(), x_pos.begin(), x_pos.end());
  neg.insert(neg.end(), x_neg.begin(), x_neg.end());
  label_positive.push_back(label ? 1 : 0);
  relation.push_back(rel);
  sample_ids.push_back(sample_id);
  ++n;
}

PairSet gather_pairs(const ActivationStore& store, PromptVariant variant, std::uint16_t layer,
                     std::span<const std::uint64_t> ids) {
  PairSet out;
  out.d = store.dimension();
  std::vector<double> p(out.d);
  std::vector<double> q(out.d);
  for (const ActivationRecord* r : store.select(variant, layer)) {
    if (!ids.empty() && !std::binary_search(ids.begin(), ids.end(), r->sample_id)) continue;
    std::copy(r->vec_pos.begin(), r->vec_pos.end(), p.begin());
    std::copy(r->vec_neg.begin(), r->vec_neg.end(), q.begin());
    out.push_back(p, q, r->label_positive, r->relation, r->sample_id);
  }
  return out;
}

std::vector<std::uint64_t> TrainConfig::default_seeds(std::size_t count) {
  std::vector<std::uint64_t> s(count);
  std::iota(s.begin(), s.end(), std::uint64_t{0});
  return s;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorKind::InvalidInput, "learning rate must be positive");
  if (steps < 1) fail(ErrorKind::InvalidInput, "steps must be at least 1");
  if (seeds.empty()) fail(ErrorKind::InvalidInput, "at least one seed is required");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

NormalizationStats mean_normalize(PairSet& pairs, kernels::Exec exec) {
  if (pairs.n == 0) fail(ErrorKind::InvalidInput, "cannot normalize an empty pair set");
  NormalizationStats stats;
  stats.mu.assign(pairs.d, 0.0);
  kernels::pooled_mean(exec, pairs.view(), stats.mu);
  apply_normalization(pairs, stats);
  return stats;
}

void apply_normalization(PairSet& pairs, const NormalizationStats& stats) {
  if (stats.mu.size() != pairs.d) fail(ErrorKind::InvalidInput, "normalization dimension mismatch");
  for (std::size_t i = 0; i < pairs.n; ++i) {
    for (std::size_t k = 0; k < pairs.d; ++k) {
      pairs.pos[i * pairs.d + k] -= stats.mu[k];
      pairs.neg[i * pairs.d + k] -= stats.mu[k];
    }
  }
}

double probe_eval(const Direction& direction, std::span<const double> x) {
  if (x.size() != direction.theta.size()) {
    fail(ErrorKind::InvalidInput, "probe input has dimension " + std::to_string(x.size()) + ", direction has " +
                                      std::to_string(direction.theta.size()));
  }
  return sigmoid(direction.scale * dot(x, direction.theta));
}

Direction train_mmp(const PairSet& normalized, kernels::Exec exec) {
  if (normalized.n == 0) fail(ErrorKind::InvalidInput, "mass-mean probing needs at least one pair");
  Direction d;
  d.method = Method::Mmp;
  d.theta.assign(normalized.d, 0.0);
  kernels::class_mean_difference(exec, normalized.view(), normalized.label_positive, d.theta);
  return d;
}

namespace {

void check_finite(double loss, int step, Method m) {
  if (!std::isfinite(loss)) {
    fail(ErrorKind::TrainingFailure,
         std::string(to_string(m)) + " training produced a non-finite loss at step " + std::to_string(step));
  }
}

std::vector<double> random_init(std::size_t d, std::uint64_t seed, double init_scale, Method m) {
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(m), 0x1417}));
  std::normal_distribution<double> normal(0.0, init_scale / std::sqrt(static_cast<double>(d)));
  std::vector<double> theta(d);
  for (auto& t : theta) t = normal(rng);
  return theta;
}

void normalize_in_place(std::vector<double>& v) {
  const double n = norm(v);
  if (n == 0.0) fail(ErrorKind::TrainingFailure, "direction collapsed to zero length");
  for (auto& x : v) x /= n;
}

template <typename LossGrad, typename PostStep>
Direction gradient_descent(std::vector<double> theta, Method method, std::uint64_t seed, const TrainConfig& config,
                           LossGrad&& loss_grad, PostStep&& post_step) {
  std::vector<double> grad(theta.size());
  Direction d;
  d.method = method;
  d.seed = seed;
  for (int step = 0; step < config.steps; ++step) {
    const double loss = loss_grad(theta, std::span<double>(grad));
    check_finite(loss, step, method);
    if (config.trace_every > 0 && step % config.trace_every == 0) d.train_loss_trace.push_back(loss);
    post_step(theta, grad);
  }
  d.final_loss = loss_grad(theta, std::span<double>{});
  check_finite(d.final_loss, config.steps, method);
  d.theta = std::move(theta);
  return d;
}

}  // namespace

Direction train_lr(const PairSet& normalized, const TrainConfig& config) {
  config.validate();
  if (normalized.n == 0) fail(ErrorKind::InvalidInput, "logistic regression needs at least one pair");
  const auto view = normalized.view();
  const double lr = config.learning_rate;
  Direction d = gradient_descent(
      std::vector<double>(normalized.d, 0.0), Method::Lr, 0, config,
      [&](const std::vector<double>& theta, std::span<double> grad) {
        return kernels::lr_loss_grad(config.exec, view, normalized.label_positive, theta, grad);
      },
      [&](std::vector<double>& theta, const std::vector<double>& grad) {
        for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= lr * grad[k];
      });
  for (auto& t : d.theta) t = -t;
  return d;
}

std::vector<Direction> train_ccs(const PairSet& normalized, const TrainConfig& config) {
  config.validate();
  if (normalized.n == 0) fail(ErrorKind::InvalidInput, "CCS needs at least one pair");
  const auto view = normalized.view();
  const double lr = config.learning_rate;
  std::vector<Direction> out;
  out.reserve(config.seeds.size());
  for (std::uint64_t seed : config.seeds) {
    out.push_back(gradient_descent(
        random_init(normalized.d, seed, config.init_scale, Method::Ccs), Method::Ccs, seed, config,
        [&](const std::vector<double>& theta, std::span<double> grad) {
          return kernels::ccs_loss_grad(config.exec, view, theta, grad);
        },
        [&](std::vector<double>& theta, const std::vector<double>& grad) {
          for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= lr * grad[k];
        }));
  }
  return out;
}

std::vector<Direction> train_ccr(const PairSet& normalized, const TrainConfig& config) {
  config.validate();
  if (normalized.n == 0) fail(ErrorKind::InvalidInput, "CCR needs at least one pair");
  const auto view = normalized.view();
  const double lr = config.learning_rate;
  std::vector<Direction> out;
  out.reserve(config.seeds.size());
  for (std::uint64_t seed : config.seeds) {
    auto init = random_init(normalized.d, seed, config.init_scale, Method::Ccr);
    normalize_in_place(init);
    out.push_back(gradient_descent(
        std::move(init), Method::Ccr, seed, config,
        [&](const std::vector<double>& theta, std::span<double> grad) {
          return kernels::ccr_loss_grad(config.exec, view, theta, grad);
        },
        [&](std::vector<double>& theta, const std::vector<double>& grad) {
          // Riemannian step on the unit sphere: tangent projection, step, retraction.
          const double radial = dot(grad, theta);
          for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= lr * (grad[k] - radial * theta[k]);
          normalize_in_place(theta);
        }));
  }
  return out;
}

std::vector<double> householder_reflect(std::span<const double> unit_theta, std::span<const double> x) {
  if (unit_theta.size() != x.size()) fail(ErrorKind::InvalidInput, "reflection dimension mismatch");
  if (std::abs(norm(unit_theta) - 1.0) > 1e-6) fail(ErrorKind::InvalidInput, "reflection normal is not unit length");
  const double c = 2.0 * dot(unit_theta, x);
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= c * unit_theta[k];
  return out;
}

double lr_objective(const PairSet& pairs, std::span<const double> theta) {
  return kernels::serial::lr_loss_grad(pairs.view(), pairs.label_positive, theta, {});
}

double ccs_objective(const PairSet& pairs, std::span<const double> theta) {
  return kernels::serial::ccs_loss_grad(pairs.view(), theta, {});
}

double ccr_objective(const PairSet& pairs, std::span<const double> unit_theta) {
  return kernels::serial::ccr_loss_grad(pairs.view(), unit_theta, {});
}

const Direction& best_loss_direction(std::span<const Direction> runs) {
  if (runs.empty()) fail(ErrorKind::InvalidInput, "no training runs to choose from");
  return *std::min_element(runs.begin(), runs.end(),
                           [](const Direction& a, const Direction& b) { return a.final_loss < b.final_loss; });
}

double pair_accuracy(const Direction& direction, const PairSet& normalized) {
  if (normalized.n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < normalized.n; ++i) {
    const double p = 0.5 * (1.0 - probe_eval(direction, normalized.neg_row(i)) + probe_eval(direction, normalized.pos_row(i)));
    if (p != 0.5 && (p > 0.5) == (normalized.label_positive[i] != 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(normalized.n);
}

Direction orient_direction(Direction direction, const PairSet& normalized_train) {
  if (direction.method == Method::Mmp || direction.method == Method::Lr ||
      direction.method == Method::LmHeadBaseline) {
    return direction;
  }
  if (pair_accuracy(direction, normalized_train) < 0.5) {
    for (auto& t : direction.theta) t = -t;
  }
  return direction;
}

namespace {

double population_std(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / n);
}

}  // namespace

std::vector<CalibrationResult> calibrate(std::span<const Direction> directions, const PairSet& no_prem_eval,
                                         double target_std) {
  if (!(target_std > 0.0 && target_std < 0.5)) fail(ErrorKind::InvalidInput, "calibration target std must be in (0, 0.5)");
  if (no_prem_eval.n == 0) fail(ErrorKind::InvalidInput, "calibration needs evaluation records");

  std::vector<CalibrationResult> out;
  out.reserve(directions.size());
  std::vector<double> a(no_prem_eval.n);
  std::vector<double> b(no_prem_eval.n);
  std::vector<double> probs(no_prem_eval.n);
  std::vector<double> x(no_prem_eval.d);

  for (const Direction& dir : directions) {
    if (dir.theta.size() != no_prem_eval.d) fail(ErrorKind::InvalidInput, "direction/record dimension mismatch");
    for (std::size_t i = 0; i < no_prem_eval.n; ++i) {
      const auto p = no_prem_eval.pos_row(i);
      const auto q = no_prem_eval.neg_row(i);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = p[k] - (dir.mu.empty() ? 0.0 : dir.mu[k]);
      a[i] = dot(x, dir.theta);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = q[k] - (dir.mu.empty() ? 0.0 : dir.mu[k]);
      b[i] = dot(x, dir.theta);
    }
    auto std_at = [&](double scale) {
      for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = 0.5 * (1.0 - sigmoid(scale * b[i]) + sigmoid(scale * a[i]));
      return population_std(probs);
    };

    CalibrationResult res;
    res.direction = dir;
    const bool degenerate = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; }) &&
                            std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; });
    if (degenerate) {
      res.ok = false;
      res.direction.scale = 1.0;
      res.achieved_std = std_at(1.0);
      out.push_back(std::move(res));
      continue;
    }

    const double lo = std::log(kMinScale);
    const double hi = std::log(kMaxScale);
    auto f = [&](double log_scale) { return std_at(std::exp(log_scale)) - target_std; };
    const double f_lo = f(lo);
    const double f_hi = f(hi);
    double scale = 1.0;
    if (f_lo >= 0.0) {
      scale = kMinScale;
      res.capped = f_lo > 1e-4;
    } else if (f_hi <= 0.0) {
      scale = kMaxScale;
      res.capped = f_hi < -1e-4;
    } else {
      std::uintmax_t iters = 200;
      const auto bracket = boost::math::tools::toms748_solve(f, lo, hi, f_lo, f_hi,
                                                             boost::math::tools::eps_tolerance<double>(52), iters);
      const double left = std::exp(bracket.first);
      const double right = std::exp(bracket.second);
      scale = std::abs(std_at(left) - target_std) <= std::abs(std_at(right) - target_std) ? left : right;
    }
    res.direction.scale = scale;
    res.achieved_std = std_at(scale);
    out.push_back(std::move(res));
  }
  return out;
}

std::string direction_to_json(const Direction& d) {
  json j = {
      {"method", to_string(d.method)},
      {"layer", d.layer},
      {"train_setting", to_string(d.train_setting)},
      {"seed", d.seed},
      {"scale", d.scale},
      {"final_loss", d.final_loss},
      {"mu", d.mu},
      {"theta", d.theta},
  };
  if (!d.train_loss_trace.empty()) j["train_loss_trace"] = d.train_loss_trace;
  return j.dump(2);
}

Direction direction_from_json(const std::string& text) {
  Direction d;
  try {
    const json j = json::parse(text);
    d.method = parse_method(j.at("method").get<std::string>());
    d.layer = j.at("layer").get<int>();
    d.train_setting = parse_train_setting(j.at("train_setting").get<std::string>());
    d.seed = j.at("seed").get<std::uint64_t>();
    d.scale = j.at("scale").get<double>();
    d.final_loss = j.value("final_loss", 0.0);
    d.mu = j.at("mu").get<std::vector<double>>();
    d.theta = j.at("theta").get<std::vector<double>>();
    if (j.contains("train_loss_trace")) d.train_loss_trace = j.at("train_loss_trace").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("direction file: ") + e.what());
  }
  if (!(d.scale > 0.0)) fail(ErrorKind::Schema, "direction scale must be positive");
  if (!d.mu.empty() && d.mu.size() != d.theta.size()) fail(ErrorKind::Schema, "direction mu/theta dimension mismatch");
  return d;
}

void write_direction(const Direction& d, const std::filesystem::path& path) {
  detail::write_text_file(path, direction_to_json(d) + "\n");
}

Direction read_direction(const std::filesystem::path& path) {
  return direction_from_json(detail::read_text_file(path, "direction file"));
}

}  // namespace tvp
