#include "tvprobe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "tvprobe/error.hpp"
#include "tvprobe/store.hpp"

namespace tvp {

PromptVariant case_variant(EvalCase c) {
  switch (c) {
    case EvalCase::NoPremise:
      return PromptVariant::NoPrem;
    case EvalCase::Affirmed:
      return PromptVariant::OriginalPosPrem;
    case EvalCase::Negated:
      return PromptVariant::OriginalNegPrem;
    case EvalCase::Unrelated:
      return PromptVariant::ShufflePosPrem;
    case EvalCase::Corrupted:
      return PromptVariant::RandomPosPrem;
  }
  return PromptVariant::NoPrem;
}

namespace {

double case_value(const CaseProbabilities& c, EvalCase which) {
  switch (which) {
    case EvalCase::NoPremise:
      return c.p_h;
    case EvalCase::Affirmed:
      return c.p_pos;
    case EvalCase::Negated:
      return c.p_neg;
    case EvalCase::Unrelated:
      return c.p_unrel;
    case EvalCase::Corrupted:
      return c.p_corr;
  }
  return 0.5;
}

double& case_slot(CaseProbabilities& c, EvalCase which) {
  switch (which) {
    case EvalCase::NoPremise:
      return c.p_h;
    case EvalCase::Affirmed:
      return c.p_pos;
    case EvalCase::Negated:
      return c.p_neg;
    case EvalCase::Unrelated:
      return c.p_unrel;
    case EvalCase::Corrupted:
      return c.p_corr;
  }
  return c.p_h;
}

constexpr std::array<EvalCase, 5> kCases = {EvalCase::NoPremise, EvalCase::Affirmed, EvalCase::Negated,
                                            EvalCase::Unrelated, EvalCase::Corrupted};

}  // namespace

double combined_prob(double p_plus, double p_minus) { return 0.5 * (1.0 - p_minus + p_plus); }

double record_probability(const Direction& direction, const ActivationRecord& record) {
  const std::size_t d = direction.theta.size();
  if (record.vec_pos.size() != d || record.vec_neg.size() != d) {
    fail(ErrorKind::InvalidInput, "record dimension " + std::to_string(record.vec_pos.size()) +
                                      " does not match direction dimension " + std::to_string(d));
  }
  std::vector<double> x(d);
  auto prob = [&](const std::vector<float>& v) {
    for (std::size_t k = 0; k < d; ++k) x[k] = static_cast<double>(v[k]) - (direction.mu.empty() ? 0.0 : direction.mu[k]);
    return probe_eval(direction, x);
  };
  return combined_prob(prob(record.vec_pos), prob(record.vec_neg));
}

double accuracy(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] != 0.5 && (probs[i] > 0.5) == (labels[i] != 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

double accuracy(std::span<const CaseProbabilities> cases, EvalCase which) {
  std::vector<double> p;
  std::vector<std::uint8_t> y;
  p.reserve(cases.size());
  y.reserve(cases.size());
  for (const auto& c : cases) {
    p.push_back(case_value(c, which));
    y.push_back(c.label_positive ? 1 : 0);
  }
  return accuracy(p, y);
}

double premise_effect(const CaseProbabilities& c) { return c.p_pos - c.p_h; }

std::optional<ErrorScores> error_scores(const CaseProbabilities& c, double eps) {
  const double pe = premise_effect(c);
  if (std::abs(pe) < eps) return std::nullopt;
  const double inv_abs = 1.0 / std::abs(pe);
  ErrorScores s;
  s.pe = pe;
  s.e1 = std::abs(c.p_corr - c.p_h) * inv_abs;
  s.e2 = std::abs(c.p_unrel - c.p_h) * inv_abs;
  s.e3 = std::max((c.p_neg - c.p_h) / pe, 0.0);
  s.e4 = std::abs(c.p_neg - c.p_pos) * inv_abs;
  return s;
}

double premise_sensitivity(std::span<const CaseProbabilities> cases) {
  if (cases.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cases) s += std::abs(premise_effect(c));
  return s / static_cast<double>(cases.size());
}

std::optional<double> trimmed_mean(std::span<const double> values, double trim_fraction) {
  if (!(trim_fraction >= 0.0 && trim_fraction < 0.5)) fail(ErrorKind::InvalidInput, "trim fraction must be in [0, 0.5)");
  std::vector<double> v(values.begin(), values.end());
  const auto drop = static_cast<std::size_t>(std::floor(static_cast<double>(v.size()) * trim_fraction));
  if (v.size() <= 2 * drop) return std::nullopt;
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (std::size_t i = drop; i < v.size() - drop; ++i) s += v[i];
  return s / static_cast<double>(v.size() - 2 * drop);
}

LogRatio log_ratio_e3_e4(double e3, double e4) {
  LogRatio r;
  if (!(e3 > 0.0)) {
    e3 = kLogRatioEpsilon;
    r.clamped = true;
  }
  if (!(e4 > 0.0)) {
    e4 = kLogRatioEpsilon;
    r.clamped = true;
  }
  r.value = std::log(e3 / e4);
  return r;
}

LogRatio log_ratio_e3_e4(const LayerReport& report) {
  return log_ratio_e3_e4(report.e3.value_or(0.0), report.e4.value_or(0.0));
}

void error_rank_summary(std::span<LayerReport> group) {
  const std::size_t n = group.size();
  std::vector<double> rank_sum(n, 0.0);
  for (int score = 0; score < 4; ++score) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = group[i];
      const std::optional<double>& e = score == 0 ? r.e1 : score == 1 ? r.e2 : score == 2 ? r.e3 : r.e4;
      v[i] = e.value_or(std::numeric_limits<double>::infinity());
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank_sum[order[k]] += shared;
      i = j + 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) group[i].e_star = rank_sum[i] / 4.0;
}

LayerReport summarize_cases(std::span<const CaseProbabilities> cases, const EvalOptions& options) {
  LayerReport r;
  r.n_eval = cases.size();
  if (cases.empty()) return r;
  r.accuracy_pos = accuracy(cases, EvalCase::Affirmed);
  r.accuracy_noprem = accuracy(cases, EvalCase::NoPremise);
  r.premise_sensitivity = premise_sensitivity(cases);

  std::array<std::array<double, 5>, 2> sums{};
  std::array<std::size_t, 2> counts{};
  std::vector<double> e1, e2, e3, e4;
  for (const auto& c : cases) {
    const int rel = c.relation == Relation::Entailment ? 0 : 1;
    ++counts[rel];
    for (std::size_t k = 0; k < kCases.size(); ++k) sums[rel][k] += case_value(c, kCases[k]);
    if (const auto s = error_scores(c, options.pe_epsilon)) {
      e1.push_back(s->e1);
      e2.push_back(s->e2);
      e3.push_back(s->e3);
      e4.push_back(s->e4);
    } else {
      ++r.n_undefined_pe;
    }
  }
  for (int rel = 0; rel < 2; ++rel) {
    for (std::size_t k = 0; k < kCases.size(); ++k) {
      r.mean_probs[rel][k] = counts[rel] ? sums[rel][k] / static_cast<double>(counts[rel])
                                         : std::numeric_limits<double>::quiet_NaN();
    }
  }
  r.e1 = trimmed_mean(e1, options.trim_fraction);
  r.e2 = trimmed_mean(e2, options.trim_fraction);
  r.e3 = trimmed_mean(e3, options.trim_fraction);
  r.e4 = trimmed_mean(e4, options.trim_fraction);
  const auto lr = log_ratio_e3_e4(r);
  r.log_ratio_e3_e4 = lr.value;
  r.log_ratio_clamped = lr.clamped || !r.e3 || !r.e4;
  return r;
}

std::vector<CaseProbabilities> case_probabilities(const ActivationStore& store, const Direction& direction,
                                                  std::uint16_t layer, std::span<const std::uint64_t> eval_ids) {
  if (direction.theta.size() != store.dimension()) {
    fail(ErrorKind::InvalidInput, "direction dimension " + std::to_string(direction.theta.size()) +
                                      " does not match store dimension " + std::to_string(store.dimension()));
  }
  std::vector<CaseProbabilities> out;
  out.reserve(eval_ids.size());
  for (std::uint64_t id : eval_ids) {
    CaseProbabilities c;
    c.sample_id = id;
    bool complete = true;
    for (EvalCase ec : kCases) {
      const ActivationRecord* rec = store.find(id, case_variant(ec), layer);
      if (!rec) {
        complete = false;
        break;
      }
      c.relation = rec->relation;
      c.label_positive = rec->label_positive;
      case_slot(c, ec) = record_probability(direction, *rec);
    }
    if (complete) out.push_back(c);
  }
  return out;
}

std::vector<CaseProbabilities> baseline_case_probabilities(const ActivationStore& store,
                                                           std::span<const std::uint64_t> eval_ids) {
  std::map<std::pair<std::uint64_t, PromptVariant>, const BaselineEntry*> table;
  for (const auto& b : store.manifest().baseline) table[{b.sample_id, b.variant}] = &b;
  const auto layers = store.layers();

  std::vector<CaseProbabilities> out;
  for (std::uint64_t id : eval_ids) {
    CaseProbabilities c;
    c.sample_id = id;
    bool complete = true;
    for (EvalCase ec : kCases) {
      const auto it = table.find({id, case_variant(ec)});
      if (it == table.end()) {
        complete = false;
        break;
      }
      case_slot(c, ec) = combined_prob(it->second->p_correct, it->second->p_incorrect);
    }
    if (!complete || layers.empty()) continue;
    const ActivationRecord* rec = store.find(id, PromptVariant::NoPrem, layers.front());
    if (!rec) continue;
    c.relation = rec->relation;
    c.label_positive = rec->label_positive;
    out.push_back(c);
  }
  return out;
}

LayerSelection select_layers(std::span<const LayerReport> reports) {
  if (reports.empty()) fail(ErrorKind::InvalidInput, "no reports to select from");
  const LayerReport* best_acc = &reports[0];
  const LayerReport* best_err = &reports[0];
  for (const auto& r : reports) {
    if (r.accuracy_pos > best_acc->accuracy_pos ||
        (r.accuracy_pos == best_acc->accuracy_pos && r.layer < best_acc->layer)) {
      best_acc = &r;
    }
    if (r.e_star < best_err->e_star || (r.e_star == best_err->e_star && r.layer < best_err->layer)) best_err = &r;
  }
  return {best_acc->layer, best_err->layer};
}

SweepResult layer_sweep(const ActivationStore& store, std::span<const Direction> per_layer,
                        std::span<const std::uint64_t> eval_ids, const EvalOptions& options,
                        double calibration_target) {
  SweepResult result;
  for (const Direction& dir : per_layer) {
    const auto layer = static_cast<std::uint16_t>(dir.layer);
    const PairSet no_prem = gather_pairs(store, PromptVariant::NoPrem, layer, eval_ids);
    const auto cal = calibrate(std::span<const Direction>(&dir, 1), no_prem, calibration_target);
    const auto cases = case_probabilities(store, cal.front().direction, layer, eval_ids);
    LayerReport r = summarize_cases(cases, options);
    r.layer = dir.layer;
    r.method = dir.method;
    r.train_setting = dir.train_setting;
    r.scale = cal.front().direction.scale;
    r.calibration_ok = cal.front().ok && !cal.front().capped;
    result.reports.push_back(r);
  }
  error_rank_summary(result.reports);
  if (!result.reports.empty()) result.selection = select_layers(result.reports);
  return result;
}

namespace {

std::string opt(const std::optional<double>& v, const char* spec = "{:.4f}") {
  return v ? fmt::format(fmt::runtime(spec), *v) : std::string("NA");
}

std::string layer_label(int layer) { return layer < 0 ? std::string("-") : std::to_string(layer); }

}  // namespace

std::string format_results_table(std::span<const LayerReport> reports) {
  // Group by (setting, method) and emit the two selected layers of each group.
  std::map<std::pair<int, int>, std::vector<LayerReport>> groups;
  for (const auto& r : reports) {
    groups[{static_cast<int>(r.train_setting), static_cast<int>(r.method)}].push_back(r);
  }
  std::string out = fmt::format("{:<9} {:<17} {:<5} {:>3} {:>6} {:>7} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>7} {:>7} {:>7} {:>7}\n",
                                "setting", "method", "sel", "L", "Acc", "E*", "e:q+", "e:q-", "e:h", "c:q+", "c:q-",
                                "c:h", "E1", "E2", "E3", "E4");
  for (const auto& [key, group] : groups) {
    const LayerSelection sel = select_layers(group);
    for (const auto& [tag, layer] : {std::pair{"acc", sel.best_accuracy_layer}, std::pair{"err", sel.lowest_error_layer}}) {
      const auto it = std::find_if(group.begin(), group.end(), [&](const LayerReport& r) { return r.layer == layer; });
      const LayerReport& r = *it;
      const auto& ent = r.mean_probs[0];
      const auto& con = r.mean_probs[1];
      out += fmt::format(
          "{:<9} {:<17} {:<5} {:>3} {:>6.3f} {:>7.2f} | {:>6.3f} {:>6.3f} {:>6.3f} | {:>6.3f} {:>6.3f} {:>6.3f} | {:>7} {:>7} {:>7} {:>7}\n",
          r.method == Method::LmHeadBaseline ? "-" : std::string(to_string(r.train_setting)), to_string(r.method), tag,
          layer_label(r.layer), r.accuracy_pos, r.e_star, ent[1], ent[2], ent[0], con[1], con[2], con[0],
          opt(r.e1, "{:.3f}"), opt(r.e2, "{:.3f}"), opt(r.e3, "{:.3f}"), opt(r.e4, "{:.3f}"));
    }
  }
  return out;
}

std::string layer_reports_csv(std::span<const LayerReport> reports) {
  std::string out =
      "layer,method,setting,accuracy,sensitivity,e1,e2,e3,e4,e_star,log_ratio,accuracy_noprem,n_eval,"
      "n_undefined_pe,scale,calibration_ok,log_ratio_clamped";
  for (const char* rel : {"ent", "con"}) {
    for (const char* c : {"p_h", "p_pos", "p_neg", "p_unrel", "p_corr"}) out += fmt::format(",{}_{}", rel, c);
  }
  out += '\n';
  for (const auto& r : reports) {
    out += fmt::format("{},{},{},{:.6f},{:.6f},{},{},{},{},{:.4f},{:.6f},{:.6f},{},{},{:.9g},{},{}", r.layer,
                       to_string(r.method), to_string(r.train_setting), r.accuracy_pos, r.premise_sensitivity,
                       opt(r.e1, "{:.6f}"), opt(r.e2, "{:.6f}"), opt(r.e3, "{:.6f}"), opt(r.e4, "{:.6f}"), r.e_star,
                       r.log_ratio_e3_e4, r.accuracy_noprem, r.n_eval, r.n_undefined_pe, r.scale,
                       r.calibration_ok ? 1 : 0, r.log_ratio_clamped ? 1 : 0);
    for (const auto& rel : r.mean_probs) {
      for (double v : rel) out += fmt::format(",{:.6f}", v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace tvp
