#include "tvprobe/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "text_io.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/evaluation.hpp"
#include "tvprobe/store.hpp"
#include "tvprobe/synthetic.hpp"

namespace tvp {

using nlohmann::json;

std::string_view to_string(TargetCase t) {
  return t == TargetCase::SubtractOnAffirmed ? "subtract-on-pos-prem" : "add-on-neg-prem";
}

std::string_view to_string(TokenRole r) { return r == TokenRole::AnswerToken ? "answer-token" : "following-period"; }

TargetCase parse_target_case(std::string_view s) {
  if (s == "subtract-on-pos-prem") return TargetCase::SubtractOnAffirmed;
  if (s == "add-on-neg-prem") return TargetCase::AddOnNegated;
  fail(ErrorKind::InvalidInput, "unknown target case '" + std::string(s) + "'");
}

TokenRole parse_token_role(std::string_view s) {
  if (s == "answer-token") return TokenRole::AnswerToken;
  if (s == "following-period") return TokenRole::FollowingPeriod;
  fail(ErrorKind::InvalidInput, "unknown token role '" + std::string(s) + "'");
}

PromptVariant target_variant(TargetCase t) {
  return t == TargetCase::SubtractOnAffirmed ? PromptVariant::OriginalPosPrem : PromptVariant::OriginalNegPrem;
}

double target_sign(TargetCase t) { return t == TargetCase::SubtractOnAffirmed ? -1.0 : 1.0; }

const LayerSteer* InterventionSpec::steer_for(int layer) const {
  for (const auto& s : steers) {
    if (s.layer == layer) return &s;
  }
  return nullptr;
}

void InterventionSpec::validate() const {
  if (layers.first > layers.last) fail(ErrorKind::Schema, "intervention layer range is empty");
  if (steers.empty()) fail(ErrorKind::Schema, "intervention spec has no layers to steer");
  if (token_roles.empty()) fail(ErrorKind::Schema, "intervention spec has no token roles");
  std::size_t d = steers.front().direction.theta.size();
  int prev = -1;
  for (const auto& s : steers) {
    if (s.layer < layers.first || s.layer > layers.last) {
      fail(ErrorKind::Schema, fmt::format("steer layer {} outside range {}-{}", s.layer, layers.first, layers.last));
    }
    if (s.layer <= prev) fail(ErrorKind::Schema, "steer layers must be strictly increasing");
    prev = s.layer;
    if (!(std::isfinite(s.magnitude) && s.magnitude >= 0.0)) {
      fail(ErrorKind::Schema, fmt::format("steer magnitude at layer {} must be finite and >= 0", s.layer));
    }
    if (s.direction.theta.size() != d) fail(ErrorKind::Schema, "steer directions differ in dimension");
    if (!(norm(s.direction.theta) > 0.0)) fail(ErrorKind::Schema, fmt::format("zero direction at layer {}", s.layer));
  }
}

InterventionSpec make_intervention_spec(std::span<const Direction> steering, std::span<const Direction> mass_mean,
                                        TargetCase target, LayerRange requested) {
  if (requested.first > requested.last) fail(ErrorKind::InvalidInput, "intervention layer range is empty");
  std::map<int, const Direction*> mm;
  for (const auto& d : mass_mean) mm[d.layer] = &d;
  InterventionSpec spec;
  spec.target = target;
  spec.layers = requested;
  std::map<int, LayerSteer> chosen;
  for (const auto& d : steering) {
    if (d.layer < requested.first || d.layer > requested.last) continue;
    const auto it = mm.find(d.layer);
    if (it == mm.end()) continue;
    chosen[d.layer] = LayerSteer{d.layer, d, norm(it->second->theta)};
  }
  if (chosen.empty()) {
    fail(ErrorKind::InvalidInput, fmt::format("no available layer in intervention range {}-{}", requested.first,
                                              requested.last));
  }
  for (auto& [layer, steer] : chosen) spec.steers.push_back(std::move(steer));
  spec.validate();
  return spec;
}

const InterventionCell* InterventionOutcome::cell(Relation relation, int layer) const {
  for (const auto& c : cells) {
    if (c.relation == relation && c.layer == layer) return &c;
  }
  return nullptr;
}

InterventionOutcome summarize_deltas(std::vector<SampleDelta> samples) {
  InterventionOutcome out;
  std::map<std::pair<int, int>, std::vector<double>> groups;
  std::map<int, std::vector<double>> pooled;
  for (const auto& s : samples) {
    groups[{s.layer, static_cast<int>(s.relation)}].push_back(s.delta);
    pooled[static_cast<int>(s.relation)].push_back(s.delta);
  }
  auto make = [](Relation rel, int layer, const std::vector<double>& v) {
    InterventionCell c;
    c.relation = rel;
    c.layer = layer;
    c.n = v.size();
    double sum = 0.0;
    for (double x : v) sum += x;
    c.mean_delta = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - c.mean_delta) * (x - c.mean_delta);
      c.stderr_delta = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    }
    return c;
  };
  for (const auto& [key, v] : groups) out.cells.push_back(make(static_cast<Relation>(key.second), key.first, v));
  for (const auto& [rel, v] : pooled) out.cells.push_back(make(static_cast<Relation>(rel), -1, v));
  out.samples = std::move(samples);
  return out;
}

namespace {

std::vector<double> unit(const std::vector<double>& v) {
  const double n = norm(v);
  std::vector<double> u(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) u[k] = v[k] / n;
  return u;
}

void check_dimension(const InterventionSpec& spec, std::size_t d) {
  if (spec.steers.front().direction.theta.size() != d) {
    fail(ErrorKind::InvalidInput, fmt::format("intervention direction dimension {} does not match corpus dimension {}",
                                              spec.steers.front().direction.theta.size(), d));
  }
}

// Calls f(steer, sample_id, pre_record, post_record, slot) for every pair, in
// (steer, sample) order, in parallel over samples.
template <typename F>
void for_each_synthetic_pair(const SyntheticGroundTruth& truth, const InterventionSpec& spec,
                             std::span<const std::uint64_t> ids, F&& f) {
  spec.validate();
  check_dimension(spec, truth.theta_star.size());
  for (const auto& s : spec.steers) {
    if (s.layer < 0 || static_cast<std::size_t>(s.layer) >= truth.snr.size()) {
      fail(ErrorKind::InvalidInput, fmt::format("intervention layer {} not in synthetic corpus", s.layer));
    }
  }
  const PromptVariant variant = target_variant(spec.target);
  const double sign = target_sign(spec.target);
  for (std::size_t si = 0; si < spec.steers.size(); ++si) {
    const LayerSteer& steer = spec.steers[si];
    const auto layer = static_cast<std::uint16_t>(steer.layer);
    const auto u = unit(steer.direction.theta);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ids.size()); ++i) {
      const std::uint64_t id = ids[static_cast<std::size_t>(i)];
      auto q = premise_vector(truth, id, variant, layer);
      const ActivationRecord before = synthetic_record(truth, id, variant, layer, q);
      for (std::size_t k = 0; k < q.size(); ++k) q[k] += sign * steer.magnitude * u[k];
      const ActivationRecord after = synthetic_record(truth, id, variant, layer, q);
      f(steer, before, after, si * ids.size() + static_cast<std::size_t>(i));
    }
  }
}

SampleDelta paired_delta(const LayerSteer& steer, const ActivationRecord& before, const ActivationRecord& after) {
  SampleDelta s;
  s.sample_id = before.sample_id;
  s.layer = steer.layer;
  s.relation = before.relation;
  s.p_before = record_probability(steer.direction, before);
  s.p_after = record_probability(steer.direction, after);
  s.delta = s.p_after - s.p_before;
  return s;
}

}  // namespace

InterventionOutcome intervene_synthetic(const SyntheticGroundTruth& truth, const InterventionSpec& spec,
                                        std::span<const std::uint64_t> sample_ids) {
  std::vector<SampleDelta> deltas(spec.steers.size() * sample_ids.size());
  for_each_synthetic_pair(truth, spec, sample_ids,
                          [&](const LayerSteer& steer, const ActivationRecord& before, const ActivationRecord& after,
                              std::size_t slot) { deltas[slot] = paired_delta(steer, before, after); });
  return summarize_deltas(std::move(deltas));
}

std::vector<ActivationRecord> intervened_records(const SyntheticGroundTruth& truth, const InterventionSpec& spec,
                                                 std::span<const std::uint64_t> sample_ids) {
  std::vector<ActivationRecord> out(spec.steers.size() * sample_ids.size());
  for_each_synthetic_pair(truth, spec, sample_ids,
                          [&](const LayerSteer&, const ActivationRecord&, const ActivationRecord& after,
                              std::size_t slot) { out[slot] = after; });
  return out;
}

InterventionOutcome intervention_effect(const ActivationStore& pre, const ActivationStore& post,
                                        const InterventionSpec& spec, std::span<const std::uint64_t> sample_ids) {
  spec.validate();
  if (pre.dimension() != post.dimension()) {
    fail(ErrorKind::InvalidInput,
         fmt::format("pre store dimension {} differs from post store dimension {}", pre.dimension(), post.dimension()));
  }
  check_dimension(spec, pre.dimension());
  const std::set<std::uint64_t> wanted(sample_ids.begin(), sample_ids.end());
  auto included = [&](std::uint64_t id) { return wanted.empty() || wanted.count(id) > 0; };
  const PromptVariant variant = target_variant(spec.target);

  std::vector<SampleDelta> deltas;
  std::set<std::uint64_t> unmatched;
  for (const auto& steer : spec.steers) {
    const auto layer = static_cast<std::uint16_t>(steer.layer);
    const auto before = pre.select(variant, layer);
    const auto after = post.select(variant, layer);
    if (before.empty() && after.empty()) {
      fail(ErrorKind::InvalidInput, fmt::format("no {} records at layer {} in either store", to_string(variant), layer));
    }
    for (const ActivationRecord* b : before) {
      if (!included(b->sample_id)) continue;
      const ActivationRecord* a = post.find(b->sample_id, variant, layer);
      if (!a) {
        unmatched.insert(b->sample_id);
        continue;
      }
      deltas.push_back(paired_delta(steer, *b, *a));
    }
    for (const ActivationRecord* a : after) {
      if (included(a->sample_id) && !pre.find(a->sample_id, variant, layer)) unmatched.insert(a->sample_id);
    }
  }
  // A sample unmatched at any layer is dropped at every layer.
  std::erase_if(deltas, [&](const SampleDelta& s) { return unmatched.count(s.sample_id) > 0; });
  auto out = summarize_deltas(std::move(deltas));
  out.unmatched_ids.assign(unmatched.begin(), unmatched.end());
  return out;
}

namespace {

json spec_body(const InterventionSpec& spec) {
  json steers = json::array();
  for (const auto& s : spec.steers) {
    steers.push_back({
        {"layer", s.layer},
        {"magnitude", s.magnitude},
        {"unit_theta", unit(s.direction.theta)},
        {"direction", json::parse(direction_to_json(s.direction))},
    });
  }
  json roles = json::array();
  for (auto r : spec.token_roles) roles.push_back(to_string(r));
  return {
      {"target_case", to_string(spec.target)},
      {"sign", spec.target == TargetCase::SubtractOnAffirmed ? "subtract" : "add"},
      {"prompt_variant", to_string(target_variant(spec.target))},
      {"layers", {{"first", spec.layers.first}, {"last", spec.layers.last}}},
      {"token_roles", roles},
      {"steers", steers},
  };
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace

std::string spec_hash(const InterventionSpec& spec) { return fnv1a_hex(spec_body(spec).dump()); }

std::string spec_to_json(const InterventionSpec& spec) {
  json j = spec_body(spec);
  j["spec_hash"] = fnv1a_hex(j.dump());
  return j.dump(2);
}

InterventionSpec spec_from_json(const std::string& text) {
  InterventionSpec spec;
  try {
    const json j = json::parse(text);
    if (!j.contains("layers")) fail(ErrorKind::Schema, "intervention spec is missing the layer range");
    spec.target = parse_target_case(j.at("target_case").get<std::string>());
    const std::string sign = j.at("sign").get<std::string>();
    if (sign != (spec.target == TargetCase::SubtractOnAffirmed ? "subtract" : "add")) {
      fail(ErrorKind::Schema, "intervention sign '" + sign + "' contradicts target case");
    }
    spec.layers.first = j.at("layers").at("first").get<int>();
    spec.layers.last = j.at("layers").at("last").get<int>();
    spec.token_roles.clear();
    for (const auto& r : j.at("token_roles")) spec.token_roles.push_back(parse_token_role(r.get<std::string>()));
    for (const auto& s : j.at("steers")) {
      LayerSteer steer;
      steer.layer = s.at("layer").get<int>();
      steer.magnitude = s.at("magnitude").get<double>();
      steer.direction = direction_from_json(s.at("direction").dump());
      spec.steers.push_back(std::move(steer));
    }
    if (j.contains("spec_hash") && j.at("spec_hash").get<std::string>() != spec_hash(spec)) {
      fail(ErrorKind::Schema, "intervention spec hash does not match its contents");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("intervention spec: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Schema) throw;
    fail(ErrorKind::Schema, std::string("intervention spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

void export_intervention_spec(const InterventionSpec& spec, const std::filesystem::path& path) {
  spec.validate();
  detail::write_text_file(path, spec_to_json(spec) + "\n");
}

InterventionSpec import_intervention_spec(const std::filesystem::path& path) {
  return spec_from_json(detail::read_text_file(path, "intervention spec"));
}

std::string outcome_csv(const InterventionOutcome& outcome) {
  std::string out = "relation,layer,mean_delta,stderr,n\n";
  for (const auto& c : outcome.cells) {
    out += fmt::format("{},{},{:.9f},{:.9f},{}\n", to_string(c.relation), c.layer < 0 ? std::string("all") : std::to_string(c.layer),
                       c.mean_delta, c.stderr_delta, c.n);
  }
  return out;
}

}  // namespace tvp
