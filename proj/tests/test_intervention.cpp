#include "doctest.h"

#include "oracles.hpp"
#include "support.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/evaluation.hpp"
#include "tvprobe/intervention.hpp"
#include "tvprobe/store.hpp"
#include "tvprobe/synthetic.hpp"

#include <nlohmann/json.hpp>

using namespace tvp;

namespace {

SyntheticConfig clean_config() {
  SyntheticConfig c;
  c.dimension = 12;
  c.n_samples = 60;
  c.layer_count = 3;
  c.noise_std = 0.0;
  c.content_std = 0.0;
  c.context_shift = 0.0;
  c.seed = 4;
  return c;
}

InterventionSpec spec_with(const Direction& d, int layer, double magnitude, TargetCase target) {
  InterventionSpec s;
  s.target = target;
  s.layers = {layer, layer};
  LayerSteer st;
  st.layer = layer;
  st.direction = d;
  st.direction.layer = layer;
  st.magnitude = magnitude;
  s.steers = {st};
  return s;
}

std::vector<std::uint64_t> iota_ids(std::size_t n) {
  std::vector<std::uint64_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

double pooled(const InterventionOutcome& o, Relation r) { return o.cell(r)->mean_delta; }

}  // namespace

TEST_CASE("zero magnitude changes nothing") {
  const auto t = make_ground_truth(clean_config());
  const auto ids = iota_ids(60);
  for (auto target : {TargetCase::SubtractOnAffirmed, TargetCase::AddOnNegated}) {
    const auto o = intervene_synthetic(t, spec_with(oracle_direction(t, 2), 2, 0.0, target), ids);
    for (const auto& s : o.samples) CHECK(s.delta == 0.0);
  }
}

TEST_CASE("closed loop matches the hand computed readout") {
  const auto cfg = clean_config();
  const auto t = make_ground_truth(cfg);
  const auto ids = iota_ids(60);
  const double m = 0.7;
  const auto o = intervene_synthetic(t, spec_with(oracle_direction(t, 2), 2, m, TargetCase::SubtractOnAffirmed), ids);
  REQUIRE(o.samples.size() == 60);
  for (const auto& s : o.samples) {
    // x- mirrors x+ along theta*, so the combined probability is sigmoid of the position
    const double rs = s.relation == Relation::Entailment ? 1.0 : -1.0;
    const double own = own_position(t, s.sample_id, 2);
    const double z0 = rs * 0.8 * cfg.truth_scale + 0.2 * own;
    const double z1 = rs * 0.8 * (cfg.truth_scale - m) + 0.2 * own;
    CHECK(s.p_before == doctest::Approx(oracle::sig(z0)).epsilon(1e-6));
    CHECK(s.delta == doctest::Approx(oracle::sig(z1) - oracle::sig(z0)).epsilon(1e-6));
  }
}

TEST_CASE("sign law and monotone magnitude") {
  auto cfg = clean_config();
  cfg.noise_std = 0.05;
  cfg.n_samples = 200;
  const auto t = make_ground_truth(cfg);
  const auto ids = iota_ids(200);
  const auto dir = oracle_direction(t, 2);

  const auto sub = intervene_synthetic(t, spec_with(dir, 2, 0.5, TargetCase::SubtractOnAffirmed), ids);
  CHECK(pooled(sub, Relation::Entailment) < 0.0);
  CHECK(pooled(sub, Relation::Contradiction) > 0.0);
  const auto add = intervene_synthetic(t, spec_with(dir, 2, 0.5, TargetCase::AddOnNegated), ids);
  CHECK(pooled(add, Relation::Entailment) > 0.0);
  CHECK(pooled(add, Relation::Contradiction) < 0.0);

  double prev = 0.0;
  for (double m : {0.25, 0.5, 1.0}) {
    const auto o = intervene_synthetic(t, spec_with(dir, 2, m, TargetCase::SubtractOnAffirmed), ids);
    const double e = pooled(o, Relation::Entailment);
    CHECK(e < prev);
    prev = e;
  }

  // a direction orthogonal to everything the hypothesis reads moves nothing
  Direction side = dir;
  side.theta = t.context_channels.empty() ? t.theta_spur : t.context_channels.front();
  const auto none = intervene_synthetic(t, spec_with(side, 2, 1.0, TargetCase::SubtractOnAffirmed), ids);
  CHECK(std::abs(pooled(none, Relation::Entailment)) <= 1e-6);
}

TEST_CASE("summaries") {
  std::vector<SampleDelta> s = {
      {0, 1, Relation::Entailment, 0.5, 0.4, -0.1},
      {1, 1, Relation::Entailment, 0.5, 0.2, -0.3},
      {2, 2, Relation::Contradiction, 0.5, 0.6, 0.1},
  };
  const auto o = summarize_deltas(s);
  REQUIRE(o.cell(Relation::Entailment, 1));
  CHECK(o.cell(Relation::Entailment, 1)->mean_delta == doctest::Approx(-0.2));
  // sample sd 0.1414.., over sqrt(2)
  CHECK(o.cell(Relation::Entailment, 1)->stderr_delta == doctest::Approx(0.1));
  CHECK(o.cell(Relation::Contradiction, 2)->stderr_delta == 0.0);
  CHECK(o.cell(Relation::Contradiction)->n == 1);
  CHECK(o.cell(Relation::Entailment, 2) == nullptr);
  const auto csv = outcome_csv(o);
  CHECK(csv.rfind("relation,layer,mean_delta,stderr,n\n", 0) == 0);
  CHECK(csv.find("entailment,all,-0.200000000,0.100000000,2") != std::string::npos);
}

TEST_CASE("spec construction") {
  std::vector<Direction> steer, mm;
  for (int l = 0; l < 20; ++l) {
    Direction d;
    d.layer = l;
    d.theta = {static_cast<double>(l + 1), 0.0};
    steer.push_back(d);
    if (l != 10) {
      d.theta = {0.0, 2.0 * l};
      mm.push_back(d);
    }
  }
  const auto s = make_intervention_spec(steer, mm, TargetCase::AddOnNegated);
  REQUIRE(s.steers.size() == 6);
  CHECK(s.steers.front().layer == 8);
  CHECK(s.steers.front().magnitude == doctest::Approx(16.0));
  CHECK(s.steer_for(10) == nullptr);
  CHECK(s.steer_for(14)->magnitude == doctest::Approx(28.0));
  CHECK_THROWS_AS(make_intervention_spec(steer, mm, TargetCase::AddOnNegated, {30, 40}), Error);
  CHECK_THROWS_AS(make_intervention_spec(steer, mm, TargetCase::AddOnNegated, {5, 4}), Error);
  CHECK(target_variant(TargetCase::AddOnNegated) == PromptVariant::OriginalNegPrem);
  CHECK(target_sign(TargetCase::SubtractOnAffirmed) == -1.0);
  CHECK(parse_target_case("add-on-neg-prem") == TargetCase::AddOnNegated);
  CHECK_THROWS_AS(parse_token_role("colon"), Error);
}

TEST_CASE("spec JSON") {
  tvtest::TempDir dir("spec");
  const auto t = make_ground_truth(clean_config());
  auto spec = spec_with(oracle_direction(t, 2), 2, 0.4, TargetCase::SubtractOnAffirmed);
  spec.layers = {1, 2};
  export_intervention_spec(spec, dir / "spec.json");
  const auto back = import_intervention_spec(dir / "spec.json");
  CHECK(spec_to_json(back) == spec_to_json(spec));
  CHECK(spec_hash(back) == spec_hash(spec));

  auto j = nlohmann::json::parse(spec_to_json(spec));
  CHECK(j["sign"] == "subtract");
  CHECK(j["prompt_variant"] == "original-pos-prem");
  CHECK(j["token_roles"] == nlohmann::json({"answer-token", "following-period"}));
  const auto u = j["steers"][0]["unit_theta"].get<std::vector<double>>();
  CHECK(oracle::dotv(u, u) == doctest::Approx(1.0));

  auto missing = j;
  missing.erase("layers");
  try {
    spec_from_json(missing.dump());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Schema);
  }
  auto tampered = j;
  tampered["steers"][0]["magnitude"] = 0.5;
  try {
    spec_from_json(tampered.dump());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Schema);
    CHECK(std::string(e.what()).find("hash") != std::string::npos);
  }
  auto flipped = j;
  flipped.erase("spec_hash");
  flipped["sign"] = "add";
  CHECK_THROWS_AS(spec_from_json(flipped.dump()), Error);
  auto unhashed = j;
  unhashed.erase("spec_hash");
  CHECK(spec_hash(spec_from_json(unhashed.dump())) == spec_hash(spec));
}

TEST_CASE("store path agrees with the closed loop") {
  tvtest::TempDir dir("loop");
  auto cfg = clean_config();
  cfg.noise_std = 0.1;
  cfg.content_std = 8.0;
  cfg.context_shift = 1.0;
  const auto corpus = generate_corpus(cfg);
  const auto ids = iota_ids(60);
  auto spec = spec_with(oracle_direction(corpus.truth, 1), 1, 0.6, TargetCase::AddOnNegated);
  spec.layers = {1, 2};
  spec.steers.push_back(spec.steers.front());
  spec.steers.back().layer = 2;
  spec.steers.back().direction = oracle_direction(corpus.truth, 2);

  write_store(corpus.records, corpus.manifest, dir / "pre.tvja");
  auto post_manifest = corpus.manifest;
  post_manifest.baseline.clear();
  write_store(intervened_records(corpus.truth, spec, ids), post_manifest, dir / "post.tvja");
  const auto pre = read_store(dir / "pre.tvja");
  const auto post = read_store(dir / "post.tvja");

  const auto loop = intervene_synthetic(corpus.truth, spec, ids);
  const auto stored = intervention_effect(pre, post, spec);
  CHECK(stored.unmatched_ids.empty());
  REQUIRE(stored.cells.size() == loop.cells.size());
  for (std::size_t i = 0; i < loop.cells.size(); ++i) {
    CHECK(stored.cells[i].relation == loop.cells[i].relation);
    CHECK(stored.cells[i].layer == loop.cells[i].layer);
    CHECK(stored.cells[i].n == loop.cells[i].n);
    CHECK(std::abs(stored.cells[i].mean_delta - loop.cells[i].mean_delta) <= 1e-9);
  }

  // restricting to a subset and dropping a post record
  std::vector<std::uint64_t> few = {1, 2, 3};
  CHECK(intervention_effect(pre, post, spec, few).samples.size() == 6);
  auto partial = intervened_records(corpus.truth, spec, ids);
  std::erase_if(partial, [](const ActivationRecord& r) { return r.sample_id == 7 && r.layer == 2; });
  const ActivationStore post2(post_manifest, partial);
  const auto o = intervention_effect(pre, post2, spec);
  CHECK(o.unmatched_ids == std::vector<std::uint64_t>{7});
  CHECK(o.samples.size() == 2 * 59);

  auto wrong = spec;
  for (auto& s : wrong.steers) s.direction.theta.resize(5, 1.0);
  CHECK_THROWS_AS(intervention_effect(pre, post, wrong), Error);
  CHECK_THROWS_AS(intervene_synthetic(corpus.truth, wrong, ids), Error);
}
