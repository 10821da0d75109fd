#include "doctest.h"

#include <limits>

#include "support.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/evaluation.hpp"
#include "tvprobe/store.hpp"
#include "tvprobe/synthetic.hpp"

using namespace tvp;

namespace {

CaseProbabilities cp(double h, double pos, double neg, double corr, double unrel) {
  CaseProbabilities c;
  c.p_h = h;
  c.p_pos = pos;
  c.p_neg = neg;
  c.p_corr = corr;
  c.p_unrel = unrel;
  return c;
}

// rank = 1 + (# strictly smaller) + (# equal others) / 2; missing counts as +inf
double brute_rank(const std::vector<double>& v, std::size_t i) {
  double r = 1.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (j == i) continue;
    if (v[j] < v[i]) r += 1.0;
    if (v[j] == v[i]) r += 0.5;
  }
  return r;
}

}  // namespace

TEST_CASE("combined probability and accuracy") {
  CHECK(combined_prob(0.8, 0.2) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(combined_prob(0.5, 0.5) == 0.5);
  CHECK(combined_prob(0.6, 0.5) == doctest::Approx(0.55).epsilon(1e-15));

  const std::vector<double> p = {0.9, 0.9, 0.9};
  const std::vector<std::uint8_t> yes = {1, 1, 1};
  const std::vector<std::uint8_t> no = {0, 0, 0};
  CHECK(accuracy(p, yes) == 1.0);
  CHECK(accuracy(p, no) == 0.0);
  const std::vector<double> half = {0.5, 0.5, 0.5};
  CHECK(accuracy(half, yes) == 0.0);
  CHECK(accuracy(half, no) == 0.0);
}

TEST_CASE("premise effect and error scores") {
  const auto worked = cp(0.5, 0.7, 0.6, 0.55, 0.45);
  CHECK(premise_effect(worked) == doctest::Approx(0.2).epsilon(1e-14));
  const auto s = error_scores(worked);
  REQUIRE(s);
  CHECK(s->pe == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(s->e1 == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s->e2 == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s->e3 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s->e4 == doctest::Approx(0.5).epsilon(1e-12));

  CHECK(error_scores(cp(0.5, 0.7, 0.6, 0.5, 0.45))->e1 == 0.0);
  const auto d = error_scores(cp(0.5, 0.7, 0.4, 0.5, 0.5));
  CHECK(d->e3 == 0.0);
  CHECK(d->e4 == doctest::Approx(1.5).epsilon(1e-12));

  CHECK(premise_effect(cp(0.5, 0.2, 0.5, 0.5, 0.5)) == doctest::Approx(-0.3).epsilon(1e-14));
  CHECK_FALSE(error_scores(cp(0.5, 0.5, 0.9, 0.1, 0.1)));
  CHECK_FALSE(error_scores(cp(0.5, 0.5 + 5e-7, 0.9, 0.1, 0.1)));
  CHECK(error_scores(cp(0.5, 0.5 + 2e-6, 0.9, 0.1, 0.1)));
}

TEST_CASE("scenario B ordering gives E3 + E4 = 1") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng), c = u(rng);
    if (a > b) std::swap(a, b);
    if (b > c) std::swap(b, c);
    if (a > b) std::swap(a, b);
    if (c - a < 1e-3) continue;
    // entailment ordering p_h <= p_neg <= p_pos, then the mirrored one
    for (const auto& x : {cp(a, c, b, u(rng), u(rng)), cp(c, a, b, u(rng), u(rng))}) {
      const auto s = error_scores(x);
      REQUIRE(s);
      worst = std::max(worst, std::abs(s->e3 + s->e4 - 1.0));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("error scores ignore the premise sensitivity") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int i = 0; i < 100; ++i) {
    const double h = 0.5;
    const double dp = u(rng), dn = u(rng), dc = u(rng), du = u(rng);
    if (std::abs(dp) < 1e-3) continue;
    const auto a = error_scores(cp(h, h + dp, h + dn, h + dc, h + du));
    const auto b = error_scores(cp(h, h + dp / 2, h + dn / 2, h + dc / 2, h + du / 2));
    CHECK(a->e1 == doctest::Approx(b->e1).epsilon(1e-9));
    CHECK(a->e2 == doctest::Approx(b->e2).epsilon(1e-9));
    CHECK(a->e3 == doctest::Approx(b->e3).epsilon(1e-9));
    CHECK(a->e4 == doctest::Approx(b->e4).epsilon(1e-9));
  }
}

TEST_CASE("premise sensitivity") {
  const std::vector<CaseProbabilities> two = {cp(0.5, 0.7, 0.5, 0.5, 0.5), cp(0.5, 0.3, 0.5, 0.5, 0.5)};
  CHECK(premise_sensitivity(two) == doctest::Approx(0.2).epsilon(1e-14));
  const std::vector<CaseProbabilities> flat = {cp(0.4, 0.4, 0.1, 0.1, 0.1)};
  CHECK(premise_sensitivity(flat) == 0.0);
}

TEST_CASE("trimmed mean") {
  const std::vector<double> v = {3, 100, 0, 2, 1};
  CHECK(*trimmed_mean(v, 0.2) == 2.0);
  CHECK(*trimmed_mean(v, 0.0) == doctest::Approx(106.0 / 5.0));
  const std::vector<double> same(7, 0.3);
  CHECK(*trimmed_mean(same, 0.1) == doctest::Approx(0.3));
  CHECK(*trimmed_mean(same, 0.45) == doctest::Approx(0.3));
  CHECK_FALSE(trimmed_mean(std::vector<double>{}, 0.1));
  CHECK_FALSE(trimmed_mean(std::vector<double>{1, 2}, 0.49) == std::nullopt);
  CHECK_THROWS_AS(trimmed_mean(v, 0.5), Error);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> r(101);
  for (auto& x : r) x = g(rng);
  const double m = *trimmed_mean(r, 0.1);
  CHECK(m >= *std::min_element(r.begin(), r.end()));
  CHECK(m <= *std::max_element(r.begin(), r.end()));
}

TEST_CASE("log ratio") {
  CHECK(log_ratio_e3_e4(0.4, 0.4).value == 0.0);
  CHECK(log_ratio_e3_e4(0.8, 0.4).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const auto c = log_ratio_e3_e4(0.0, 0.5);
  CHECK(c.clamped);
  CHECK(c.value == doctest::Approx(std::log(1e-6 / 0.5)).epsilon(1e-12));
  CHECK_FALSE(log_ratio_e3_e4(0.1, 0.5).clamped);
}

TEST_CASE("error ranks against brute force") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> small(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 7;
    std::vector<LayerReport> group(n);
    std::vector<std::vector<double>> scores(4, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (int s = 0; s < 4; ++s) {
        // small integer values force ties; -1 marks a missing score
        const int v = small(rng) - (trial % 3 == 0 ? 1 : 0);
        std::optional<double> e;
        if (v >= 0) e = 0.25 * v;
        scores[s][i] = e.value_or(std::numeric_limits<double>::infinity());
        (s == 0 ? group[i].e1 : s == 1 ? group[i].e2 : s == 2 ? group[i].e3 : group[i].e4) = e;
      }
    }
    error_rank_summary(group);
    for (std::size_t i = 0; i < n; ++i) {
      double want = 0.0;
      for (int s = 0; s < 4; ++s) want += brute_rank(scores[s], i);
      CHECK(group[i].e_star == doctest::Approx(want / 4.0).epsilon(1e-15));
    }
  }

  std::vector<LayerReport> g(3);
  g[0].e1 = g[0].e2 = g[0].e3 = g[0].e4 = 0.1;
  g[1].e1 = g[1].e2 = g[1].e3 = g[1].e4 = 0.5;
  g[2] = g[1];
  error_rank_summary(g);
  CHECK(g[0].e_star == 1.0);
  CHECK(g[1].e_star == g[2].e_star);
  CHECK(g[1].e_star == 2.5);
}

TEST_CASE("layer selection") {
  std::vector<LayerReport> r(4);
  for (int i = 0; i < 4; ++i) {
    r[i].layer = i;
    r[i].accuracy_pos = 0.5 + 0.1 * i;
    r[i].e_star = 3.0;
  }
  auto s = select_layers(r);
  CHECK(s.best_accuracy_layer == 3);
  CHECK(s.lowest_error_layer == 0);
  r[1].accuracy_pos = r[3].accuracy_pos;
  r[2].e_star = 1.0;
  s = select_layers(r);
  CHECK(s.best_accuracy_layer == 1);
  CHECK(s.lowest_error_layer == 2);
  CHECK(select_layers(std::span<const LayerReport>(r.data(), 1)).best_accuracy_layer == 0);
}

TEST_CASE("summaries from cases") {
  std::vector<CaseProbabilities> cases;
  for (int i = 0; i < 10; ++i) {
    auto c = cp(0.5, 0.7, 0.6, 0.55, 0.45);
    c.sample_id = i;
    c.relation = i < 6 ? Relation::Entailment : Relation::Contradiction;
    c.label_positive = i < 6;
    cases.push_back(c);
  }
  cases[9].p_pos = 0.5;  // undefined premise effect
  const auto r = summarize_cases(cases, {});
  CHECK(r.n_eval == 10);
  CHECK(r.n_undefined_pe == 1);
  CHECK(r.accuracy_pos == doctest::Approx(0.6));
  CHECK(r.accuracy_noprem == 0.0);
  CHECK(*r.e1 == doctest::Approx(0.25));
  CHECK(*r.e3 == doctest::Approx(0.5));
  CHECK(r.log_ratio_e3_e4 == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_FALSE(r.log_ratio_clamped);
  CHECK(r.mean_probs[0][1] == doctest::Approx(0.7));
  CHECK(r.mean_probs[1][1] == doctest::Approx((0.7 * 3 + 0.5) / 4));
}

TEST_CASE("case probabilities read the fixed variant mapping") {
  CHECK(case_variant(EvalCase::NoPremise) == PromptVariant::NoPrem);
  CHECK(case_variant(EvalCase::Affirmed) == PromptVariant::OriginalPosPrem);
  CHECK(case_variant(EvalCase::Negated) == PromptVariant::OriginalNegPrem);
  CHECK(case_variant(EvalCase::Unrelated) == PromptVariant::ShufflePosPrem);
  CHECK(case_variant(EvalCase::Corrupted) == PromptVariant::RandomPosPrem);

  // one-dimensional store: x+ = v, x- = -v; under theta = 1 the combined probability is sigmoid(v)
  std::vector<ActivationRecord> recs;
  StoreManifest m;
  m.dimension = 1;
  m.layer_count = 1;
  const float value[7] = {0.0f, 1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
  for (std::uint64_t id = 0; id < 3; ++id) {
    for (auto v : kAllVariants) {
      if (id == 2 && v == PromptVariant::ShufflePosPrem) continue;
      ActivationRecord r;
      r.sample_id = id;
      r.variant = v;
      r.relation = Relation::Contradiction;
      const float x = value[static_cast<int>(v)];
      r.vec_pos = {x};
      r.vec_neg = {-x};
      recs.push_back(r);
    }
  }
  for (std::uint64_t id = 0; id < 3; ++id) {
    for (auto v : kAllVariants) m.baseline.push_back({id, v, 0.1 * static_cast<int>(v) + 0.1, 0.9 - 0.1 * static_cast<int>(v)});
  }
  const ActivationStore store(m, recs);
  Direction dir;
  dir.theta = {1.0};
  const std::vector<std::uint64_t> ids = {0, 1, 2};
  const auto cases = case_probabilities(store, dir, 0, ids);
  REQUIRE(cases.size() == 2);  // sample 2 lacks its unrelated case
  CHECK(cases[0].p_h == doctest::Approx(0.5));
  CHECK(cases[0].p_pos == doctest::Approx(sigmoid(1.0)));
  CHECK(cases[0].p_neg == doctest::Approx(sigmoid(2.0)));
  CHECK(cases[0].p_corr == doctest::Approx(sigmoid(3.0)));
  CHECK(cases[0].p_unrel == doctest::Approx(sigmoid(5.0)));
  CHECK(cases[1].relation == Relation::Contradiction);

  const auto base = baseline_case_probabilities(store, ids);
  REQUIRE(base.size() == 3);
  CHECK(base[0].p_h == doctest::Approx(combined_prob(0.1, 0.9)));
  CHECK(base[0].p_unrel == doctest::Approx(combined_prob(0.6, 0.4)));
  CHECK_FALSE(base[0].label_positive);

  Direction wrong;
  wrong.theta = {1.0, 2.0};
  CHECK_THROWS_AS(case_probabilities(store, wrong, 0, ids), Error);
}

TEST_CASE("sweep picks the planted signal peak") {
  SyntheticConfig cfg;
  cfg.dimension = 16;
  cfg.n_samples = 400;
  cfg.layer_count = 5;
  cfg.noise_std = 0.3;
  cfg.snr_profile = {0.05, 0.2, 1.0, 0.4, 0.1};
  cfg.seed = 3;
  const auto corpus = generate_corpus(cfg);
  const auto store = corpus.store();
  std::vector<Direction> dirs;
  for (int l = 0; l < 5; ++l) dirs.push_back(oracle_direction(corpus.truth, l));
  const auto ids = store.sample_ids();
  const auto sweep = layer_sweep(store, dirs, ids, {});
  REQUIRE(sweep.reports.size() == 5);
  CHECK(sweep.selection.best_accuracy_layer == 2);
  for (const auto& r : sweep.reports) {
    CHECK(r.n_eval == 400);
    CHECK(r.calibration_ok);
  }

  const auto one = layer_sweep(store, std::span<const Direction>(dirs.data() + 3, 1), ids, {});
  CHECK(one.selection.best_accuracy_layer == 3);
  CHECK(one.selection.lowest_error_layer == 3);
  CHECK(one.reports[0].e_star == 1.0);
}

TEST_CASE("report formatting") {
  std::vector<LayerReport> reps(3);
  for (int i = 0; i < 2; ++i) {
    reps[i].layer = i;
    reps[i].method = Method::Ccr;
    reps[i].accuracy_pos = 0.6 + 0.1 * i;
    reps[i].e1 = 0.1;
    reps[i].e2 = std::nullopt;
    reps[i].e3 = 0.2;
    reps[i].e4 = 0.3;
  }
  reps[2].layer = -1;
  reps[2].method = Method::LmHeadBaseline;
  reps[2].train_setting = TrainSetting::NoPrem;
  error_rank_summary(reps);
  const auto csv = layer_reports_csv(reps);
  CHECK(csv.rfind("layer,method,setting,accuracy,sensitivity,e1,e2,e3,e4,e_star,log_ratio,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find(",NA,") != std::string::npos);
  const auto table = format_results_table(reps);
  CHECK(table.find("ccr") != std::string::npos);
  CHECK(table.find("lm-head") != std::string::npos);
  CHECK(layer_reports_csv(reps) == csv);
}
