#include "doctest.h"

#include <set>

#include "oracles.hpp"
#include "support.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/pipeline.hpp"
#include "tvprobe/synthetic.hpp"

#include <nlohmann/json.hpp>

using namespace tvp;

namespace {

void put_direction(const Direction& d, const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  write_direction(d, p);
}

SyntheticCorpus small_corpus() {
  SyntheticConfig c;
  c.dimension = 16;
  c.n_samples = 200;
  c.layer_count = 3;
  c.noise_std = 0.1;
  c.seed = 21;
  return generate_corpus(c);
}

TrainConfig quick() {
  TrainConfig t;
  t.steps = 150;
  t.learning_rate = 0.01;
  t.seeds = TrainConfig::default_seeds(3);
  return t;
}

}  // namespace

TEST_CASE("mass-mean probe from the store matches a hand computation") {
  const auto corpus = small_corpus();
  const auto store = corpus.store();
  const auto split = split_train_eval(store, 0.5, 1);
  const auto tp = train_probe(store, TrainSetting::PosPrem, Method::Mmp, 2, split, quick());
  REQUIRE(tp.runs.size() == 1);

  // raw records: pooled mean, then mean(true) - mean(false)
  const std::size_t d = 16;
  std::vector<double> mu(d, 0.0), t_sum(d, 0.0), f_sum(d, 0.0);
  std::set<std::uint64_t> train(split.train.begin(), split.train.end());
  std::size_t n = 0;
  for (const auto& r : store.records()) {
    if (r.variant != PromptVariant::OriginalPosPrem || r.layer != 2 || !train.count(r.sample_id)) continue;
    ++n;
    for (std::size_t k = 0; k < d; ++k) {
      mu[k] += static_cast<double>(r.vec_pos[k]) + static_cast<double>(r.vec_neg[k]);
      (r.label_positive ? t_sum : f_sum)[k] += r.vec_pos[k];
      (r.label_positive ? f_sum : t_sum)[k] += r.vec_neg[k];
    }
  }
  REQUIRE(n == split.train.size());
  for (std::size_t k = 0; k < d; ++k) {
    CHECK(std::abs(tp.best.mu[k] - mu[k] / (2.0 * n)) <= 1e-9);
    CHECK(std::abs(tp.best.theta[k] - (t_sum[k] - f_sum[k]) / n) <= 1e-9);
  }
  CHECK(tp.best.layer == 2);
  CHECK(tp.best.train_setting == TrainSetting::PosPrem);
  CHECK(cosine_similarity(tp.best.theta, corpus.truth.theta_star) > 0.9);
  CHECK(tp.runs[0].eval_accuracy > 0.9);
}

TEST_CASE("unsupervised probes pick the lowest loss seed") {
  const auto corpus = small_corpus();
  const auto store = corpus.store();
  const auto split = split_train_eval(store, 0.5, 1);
  for (Method m : {Method::Ccs, Method::Ccr}) {
    const auto tp = train_probe(store, TrainSetting::NoPrem, m, 2, split, quick());
    REQUIRE(tp.runs.size() == 3);
    for (const auto& r : tp.runs) CHECK(tp.best.final_loss <= r.direction.final_loss);
    for (const auto& r : tp.runs) CHECK(r.train_accuracy >= 0.5);
    CHECK(tp.best.method == m);
  }
  CHECK_THROWS_AS(train_probe(store, TrainSetting::NoPrem, Method::LmHeadBaseline, 2, split, quick()), Error);
  CHECK_THROWS_AS(train_probe(store, TrainSetting::NoPrem, Method::Mmp, 9, split, quick()), Error);
}

TEST_CASE("direction layout on disk") {
  tvtest::TempDir dir("dirs");
  CHECK(direction_path(dir.path, TrainSetting::PosPrem, Method::Ccr, 7) ==
        dir.path / "pos-prem" / "ccr" / "layer_007.json");
  Direction d;
  d.theta = {1.0, 2.0};
  d.method = Method::Lr;
  d.train_setting = TrainSetting::NoPrem;
  for (int l = 0; l < 2; ++l) {
    d.layer = l;
    put_direction(d, direction_path(dir.path, TrainSetting::NoPrem, Method::Lr, l));
  }
  const std::vector<std::uint16_t> layers = {0, 1};
  CHECK(load_directions(dir.path, TrainSetting::NoPrem, Method::Lr, layers).size() == 2);

  // a file in the wrong place is rejected
  d.layer = 5;
  put_direction(d, direction_path(dir.path, TrainSetting::NoPrem, Method::Lr, 1));
  CHECK_THROWS_AS(load_directions(dir.path, TrainSetting::NoPrem, Method::Lr, layers), Error);
  const std::vector<std::uint16_t> three = {2};
  try {
    load_directions(dir.path, TrainSetting::NoPrem, Method::Lr, three);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer_002.json") != std::string::npos);
  }
}

TEST_CASE("split files") {
  tvtest::TempDir dir("split");
  Split s{{1, 4, 9}, {2, 3}};
  write_split(s, 0.6, 42, dir / "split.json");
  const auto back = read_split(dir / "split.json");
  CHECK(back.train == s.train);
  CHECK(back.eval == s.eval);
  const auto j = nlohmann::json::parse(tvtest::slurp(dir / "split.json"));
  CHECK(j["seed"] == 42);
  CHECK(j["fraction"] == 0.6);
  CHECK_THROWS_AS(split_from_json("{\"train\": [3, 1], \"eval\": []}"), Error);
  CHECK_THROWS_AS(split_from_json("{\"train\": []}"), Error);
}

TEST_CASE("evaluate directions end to end") {
  tvtest::TempDir dir("eval");
  const auto corpus = small_corpus();
  const auto store = corpus.store();
  const auto split = split_train_eval(store, 0.5, 1);
  for (std::uint16_t l : store.layers()) {
    for (Method m : {Method::Mmp, Method::Lr}) {
      const auto tp = train_probe(store, TrainSetting::PosPrem, m, l, split, quick());
      put_direction(tp.best, direction_path(dir.path, TrainSetting::PosPrem, m, l));
    }
  }
  EvalRequest req;
  req.methods = {Method::Mmp, Method::Lr, Method::LmHeadBaseline};
  req.settings = {TrainSetting::PosPrem};
  const auto run = evaluate_directions(store, dir.path, split.eval, req);
  REQUIRE(run.reports.size() == 2 * 3 + 1);
  CHECK(run.calibrated.size() == 6);
  CHECK(run.reports.back().method == Method::LmHeadBaseline);
  CHECK(run.reports.back().layer == -1);
  for (const auto& r : run.reports) {
    CHECK(r.n_eval == split.eval.size());
    // ranks over 7 entries average to 4 across the pool
    CHECK(r.e_star >= 1.0);
    CHECK(r.e_star <= 7.0);
  }
  double total = 0.0;
  for (const auto& r : run.reports) total += r.e_star;
  CHECK(total == doctest::Approx(7.0 * 4.0));
  for (std::size_t i = 0; i < run.calibrated.size(); ++i) CHECK(run.calibrated[i].scale == run.reports[i].scale);

  req.include_baseline = false;
  CHECK(evaluate_directions(store, dir.path, split.eval, req).reports.size() == 6);
  req.methods = {Method::Ccs};
  CHECK_THROWS_AS(evaluate_directions(store, dir.path, split.eval, req), Error);
}

TEST_CASE("cosine matrix") {
  std::vector<Direction> ds(3);
  ds[0].theta = {1, 0, 0};
  ds[1].theta = {1, 1, 0};
  ds[2].theta = {0, 0, -2};
  const auto m = cosine_matrix(ds);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m[i][i] == 1.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(m[i][j] == m[j][i]);
  }
  CHECK(m[0][1] == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(m[0][2] == 0.0);
  const std::vector<std::string> labels = {"a", "b", "c"};
  const auto csv = cosine_matrix_csv(labels, m);
  CHECK(csv.rfind("direction,a,b,c\na,1.000000,0.707107,0.000000\n", 0) == 0);
}
