#include "doctest.h"

#include <bit>
#include <cstring>
#include <limits>
#include <set>

#include "support.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/store.hpp"

using namespace tvp;

namespace {

// Mix of ordinary values with the awkward ones: -0, subnormals, extremes.
float awkward_float(std::mt19937_64& rng) {
  static const float special[] = {-0.0f,
                                  0.0f,
                                  std::numeric_limits<float>::denorm_min(),
                                  -std::numeric_limits<float>::denorm_min(),
                                  1.5e-40f,
                                  std::numeric_limits<float>::max(),
                                  std::numeric_limits<float>::lowest(),
                                  std::numeric_limits<float>::min()};
  std::uniform_int_distribution<int> pick(0, 15);
  const int k = pick(rng);
  if (k < 8) return special[k];
  return std::bit_cast<float>(static_cast<std::uint32_t>(rng()) & 0xbf7fffffu);  // finite
}

std::vector<ActivationRecord> random_records(std::size_t n, std::uint32_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ActivationRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ActivationRecord r;
    r.sample_id = i / 14;
    r.variant = kAllVariants[(i / 2) % 7];
    r.layer = static_cast<std::uint16_t>(i % 2);
    r.label_positive = rng() & 1;
    r.relation = (rng() & 1) ? Relation::Entailment : Relation::Contradiction;
    for (std::uint32_t k = 0; k < d; ++k) {
      r.vec_pos.push_back(awkward_float(rng));
      r.vec_neg.push_back(awkward_float(rng));
    }
    out.push_back(std::move(r));
  }
  return out;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

StoreManifest manifest_for(std::span<const ActivationRecord> recs, std::uint32_t d) {
  StoreManifest m;
  m.dimension = d;
  m.layer_count = 2;
  m.model_tag = "unit";
  for (const auto& r : recs) ++m.counts[{r.variant, r.layer}];
  return m;
}

}  // namespace

TEST_CASE("layout matches the documented byte offsets") {
  ActivationRecord r;
  r.sample_id = 0x0102030405060708ULL;
  r.variant = PromptVariant::RandomNegPrem;
  r.layer = 0x0a0b;
  r.label_positive = true;
  r.relation = Relation::Contradiction;
  r.vec_pos = {1.0f, -0.0f};
  r.vec_neg = {-2.5f, 0.5f};
  const auto bytes = encode_store(std::vector<ActivationRecord>{r}, 2);
  REQUIRE(bytes.size() == 18 + 16 + 16);
  CHECK(std::memcmp(bytes.data(), "TVJA", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 2);
  CHECK(bytes[10] == 1);  // record count, little-endian u64
  CHECK(bytes[18] == 0x08);
  CHECK(bytes[25] == 0x01);
  CHECK(bytes[26] == 4);  // variant byte follows declaration order
  CHECK(bytes[27] == 0x0b);
  CHECK(bytes[28] == 0x0a);
  CHECK(bytes[29] == 1);
  CHECK(bytes[30] == 1);
  CHECK(bytes[31] == 0);
  CHECK(bytes[33] == 0);
  // 1.0f = 0x3f800000, -0.0f = 0x80000000
  CHECK(bytes[34 + 3] == 0x3f);
  CHECK(bytes[34 + 2] == 0x80);
  CHECK(bytes[38 + 3] == 0x80);
  CHECK(bytes[38 + 0] == 0x00);
}

TEST_CASE("round trip is bit exact") {
  tvtest::TempDir dir("store");
  const std::uint32_t d = 16;
  const auto recs = random_records(1000, d, 7);
  auto m = manifest_for(recs, d);
  m.baseline.push_back({3, PromptVariant::NoPrem, 0.25, 0.75});
  write_store(recs, m, dir / "a.tvja");
  const auto store = read_store(dir / "a.tvja");
  CHECK(store.manifest() == m);
  REQUIRE(store.records().size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& got = store.records()[i];
    CHECK(got.sample_id == recs[i].sample_id);
    CHECK(got.variant == recs[i].variant);
    CHECK(got.layer == recs[i].layer);
    CHECK(got.label_positive == recs[i].label_positive);
    CHECK(got.relation == recs[i].relation);
    CHECK(same_bits(got.vec_pos, recs[i].vec_pos));
    CHECK(same_bits(got.vec_neg, recs[i].vec_neg));
  }
  // re-serialization gives identical bytes
  write_store(store.records(), store.manifest(), dir / "b.tvja");
  CHECK(tvtest::slurp(dir / "a.tvja") == tvtest::slurp(dir / "b.tvja"));
  CHECK(tvtest::slurp(manifest_path(dir / "a.tvja")) == tvtest::slurp(manifest_path(dir / "b.tvja")));
}

TEST_CASE("empty store") {
  tvtest::TempDir dir("store");
  StoreManifest m;
  m.dimension = 8;
  write_store({}, m, dir / "e.tvja");
  const auto s = read_store(dir / "e.tvja");
  CHECK(s.records().empty());
  CHECK(s.manifest().counts.empty());
  CHECK(std::filesystem::file_size(dir / "e.tvja") == kStoreHeaderBytes);
}

TEST_CASE("dimension mismatch names the record") {
  auto recs = random_records(5, 64, 1);
  recs[3].vec_pos.pop_back();
  try {
    encode_store(recs, 64);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
    CHECK(std::string(e.what()).find("record 3") != std::string::npos);
  }
}

TEST_CASE("format errors carry byte offsets") {
  const auto recs = random_records(4, 4, 2);
  const auto m = manifest_for(recs, 4);
  const auto good = encode_store(recs, 4);
  auto expect_format = [&](std::vector<std::uint8_t> bytes, const std::string& needle) {
    try {
      decode_store(bytes, m);
      FAIL("expected format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Format);
      INFO(e.what());
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  auto bad = good;
  bad[0] = 'X';
  expect_format(bad, "byte offset 0");
  bad = good;
  bad[4] = 2;
  expect_format(bad, "byte offset 4");
  bad = good;
  bad.resize(good.size() - 3);
  expect_format(bad, "byte offset");
  expect_format(std::vector<std::uint8_t>(good.begin(), good.begin() + 10), "byte offset");
  bad = good;
  bad[18 + 8] = 9;  // variant byte of record 0
  expect_format(bad, "byte offset 18");
  bad = good;
  const std::size_t rec2 = 18 + 2 * (16 + 32);
  bad[rec2 + 11] = 2;  // label byte of record 2
  expect_format(bad, "byte offset " + std::to_string(rec2));

  auto wrong = m;
  wrong.counts.begin()->second += 1;
  CHECK_THROWS_AS(decode_store(good, wrong), Error);
}

TEST_CASE("select, find and pairing integrity") {
  const auto recs = random_records(140, 3, 3);
  const ActivationStore store(manifest_for(recs, 3), recs);
  const auto sel = store.select(PromptVariant::OriginalNegPrem, 1);
  CHECK(sel.size() == 10);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    CHECK(sel[i]->variant == PromptVariant::OriginalNegPrem);
    CHECK(sel[i]->layer == 1);
    if (i) CHECK(sel[i - 1]->sample_id < sel[i]->sample_id);
  }
  CHECK(store.find(4, PromptVariant::NoPrem, 0) != nullptr);
  CHECK(store.find(4, PromptVariant::NoPrem, 5) == nullptr);
  CHECK(store.sample_ids().size() == 10);
  CHECK(store.layers() == std::vector<std::uint16_t>{0, 1});

  auto dup = recs;
  dup.push_back(recs[0]);
  CHECK_THROWS_AS(ActivationStore(manifest_for(dup, 3), dup), Error);
}

TEST_CASE("missing files name the path") {
  try {
    read_store("/nonexistent/x.tvja");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("/nonexistent/x.tvja") != std::string::npos);
  }
  tvtest::TempDir dir("store");
  write_store({}, StoreManifest{}, dir / "s.tvja");
  std::filesystem::remove(manifest_path(dir / "s.tvja"));
  CHECK_THROWS_WITH_AS(read_store(dir / "s.tvja"), doctest::Contains("manifest"), Error);
}

TEST_CASE("split") {
  std::vector<std::uint64_t> ids(10);
  for (std::uint64_t i = 0; i < 10; ++i) ids[i] = i * 3;
  const auto s = split_train_eval(ids, 0.8, 7);
  CHECK(s.train.size() == 8);
  CHECK(s.eval.size() == 2);
  std::set<std::uint64_t> all(s.train.begin(), s.train.end());
  for (auto id : s.eval) CHECK(all.insert(id).second);
  CHECK(all == std::set<std::uint64_t>(ids.begin(), ids.end()));
  const auto again = split_train_eval(ids, 0.8, 7);
  CHECK(again.train == s.train);
  CHECK(again.eval == s.eval);

  const std::vector<std::uint64_t> two = {4, 9};
  const auto h = split_train_eval(two, 0.5, 0);
  CHECK(h.train.size() == 1);
  CHECK(h.eval.size() == 1);

  CHECK_THROWS_AS(split_train_eval(ids, 1.0, 0), Error);
  CHECK_THROWS_AS(split_train_eval(ids, 0.0, 0), Error);

  // input order does not matter
  std::vector<std::uint64_t> rev(ids.rbegin(), ids.rend());
  CHECK(split_train_eval(rev, 0.8, 7).eval == s.eval);

  // different seeds give different held-out sets somewhere
  bool differs = false;
  for (std::uint64_t seed = 0; seed < 5; ++seed) differs |= split_train_eval(ids, 0.8, seed).eval != s.eval;
  CHECK(differs);
}

TEST_CASE("manifest json") {
  StoreManifest m;
  m.dimension = 4;
  m.layer_count = 3;
  m.model_tag = "tag";
  m.counts[{PromptVariant::ShufflePosPrem, 2}] = 17;
  m.baseline.push_back({1, PromptVariant::OriginalPosPrem, 0.9, 0.1});
  CHECK(manifest_from_json(manifest_to_json(m)) == m);
  CHECK(m.variants() == std::vector<PromptVariant>{PromptVariant::ShufflePosPrem});
  CHECK_THROWS_AS(manifest_from_json("{\"dimension\": 3}"), Error);
}
