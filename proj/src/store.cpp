#include "tvprobe/store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "text_io.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/rng.hpp"

namespace tvp {

using nlohmann::json;

namespace {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void zeros(std::size_t n) { out_.insert(out_.end(), n, 0); }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      fail(ErrorKind::Format, std::string("truncated store: ") + what + " at byte offset " + std::to_string(pos_));
    }
  }
  template <typename T>
  T get() {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void check_record(const ActivationRecord& r, std::size_t index, std::uint32_t dimension) {
  if (r.vec_pos.size() != dimension || r.vec_neg.size() != dimension) {
    fail(ErrorKind::InvalidInput, "record " + std::to_string(index) + " (sample " + std::to_string(r.sample_id) +
                                      ") has dimension " + std::to_string(r.vec_pos.size()) + "/" +
                                      std::to_string(r.vec_neg.size()) + ", store expects " +
                                      std::to_string(dimension));
  }
}

}  // namespace

std::vector<PromptVariant> StoreManifest::variants() const {
  std::set<PromptVariant> s;
  for (const auto& [key, n] : counts) {
    if (n > 0) s.insert(key.first);
  }
  return {s.begin(), s.end()};
}

std::filesystem::path manifest_path(const std::filesystem::path& store_path) {
  auto p = store_path;
  p += ".manifest.json";
  return p;
}

ActivationStore::ActivationStore(StoreManifest manifest, std::vector<ActivationRecord> records)
    : manifest_(std::move(manifest)), records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    index_[{records_[i].variant, records_[i].layer}].push_back(i);
  }
  for (auto& [key, idx] : index_) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return records_[a].sample_id < records_[b].sample_id; });
    for (std::size_t i = 1; i < idx.size(); ++i) {
      if (records_[idx[i]].sample_id == records_[idx[i - 1]].sample_id) {
        fail(ErrorKind::Format, "duplicate record for sample " + std::to_string(records_[idx[i]].sample_id) +
                                    ", variant " + std::string(to_string(key.first)) + ", layer " +
                                    std::to_string(key.second));
      }
    }
  }
}

std::vector<const ActivationRecord*> ActivationStore::select(PromptVariant variant, std::uint16_t layer) const {
  std::vector<const ActivationRecord*> out;
  const auto it = index_.find({variant, layer});
  if (it == index_.end()) return out;
  out.reserve(it->second.size());
  for (std::size_t i : it->second) out.push_back(&records_[i]);
  return out;
}

const ActivationRecord* ActivationStore::find(std::uint64_t sample_id, PromptVariant variant,
                                              std::uint16_t layer) const {
  const auto it = index_.find({variant, layer});
  if (it == index_.end()) return nullptr;
  const auto& idx = it->second;
  const auto pos = std::lower_bound(idx.begin(), idx.end(), sample_id,
                                    [&](std::size_t i, std::uint64_t id) { return records_[i].sample_id < id; });
  if (pos == idx.end() || records_[*pos].sample_id != sample_id) return nullptr;
  return &records_[*pos];
}

std::vector<std::uint64_t> ActivationStore::sample_ids() const {
  std::vector<std::uint64_t> ids;
  ids.reserve(records_.size());
  for (const auto& r : records_) ids.push_back(r.sample_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<std::uint16_t> ActivationStore::layers() const {
  std::set<std::uint16_t> s;
  for (const auto& [key, idx] : index_) s.insert(key.second);
  return {s.begin(), s.end()};
}

std::vector<std::uint8_t> encode_store(std::span<const ActivationRecord> records, std::uint32_t dimension) {
  std::vector<std::uint8_t> out;
  out.reserve(kStoreHeaderBytes + records.size() * (kRecordHeaderBytes + 8 * std::size_t{dimension}));
  ByteWriter w(out);
  out.insert(out.end(), std::begin(kStoreMagic), std::end(kStoreMagic));
  w.put(kStoreVersion);
  w.put(dimension);
  w.put(static_cast<std::uint64_t>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    check_record(r, i, dimension);
    w.put(r.sample_id);
    w.put(static_cast<std::uint8_t>(r.variant));
    w.put(r.layer);
    w.put(static_cast<std::uint8_t>(r.label_positive ? 1 : 0));
    w.put(static_cast<std::uint8_t>(r.relation));
    w.zeros(3);
    for (float f : r.vec_pos) w.put_f32(f);
    for (float f : r.vec_neg) w.put_f32(f);
  }
  return out;
}

ActivationStore decode_store(std::span<const std::uint8_t> bytes, StoreManifest manifest) {
  ByteReader r(bytes);
  r.need(kStoreHeaderBytes, "header");
  if (!std::equal(std::begin(kStoreMagic), std::end(kStoreMagic), bytes.begin())) {
    fail(ErrorKind::Format, "bad magic at byte offset 0");
  }
  r.skip(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kStoreVersion) {
    fail(ErrorKind::Format, "unsupported store version " + std::to_string(version) + " at byte offset 4");
  }
  const auto dimension = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (manifest.dimension != dimension) {
    fail(ErrorKind::Format, "manifest dimension " + std::to_string(manifest.dimension) +
                                " does not match payload dimension " + std::to_string(dimension) +
                                " at byte offset 6");
  }

  const std::size_t stride = kRecordHeaderBytes + 8 * std::size_t{dimension};
  const std::size_t payload = bytes.size() - kStoreHeaderBytes;
  if (count > payload / stride || payload != count * stride) {
    fail(ErrorKind::Format, "payload of " + std::to_string(payload) + " bytes does not hold " +
                                std::to_string(count) + " records of " + std::to_string(stride) +
                                " bytes (byte offset " + std::to_string(kStoreHeaderBytes) + ")");
  }

  std::vector<ActivationRecord> records(count);
  std::map<std::pair<PromptVariant, std::uint16_t>, std::uint64_t> counts;
  for (auto& rec : records) {
    const std::size_t at = r.offset();
    rec.sample_id = r.get<std::uint64_t>();
    const auto variant = r.get<std::uint8_t>();
    rec.layer = r.get<std::uint16_t>();
    const auto label = r.get<std::uint8_t>();
    const auto relation = r.get<std::uint8_t>();
    r.skip(3);
    if (variant > static_cast<std::uint8_t>(PromptVariant::ShuffleNegPrem) || label > 1 || relation > 1) {
      fail(ErrorKind::Format, "invalid record header at byte offset " + std::to_string(at));
    }
    rec.variant = static_cast<PromptVariant>(variant);
    rec.label_positive = label == 1;
    rec.relation = static_cast<Relation>(relation);
    rec.vec_pos.resize(dimension);
    rec.vec_neg.resize(dimension);
    for (auto& f : rec.vec_pos) f = r.get_f32();
    for (auto& f : rec.vec_neg) f = r.get_f32();
    ++counts[{rec.variant, rec.layer}];
  }
  if (counts != manifest.counts) {
    fail(ErrorKind::Format, "manifest record counts do not match the payload");
  }
  return ActivationStore(std::move(manifest), std::move(records));
}

void write_store(std::span<const ActivationRecord> records, StoreManifest manifest,
                 const std::filesystem::path& path) {
  manifest.counts.clear();
  for (const auto& r : records) ++manifest.counts[{r.variant, r.layer}];
  const auto bytes = encode_store(records, manifest.dimension);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  detail::write_text_file(manifest_path(path), manifest_to_json(manifest) + "\n");
}

ActivationStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InvalidInput, "missing store " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto mpath = manifest_path(path);
  if (!std::filesystem::exists(mpath)) fail(ErrorKind::InvalidInput, "missing manifest " + mpath.string());
  return decode_store(bytes, manifest_from_json(detail::read_text_file(mpath, "store manifest")));
}

std::string manifest_to_json(const StoreManifest& m) {
  json counts = json::array();
  for (const auto& [key, n] : m.counts) {
    counts.push_back({{"variant", to_string(key.first)}, {"layer", key.second}, {"count", n}});
  }
  json variants = json::array();
  for (auto v : m.variants()) variants.push_back(to_string(v));
  json baseline = json::array();
  for (const auto& b : m.baseline) {
    baseline.push_back({{"sample_id", b.sample_id},
                        {"variant", to_string(b.variant)},
                        {"p_correct", b.p_correct},
                        {"p_incorrect", b.p_incorrect}});
  }
  json j = {
      {"format", "TVJA"},
      {"version", kStoreVersion},
      {"dimension", m.dimension},
      {"layer_count", m.layer_count},
      {"model_tag", m.model_tag},
      {"variants", variants},
      {"counts", counts},
      {"baseline", baseline},
  };
  return j.dump(2);
}

StoreManifest manifest_from_json(const std::string& text) {
  StoreManifest m;
  try {
    const json j = json::parse(text);
    m.dimension = j.at("dimension").get<std::uint32_t>();
    m.layer_count = j.at("layer_count").get<std::uint32_t>();
    m.model_tag = j.value("model_tag", std::string{});
    for (const auto& c : j.at("counts")) {
      m.counts[{parse_variant(c.at("variant").get<std::string>()), c.at("layer").get<std::uint16_t>()}] =
          c.at("count").get<std::uint64_t>();
    }
    if (j.contains("baseline")) {
      for (const auto& b : j.at("baseline")) {
        m.baseline.push_back({b.at("sample_id").get<std::uint64_t>(), parse_variant(b.at("variant").get<std::string>()),
                              b.at("p_correct").get<double>(), b.at("p_incorrect").get<double>()});
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("manifest: ") + e.what());
  }
  return m;
}

Split split_train_eval(std::span<const std::uint64_t> sample_ids, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) fail(ErrorKind::InvalidInput, "split fraction must be in (0, 1)");
  std::vector<std::uint64_t> ids(sample_ids.begin(), sample_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  Rng rng(derive_seed({seed, 0x5b117}));
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(ids[i - 1], ids[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  Split s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.eval.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.eval.begin(), s.eval.end());
  return s;
}

}  // namespace tvp
