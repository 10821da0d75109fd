#include "tvprobe/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "text_io.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/rng.hpp"

namespace tvp {

using nlohmann::json;

namespace {

constexpr std::string_view answer_word(Polarity p) {
  return p == Polarity::Positive ? "correct." : "incorrect.";
}

bool is_ascii_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_ascii_lower(char c) { return c >= 'a' && c <= 'z'; }

template <typename F>
void for_each_json_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::Format, "line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      f(j);
    } catch (const json::exception& e) {
      fail(ErrorKind::Schema, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::uint64_t json_id(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_string()) return std::stoull(v.get<std::string>());
  fail(ErrorKind::Schema, "sample id must be an integer");
}

void sort_and_check_ids(std::vector<ContrastSample>& samples) {
  std::sort(samples.begin(), samples.end(),
            [](const ContrastSample& a, const ContrastSample& b) { return a.sample_id < b.sample_id; });
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].sample_id == samples[i - 1].sample_id) {
      fail(ErrorKind::Schema, "duplicate sample id " + std::to_string(samples[i].sample_id));
    }
  }
}

}  // namespace

std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string render_meta_statement(std::string_view statement, Polarity polarity, DatasetKind kind,
                                  StatementRole role, PictureSlot slot) {
  if (statement.empty()) fail(ErrorKind::InvalidInput, "empty statement");
  const std::string quoted = "\"" + std::string(statement) + "\" is " + std::string(answer_word(polarity));
  switch (kind) {
    case DatasetKind::EntailmentBank:
      return role == StatementRole::Premise ? "The statement " + quoted
                                            : "Answering the question with " + quoted;
    case DatasetKind::Snli:
      if (role == StatementRole::Hypothesis) return "Saying (about picture A) that: " + quoted;
      if (slot == PictureSlot::None) fail(ErrorKind::InvalidInput, "snli premise needs a picture slot");
      return std::string("Describing ") + (slot == PictureSlot::A ? "A" : "B") + " as " + quoted;
  }
  fail(ErrorKind::InvalidInput, "unknown dataset kind");
}

std::string corrupt_sentence(std::string_view text, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  std::uniform_int_distribution<int> letter(0, 25);
  std::string out(text);
  for (char& c : out) {
    if (is_ascii_lower(c)) {
      c = static_cast<char>('a' + letter(rng));
    } else if (is_ascii_upper(c)) {
      c = static_cast<char>('A' + letter(rng));
    }
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t global_seed, std::uint64_t sample_id) {
  return derive_seed({global_seed, sample_id});
}

std::vector<std::string> select_unrelated_premises(const ContrastSample& sample,
                                                   std::span<const ContrastSample> corpus,
                                                   std::uint64_t rng_seed) {
  if (sample.dataset_kind == DatasetKind::EntailmentBank) {
    if (sample.distractor_premises.empty()) {
      fail(ErrorKind::SkipSample,
           "sample " + std::to_string(sample.sample_id) + " has no distractor premises");
    }
    return sample.distractor_premises;
  }

  const auto self = std::lower_bound(
      corpus.begin(), corpus.end(), sample.sample_id,
      [](const ContrastSample& s, std::uint64_t id) { return s.sample_id < id; });
  const bool contains_self = self != corpus.end() && self->sample_id == sample.sample_id;
  const std::size_t candidates = corpus.size() - (contains_self ? 1 : 0);
  if (candidates == 0) {
    fail(ErrorKind::InvalidInput, "no other sample to draw an unrelated premise from");
  }

  Rng rng(derive_seed({rng_seed, 0x5f5f}));
  std::uniform_int_distribution<std::size_t> pick(0, candidates - 1);
  std::size_t idx = pick(rng);
  if (contains_self && idx >= static_cast<std::size_t>(self - corpus.begin())) ++idx;
  return corpus[idx].premises;
}

PromptRecord build_prompt(const ContrastSample& sample, PromptVariant variant, Polarity polarity,
                          std::uint64_t rng_seed, std::span<const ContrastSample> corpus) {
  PromptRecord rec;
  rec.sample_id = sample.sample_id;
  rec.variant = variant;
  rec.hypothesis_polarity = polarity;

  std::vector<std::string> premises;
  if (is_original(variant)) {
    premises = sample.premises;
  } else if (is_random(variant)) {
    premises.reserve(sample.premises.size());
    for (std::size_t j = 0; j < sample.premises.size(); ++j) {
      premises.push_back(corrupt_sentence(sample.premises[j], derive_seed({rng_seed, 0xc0, j})));
    }
  } else if (is_shuffle(variant)) {
    premises = select_unrelated_premises(sample, corpus, rng_seed);
  }
  if (has_premise(variant) && premises.empty()) {
    fail(ErrorKind::InvalidInput, "sample " + std::to_string(sample.sample_id) + " has no premises");
  }

  const Polarity premise_pol = premise_polarity(variant);
  const PictureSlot slot = (is_random(variant) || is_shuffle(variant)) ? PictureSlot::B : PictureSlot::A;

  std::string& text = rec.text;
  text = sample.context_text;
  for (const auto& p : premises) {
    text += '\n';
    const std::string line = render_meta_statement(p, premise_pol, sample.dataset_kind, StatementRole::Premise,
                                                   sample.dataset_kind == DatasetKind::Snli ? slot : PictureSlot::None);
    const std::size_t byte_begin = text.size() + line.size() - answer_word(premise_pol).size();
    text += line;
    const std::size_t begin = utf8_length(std::string_view(text).substr(0, byte_begin));
    rec.premise_answer_spans.push_back({begin, begin + answer_word(premise_pol).size()});
  }
  text += '\n';
  text += render_meta_statement(sample.hypothesis_core, polarity, sample.dataset_kind, StatementRole::Hypothesis);
  rec.final_period_index = utf8_length(text) - 1;
  return rec;
}

std::vector<ContrastSample> parse_entailment_bank(std::string_view jsonl) {
  std::vector<ContrastSample> out;
  for_each_json_line(jsonl, [&](const json& j) {
    ContrastSample s;
    s.sample_id = json_id(j.at("id"));
    s.dataset_kind = DatasetKind::EntailmentBank;
    s.context_text = std::string(kEntailmentBankPreamble) + "\n> " + j.at("question").get<std::string>();
    s.hypothesis_core = j.at("answer").get<std::string>();
    s.premises = j.at("premises").get<std::vector<std::string>>();
    if (j.contains("distractors")) s.distractor_premises = j.at("distractors").get<std::vector<std::string>>();
    s.relation = parse_relation(j.at("relation").get<std::string>());
    s.label_positive = s.relation == Relation::Entailment;
    if (s.premises.empty()) fail(ErrorKind::Schema, "sample " + std::to_string(s.sample_id) + " has no premises");
    out.push_back(std::move(s));
  });
  sort_and_check_ids(out);
  return out;
}

std::vector<ContrastSample> parse_snli(std::string_view jsonl) {
  std::vector<ContrastSample> out;
  for_each_json_line(jsonl, [&](const json& j) {
    const auto gold = j.at("gold_label").get<std::string>();
    if (gold != "entailment" && gold != "contradiction") return;
    ContrastSample s;
    s.sample_id = json_id(j.at("id"));
    s.dataset_kind = DatasetKind::Snli;
    s.context_text = std::string(kSnliPreamble);
    s.premises = {j.at("premise").get<std::string>()};
    s.hypothesis_core = j.at("hypothesis").get<std::string>();
    s.relation = parse_relation(gold);
    s.label_positive = s.relation == Relation::Entailment;
    out.push_back(std::move(s));
  });
  sort_and_check_ids(out);
  return out;
}

std::vector<ContrastSample> load_entailment_bank(const std::filesystem::path& path) {
  return parse_entailment_bank(detail::read_text_file(path, "entailment-bank file"));
}

std::vector<ContrastSample> load_snli(const std::filesystem::path& path) { return parse_snli(detail::read_text_file(path, "snli file")); }

std::vector<PromptRecord> build_all_prompts(std::span<const ContrastSample> corpus, std::uint64_t global_seed,
                                            PromptBuildSummary* summary) {
  std::vector<PromptRecord> out;
  out.reserve(corpus.size() * kAllVariants.size() * 2);
  std::size_t skipped = 0;
  for (const auto& sample : corpus) {
    const std::uint64_t seed = sample_seed(global_seed, sample.sample_id);
    for (PromptVariant v : kAllVariants) {
      try {
        for (Polarity pol : {Polarity::Positive, Polarity::Negative}) {
          out.push_back(build_prompt(sample, v, pol, seed, corpus));
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::SkipSample) throw;
        ++skipped;
      }
    }
  }
  if (summary) *summary = {out.size(), skipped};
  return out;
}

std::string prompt_record_to_json_line(const PromptRecord& r) {
  json spans = json::array();
  for (const auto& s : r.premise_answer_spans) spans.push_back({s.begin, s.end});
  const json j = {
      {"sample_id", r.sample_id},
      {"variant", to_string(r.variant)},
      {"hypothesis_polarity", to_string(r.hypothesis_polarity)},
      {"text", r.text},
      {"premise_answer_spans", spans},
      {"final_period_index", r.final_period_index},
  };
  return j.dump();
}

PromptRecord prompt_record_from_json_line(std::string_view line) {
  PromptRecord r;
  try {
    const json j = json::parse(line);
    r.sample_id = j.at("sample_id").get<std::uint64_t>();
    r.variant = parse_variant(j.at("variant").get<std::string>());
    r.hypothesis_polarity = parse_polarity(j.at("hypothesis_polarity").get<std::string>());
    r.text = j.at("text").get<std::string>();
    for (const auto& s : j.at("premise_answer_spans")) {
      r.premise_answer_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    r.final_period_index = j.at("final_period_index").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("prompt record: ") + e.what());
  }
  return r;
}

void write_prompt_records(const std::filesystem::path& path, std::span<const PromptRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  for (const auto& r : records) out << prompt_record_to_json_line(r) << '\n';
}

std::vector<PromptRecord> read_prompt_records(const std::filesystem::path& path) {
  std::vector<PromptRecord> out;
  std::istringstream in(detail::read_text_file(path, "prompt-record file"));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(prompt_record_from_json_line(line));
  }
  return out;
}

}  // namespace tvp
