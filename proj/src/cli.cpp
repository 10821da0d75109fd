#include "tvprobe/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "text_io.hpp"
#include "tvprobe/corpus.hpp"
#include "tvprobe/error.hpp"
#include "tvprobe/evaluation.hpp"
#include "tvprobe/intervention.hpp"
#include "tvprobe/pipeline.hpp"
#include "tvprobe/store.hpp"
#include "tvprobe/synthetic.hpp"

namespace tvp {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint16_t> parse_layers(const std::string& spec, std::span<const std::uint16_t> available) {
  if (spec.empty() || spec == "all") return {available.begin(), available.end()};
  int first = 0;
  int last = 0;
  try {
    const auto dash = spec.find('-');
    first = std::stoi(spec.substr(0, dash));
    last = dash == std::string::npos ? first : std::stoi(spec.substr(dash + 1));
  } catch (const std::exception&) {
    fail(ErrorKind::Usage, "bad layer range '" + spec + "', expected N, A-B or all");
  }
  if (first > last) fail(ErrorKind::Usage, "empty layer range '" + spec + "'");
  std::vector<std::uint16_t> out;
  for (auto l : available) {
    if (l >= first && l <= last) out.push_back(l);
  }
  if (out.empty()) fail(ErrorKind::InvalidInput, "layer range " + spec + " selects no layer of the store");
  return out;
}

LayerRange parse_range(const std::string& spec) {
  LayerRange r;
  try {
    const auto dash = spec.find('-');
    r.first = std::stoi(spec.substr(0, dash));
    r.last = dash == std::string::npos ? r.first : std::stoi(spec.substr(dash + 1));
  } catch (const std::exception&) {
    fail(ErrorKind::Usage, "bad layer range '" + spec + "', expected N or A-B");
  }
  return r;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  if (names.empty()) fail(ErrorKind::Usage, "method set is empty");
  std::vector<Method> out;
  for (const auto& n : names) out.push_back(parse_method(n));
  return out;
}

std::vector<TrainSetting> parse_settings(const std::vector<std::string>& names) {
  if (names.empty()) fail(ErrorKind::Usage, "train setting set is empty");
  std::vector<TrainSetting> out;
  for (const auto& n : names) out.push_back(parse_train_setting(n));
  return out;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) fail(ErrorKind::InvalidInput, "missing " + what + " " + p.string());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail(ErrorKind::InvalidInput, "cannot create directory " + p.string() + ": " + ec.message());
}

Split load_split(const fs::path& explicit_path, const fs::path& directions) {
  const fs::path p = explicit_path.empty() ? directions / "split.json" : explicit_path;
  return read_split(p);
}

struct Options {
  int jobs = 0;

  // build-prompts
  std::string dataset_kind = "entailment-bank";
  fs::path input;
  fs::path prompts_out;
  std::uint64_t prompt_seed = 0;

  // gen-synthetic
  SyntheticConfig synth;
  std::string synth_mode = "conditional";
  std::string synth_kind = "entailment-bank";
  fs::path synth_out;

  // shared by store consumers
  fs::path store;
  fs::path directions;
  fs::path out_dir;
  fs::path split_file;
  std::vector<std::string> methods = {"mmp", "lr", "ccs", "ccr"};
  std::vector<std::string> settings = {"no-prem", "pos-prem"};
  std::string layers = "all";

  // train
  int seeds = 30;
  int steps = 1000;
  double learning_rate = 0.001;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0;
  int trace_every = 0;
  bool all_seeds = false;

  // eval / sweep
  double trim = 0.10;
  double calibration_target = 0.25;
  bool no_baseline = false;

  // cosine-matrix
  fs::path cosine_out;

  // intervene-eval
  std::string steer_method = "mmp";
  std::string target = "subtract-on-pos-prem";
  std::string intervene_layers = "8-14";
  double magnitude_scale = 1.0;
  fs::path post_store;
  bool emit_post_store = false;
  bool export_only = false;

  // report
  std::vector<fs::path> report_inputs;
};

void cmd_build_prompts(const Options& o, std::ostream& out) {
  const DatasetKind kind = parse_dataset_kind(o.dataset_kind);
  require_file(o.input, "dataset file");
  const auto corpus = kind == DatasetKind::EntailmentBank ? load_entailment_bank(o.input) : load_snli(o.input);
  PromptBuildSummary summary;
  const auto records = build_all_prompts(corpus, o.prompt_seed, &summary);
  write_prompt_records(o.prompts_out, records);
  out << fmt::format("wrote {} prompt records for {} samples to {} ({} samples skipped for shuffle variants)\n",
                     records.size(), corpus.size(), o.prompts_out.string(), summary.skipped_shuffle_samples);
}

void cmd_gen_synthetic(Options o, std::ostream& out) {
  o.synth.mode = parse_belief_mode(o.synth_mode);
  o.synth.dataset_kind = parse_dataset_kind(o.synth_kind);
  const SyntheticCorpus corpus = generate_corpus(o.synth);
  if (o.synth_out.has_parent_path()) make_dir(o.synth_out.parent_path());
  write_store(corpus.records, corpus.manifest, o.synth_out);
  write_truth(corpus.truth, truth_path(o.synth_out));
  out << fmt::format("wrote {} records (d={}, layers={}, mode={}) to {}\n", corpus.records.size(),
                     o.synth.dimension, o.synth.layer_count, o.synth_mode, o.synth_out.string());
}

void cmd_train(const Options& o, std::ostream& out) {
  require_file(o.store, "store");
  const ActivationStore store = read_store(o.store);
  const auto layers = parse_layers(o.layers, store.layers());
  const auto methods = parse_methods(o.methods);
  const auto settings = parse_settings(o.settings);
  if (o.seeds < 1) fail(ErrorKind::Usage, "--seeds must be at least 1");
  TrainConfig config;
  config.learning_rate = o.learning_rate;
  config.steps = o.steps;
  config.seeds = TrainConfig::default_seeds(static_cast<std::size_t>(o.seeds));
  config.trace_every = o.trace_every;
  config.validate();

  const Split split = split_train_eval(store, o.split_fraction, o.split_seed);
  make_dir(o.out_dir);
  write_split(split, o.split_fraction, o.split_seed, o.out_dir / "split.json");

  std::string seeds_csv = "setting,method,layer,seed,final_loss,train_accuracy,eval_accuracy,selected\n";
  std::size_t written = 0;
  for (TrainSetting setting : settings) {
    for (Method method : methods) {
      for (auto layer : layers) {
        const TrainedProbe probe = train_probe(store, setting, method, layer, split, config);
        const fs::path path = direction_path(o.out_dir, setting, method, layer);
        make_dir(path.parent_path());
        write_direction(probe.best, path);
        ++written;
        for (std::size_t i = 0; i < probe.runs.size(); ++i) {
          const auto& r = probe.runs[i];
          seeds_csv += fmt::format("{},{},{},{},{:.9g},{:.6f},{:.6f},{}\n", to_string(setting), to_string(method),
                                   layer, r.direction.seed, r.direction.final_loss, r.train_accuracy,
                                   r.eval_accuracy, i == probe.selected ? 1 : 0);
          if (o.all_seeds && probe.runs.size() > 1) {
            auto seed_path = path;
            seed_path.replace_filename(fmt::format("layer_{:03d}.seed_{:03d}.json", layer, r.direction.seed));
            write_direction(r.direction, seed_path);
          }
        }
      }
    }
  }
  detail::write_text_file(o.out_dir / "seeds.csv", seeds_csv);
  out << fmt::format("wrote {} directions to {}\n", written, o.out_dir.string());
}

EvalRun run_eval(const Options& o, const ActivationStore& store, bool baseline) {
  const Split split = load_split(o.split_file, o.directions);
  EvalRequest req;
  req.methods = parse_methods(o.methods);
  req.settings = parse_settings(o.settings);
  req.options.trim_fraction = o.trim;
  req.calibration_target = o.calibration_target;
  req.include_baseline = baseline;
  return evaluate_directions(store, o.directions, split.eval, req);
}

void cmd_eval(const Options& o, std::ostream& out) {
  require_file(o.store, "store");
  const ActivationStore store = read_store(o.store);
  const EvalRun run = run_eval(o, store, !o.no_baseline);
  make_dir(o.out_dir);
  detail::write_text_file(o.out_dir / "layer_reports.csv", layer_reports_csv(run.reports));
  const std::string table = format_results_table(run.reports);
  detail::write_text_file(o.out_dir / "results_table.txt", table);
  for (const auto& d : run.calibrated) {
    const fs::path p = direction_path(o.out_dir / "calibrated", d.train_setting, d.method, d.layer);
    make_dir(p.parent_path());
    write_direction(d, p);
  }
  std::size_t failed = 0;
  for (const auto& r : run.reports) failed += r.calibration_ok ? 0 : 1;
  out << table;
  if (failed > 0) out << fmt::format("warning: calibration missed the target for {} direction(s); see calibration_ok in layer_reports.csv\n", failed);
}

void cmd_sweep(const Options& o, std::ostream& out) {
  require_file(o.store, "store");
  const ActivationStore store = read_store(o.store);
  const EvalRun run = run_eval(o, store, false);
  std::string csv =
      "setting,method,layer,accuracy_pos,accuracy_noprem,premise_sensitivity,e3,e4,log_ratio_e3_e4,log_ratio_clamped\n";
  for (const auto& r : run.reports) {
    csv += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{},{},{:.6f},{}\n", to_string(r.train_setting),
                       to_string(r.method), r.layer, r.accuracy_pos, r.accuracy_noprem, r.premise_sensitivity,
                       r.e3 ? fmt::format("{:.6f}", *r.e3) : "NA", r.e4 ? fmt::format("{:.6f}", *r.e4) : "NA",
                       r.log_ratio_e3_e4, r.log_ratio_clamped ? 1 : 0);
  }
  make_dir(o.out_dir);
  detail::write_text_file(o.out_dir / "sweep.csv", csv);
  out << fmt::format("wrote {} layer rows to {}\n", run.reports.size(), (o.out_dir / "sweep.csv").string());
}

void cmd_cosine_matrix(const Options& o, std::ostream& out) {
  const auto methods = parse_methods(o.methods);
  const auto settings = parse_settings(o.settings);
  std::vector<Direction> dirs;
  std::vector<std::string> labels;
  for (TrainSetting s : settings) {
    for (Method m : methods) {
      const fs::path dir = direction_path(o.directions, s, m, 0).parent_path();
      if (!fs::is_directory(dir)) fail(ErrorKind::InvalidInput, "missing direction directory " + dir.string());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("layer_", 0) == 0 && name.find(".seed_") == std::string::npos &&
            e.path().extension() == ".json") {
          files.push_back(e.path());
        }
      }
      if (files.empty()) fail(ErrorKind::InvalidInput, "no direction files in " + dir.string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        dirs.push_back(read_direction(f));
        labels.push_back(fmt::format("{}/{}/{}", to_string(s), to_string(m), dirs.back().layer));
      }
    }
  }
  const std::string csv = cosine_matrix_csv(labels, cosine_matrix(dirs));
  const fs::path dest = o.cosine_out.empty() ? o.directions / "cosine_matrix.csv" : o.cosine_out;
  if (dest.has_parent_path()) make_dir(dest.parent_path());
  detail::write_text_file(dest, csv);
  out << fmt::format("wrote {}x{} cosine matrix to {}\n", dirs.size(), dirs.size(), dest.string());
}

void cmd_intervene_eval(const Options& o, std::ostream& out) {
  require_file(o.store, "store");
  const ActivationStore store = read_store(o.store);
  const Method steer_method = parse_method(o.steer_method);
  const LayerRange range = parse_range(o.intervene_layers);
  std::vector<std::uint16_t> layers;
  for (auto l : store.layers()) {
    if (l >= range.first && l <= range.last) layers.push_back(l);
  }
  if (layers.empty()) {
    fail(ErrorKind::InvalidInput, fmt::format("intervention range {}-{} has no layer in the store", range.first, range.last));
  }
  const auto steering = load_directions(o.directions, TrainSetting::PosPrem, steer_method, layers);
  const auto mass_mean = load_directions(o.directions, TrainSetting::PosPrem, Method::Mmp, layers);
  InterventionSpec spec = make_intervention_spec(steering, mass_mean, parse_target_case(o.target), range);
  if (!(o.magnitude_scale >= 0.0)) fail(ErrorKind::Usage, "--magnitude-scale must be >= 0");
  for (auto& s : spec.steers) s.magnitude *= o.magnitude_scale;

  make_dir(o.out_dir);
  export_intervention_spec(spec, o.out_dir / "intervention_spec.json");
  if (o.export_only) {
    out << "wrote " << (o.out_dir / "intervention_spec.json").string() << '\n';
    return;
  }
  const Split split = load_split(o.split_file, o.directions);

  InterventionOutcome outcome;
  if (!o.post_store.empty()) {
    require_file(o.post_store, "post-intervention store");
    outcome = intervention_effect(store, read_store(o.post_store), spec, split.eval);
  } else {
    const fs::path tp = truth_path(o.store);
    require_file(tp, "ground-truth sidecar (pass --post-store for non-synthetic stores)");
    const SyntheticGroundTruth truth = read_truth(tp);
    outcome = intervene_synthetic(truth, spec, split.eval);
    if (o.emit_post_store) {
      StoreManifest m = store.manifest();
      m.baseline.clear();
      m.model_tag += "+intervention:" + spec_hash(spec);
      write_store(intervened_records(truth, spec, split.eval), m, o.out_dir / "post_store.tvja");
    }
  }
  const std::string csv = outcome_csv(outcome);
  detail::write_text_file(o.out_dir / "intervention_outcome.csv", csv);
  out << csv;
  if (!outcome.unmatched_ids.empty()) {
    std::string ids;
    for (auto id : outcome.unmatched_ids) ids += std::to_string(id) + "\n";
    detail::write_text_file(o.out_dir / "unmatched_ids.txt", ids);
    out << fmt::format("excluded {} unmatched sample(s); see unmatched_ids.txt\n", outcome.unmatched_ids.size());
  }
}

void cmd_report(const Options& o, std::ostream& out) {
  static const std::vector<std::string> kArtifacts = {
      "results_table.txt", "layer_reports.csv",         "sweep.csv",          "seeds.csv",
      "cosine_matrix.csv", "intervention_outcome.csv", "intervention_spec.json", "split.json"};
  std::map<std::string, fs::path> found;
  for (const auto& dir : o.report_inputs) {
    if (!fs::is_directory(dir)) fail(ErrorKind::InvalidInput, "missing input directory " + dir.string());
    for (const auto& name : kArtifacts) {
      const fs::path p = dir / name;
      if (!fs::exists(p)) continue;
      if (found.count(name)) {
        fail(ErrorKind::InvalidInput, "artifact " + name + " found in both " + found[name].parent_path().string() +
                                          " and " + dir.string());
      }
      found[name] = p;
    }
  }
  for (const std::string required : {"results_table.txt", "layer_reports.csv"}) {
    if (!found.count(required)) fail(ErrorKind::InvalidInput, "missing " + required + " in report inputs; run eval first");
  }
  make_dir(o.out_dir);
  std::string md = "# tvprobe report\n\n## Results\n\n```\n" + detail::read_text_file(found["results_table.txt"]) + "```\n";
  if (found.count("intervention_outcome.csv")) {
    md += "\n## Intervention\n\n```\n" + detail::read_text_file(found["intervention_outcome.csv"]) + "```\n";
  }
  md += "\n## Files\n\n";
  for (const auto& [name, src] : found) {
    fs::copy_file(src, o.out_dir / name, fs::copy_options::overwrite_existing);
    md += "- " + name + " (from " + src.parent_path().string() + ")\n";
  }
  detail::write_text_file(o.out_dir / "report.md", md);
  out << fmt::format("aggregated {} artifacts into {}\n", found.size(), o.out_dir.string());
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Truth-value probe toolkit"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.add_option("--jobs", o.jobs, "OpenMP thread cap (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.require_subcommand(1);

  auto* bp = app.add_subcommand("build-prompts", "Render prompt records from a dataset file");
  bp->add_option("--dataset-kind", o.dataset_kind, "entailment-bank or snli")->capture_default_str();
  bp->add_option("--input", o.input, "Dataset file (JSON lines)")->required();
  bp->add_option("--out", o.prompts_out, "Prompt-record JSONL output")->required();
  bp->add_option("--seed", o.prompt_seed, "Global corpus seed")->capture_default_str();

  auto* gs = app.add_subcommand("gen-synthetic", "Generate a planted-direction activation store");
  gs->add_option("--out", o.synth_out, "Store path; sidecars are written next to it")->required();
  gs->add_option("--dimension", o.synth.dimension)->capture_default_str();
  gs->add_option("--samples", o.synth.n_samples)->capture_default_str();
  gs->add_option("--layers", o.synth.layer_count)->capture_default_str();
  gs->add_option("--noise-std", o.synth.noise_std)->capture_default_str();
  gs->add_option("--truth-scale", o.synth.truth_scale)->capture_default_str();
  gs->add_option("--coupling", o.synth.coupling)->capture_default_str();
  gs->add_option("--mode", o.synth_mode, "prior, conditional or marginal")->capture_default_str();
  gs->add_option("--spurious", o.synth.spurious_strength)->capture_default_str();
  gs->add_option("--irrelevant", o.synth.irrelevant_sensitivity)->capture_default_str();
  gs->add_option("--content-std", o.synth.content_std)->capture_default_str();
  gs->add_option("--context-shift", o.synth.context_shift)->capture_default_str();
  gs->add_option("--dataset-kind", o.synth_kind)->capture_default_str();
  gs->add_option("--snr", o.synth.snr_profile, "Per-layer signal multipliers")->delimiter(',');
  gs->add_option("--seed", o.synth.seed)->capture_default_str();

  auto add_eval_inputs = [&](CLI::App* sc) {
    sc->add_option("--store", o.store, "Activation store")->required();
    sc->add_option("--directions", o.directions, "Directory written by train")->required();
    sc->add_option("--split", o.split_file, "Split file (default: <directions>/split.json)");
    sc->add_option("--methods", o.methods)->delimiter(',')->capture_default_str();
    sc->add_option("--settings", o.settings)->delimiter(',')->capture_default_str();
    sc->add_option("--out", o.out_dir, "Output directory")->required();
  };

  auto* tr = app.add_subcommand("train", "Train probe directions per method, setting and layer");
  tr->add_option("--store", o.store, "Activation store")->required();
  tr->add_option("--out", o.out_dir, "Direction output directory")->required();
  tr->add_option("--methods", o.methods)->delimiter(',')->capture_default_str();
  tr->add_option("--settings", o.settings)->delimiter(',')->capture_default_str();
  tr->add_option("--layers", o.layers, "N, A-B or all")->capture_default_str();
  tr->add_option("--seeds", o.seeds, "Number of seeds for ccs/ccr")->capture_default_str();
  tr->add_option("--steps", o.steps)->capture_default_str();
  tr->add_option("--lr", o.learning_rate)->capture_default_str();
  tr->add_option("--split-fraction", o.split_fraction)->capture_default_str();
  tr->add_option("--split-seed", o.split_seed)->capture_default_str();
  tr->add_option("--trace-every", o.trace_every)->capture_default_str();
  tr->add_flag("--all-seeds", o.all_seeds, "Also write every seed's direction");

  auto* ev = app.add_subcommand("eval", "Calibrate, evaluate and tabulate trained directions");
  add_eval_inputs(ev);
  ev->add_option("--trim", o.trim)->capture_default_str();
  ev->add_option("--calibration-target", o.calibration_target)->capture_default_str();
  ev->add_flag("--no-baseline", o.no_baseline, "Skip the LM-head baseline row");

  auto* sw = app.add_subcommand("sweep", "Accuracy and premise sensitivity by layer");
  add_eval_inputs(sw);
  sw->add_option("--trim", o.trim)->capture_default_str();
  sw->add_option("--calibration-target", o.calibration_target)->capture_default_str();

  auto* cm = app.add_subcommand("cosine-matrix", "Pairwise cosine similarity of trained directions");
  cm->add_option("--directions", o.directions)->required();
  cm->add_option("--methods", o.methods)->delimiter(',')->capture_default_str();
  cm->add_option("--settings", o.settings)->delimiter(',')->capture_default_str();
  cm->add_option("--out", o.cosine_out, "CSV path (default: <directions>/cosine_matrix.csv)");

  auto* ie = app.add_subcommand("intervene-eval", "Export an intervention spec and measure its effect");
  ie->add_option("--store", o.store, "Pre-intervention store")->required();
  ie->add_option("--directions", o.directions)->required();
  ie->add_option("--split", o.split_file);
  ie->add_option("--out", o.out_dir)->required();
  ie->add_option("--method", o.steer_method, "Steering direction method")->capture_default_str();
  ie->add_option("--target", o.target, "subtract-on-pos-prem or add-on-neg-prem")->capture_default_str();
  ie->add_option("--layers", o.intervene_layers, "Layer range A-B")->capture_default_str();
  ie->add_option("--magnitude-scale", o.magnitude_scale)->capture_default_str();
  ie->add_option("--post-store", o.post_store, "Store extracted under the exported spec");
  ie->add_flag("--emit-post-store", o.emit_post_store, "Synthetic only: also write the intervened store");
  ie->add_flag("--export-only", o.export_only, "Write the spec and stop");

  auto* rp = app.add_subcommand("report", "Aggregate existing artifacts into one directory");
  rp->add_option("--from", o.report_inputs, "Artifact directories")->required();
  rp->add_option("--out", o.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "tvprobe: usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (o.jobs > 0) omp_set_num_threads(o.jobs);
    if (*bp) cmd_build_prompts(o, out);
    else if (*gs) cmd_gen_synthetic(o, out);
    else if (*tr) cmd_train(o, out);
    else if (*ev) cmd_eval(o, out);
    else if (*sw) cmd_sweep(o, out);
    else if (*cm) cmd_cosine_matrix(o, out);
    else if (*ie) cmd_intervene_eval(o, out);
    else if (*rp) cmd_report(o, out);
  } catch (const Error& e) {
    err << "tvprobe: error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "tvprobe: error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace tvp
