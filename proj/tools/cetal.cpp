// Command-line front end: dataset synthesis, training, evaluation, and the
// variant ablation grid. All diagnostics are JSON lines on stderr; artifacts
// land on paths given by flags. Exit codes: 0 ok, 2 config error, 3 data
// error, 4 numeric abort.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "cetal/config.hpp"
#include "cetal/data.hpp"
#include "cetal/errors.hpp"
#include "cetal/eval.hpp"
#include "cetal/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cetal;

namespace {

void log_line(const json& j) { std::cerr << j.dump() << "\n"; }

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << content;
}

EvalReport run_eval(const Model& model, const Dataset& ds, const RunConfig& rc) {
  std::vector<std::vector<Segment>> preds, gts;
  for (const auto& seq : ds.sequences) {
    preds.push_back(predict(model, seq, rc.decode, rc.nms));
    gts.push_back(seq.segments);
  }
  return evaluate(preds, gts, ds.num_classes, rc.thresholds);
}

fs::path resolve(const std::string& p, const std::string& base) {
  fs::path f(p);
  return f.is_absolute() ? f : fs::path(base) / f;
}

int cmd_synth(const SynthSpec& spec, const std::string& out_dir) {
  Dataset ds = synth_dataset(spec);
  save_dataset(out_dir, ds);
  json summary = {{"sequences", ds.sequences.size()},
                  {"classes", ds.num_classes},
                  {"channels", spec.channels},
                  {"manifest", (fs::path(out_dir) / "manifest.json").string()}};
  log_line({{"event", "synth_done"}, {"out", out_dir}});
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              bool resume) {
  RunConfig rc = load_run_config(config_path, sets);
  if (rc.train_manifest.empty()) throw ConfigError("train: data.manifest is required");
  Dataset ds = load_dataset(rc.train_manifest);
  Dataset val;
  if (!rc.val_manifest.empty()) val = load_dataset(rc.val_manifest);

  fs::create_directories(rc.output_dir);
  std::string ckpt = rc.checkpoint.empty() ? "model.ckpt" : rc.checkpoint;
  fs::path ckpt_path = resolve(ckpt, rc.output_dir);

  std::mt19937 rng{std::mt19937::result_type(rc.train.seed)};
  Model model(rc.model, rng);

  AdamWState st;
  std::size_t start_epoch = 0;
  if (resume) {
    start_epoch = load_checkpoint(ckpt_path.string(), model, st);
    log_line({{"event", "resumed"}, {"epoch", start_epoch}});
  }

  std::ofstream metrics(fs::path(rc.output_dir) / "metrics.jsonl",
                        resume ? std::ios::app : std::ios::trunc);
  metrics << json{{"config", json::parse(rc.to_json())}}.dump() << "\n";

  TrainResult res = train(model, ds, rc.val_manifest.empty() ? nullptr : &val,
                          rc.train, rc.thresholds, ckpt_path.string(), &metrics,
                          &st, start_epoch);
  json summary = {{"best_avg_map", res.best_avg_map},
                  {"best_epoch", res.best_epoch},
                  {"epochs", res.final_epoch},
                  {"checkpoint", ckpt_path.string()}};
  log_line({{"event", "train_done"}, {"best_avg_map", res.best_avg_map}});
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::vector<std::string>& sets,
             const std::string& ckpt, const std::string& manifest,
             const std::string& out_dir, bool svg) {
  RunConfig rc = load_run_config(config_path, sets);
  std::string data = manifest.empty() ? rc.val_manifest : manifest;
  if (data.empty()) data = rc.train_manifest;
  if (data.empty()) throw ConfigError("eval: no dataset given");
  Dataset ds = load_dataset(data);

  std::mt19937 rng{std::mt19937::result_type(rc.train.seed)};
  Model model(rc.model, rng);
  AdamWState st;
  load_checkpoint(ckpt, model, st);

  EvalReport rep = run_eval(model, ds, rc);
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "report.json", rep.to_json());
  write_file(fs::path(out_dir) / "confusion.csv", rep.confusion_csv());
  if (svg) {
    write_file(fs::path(out_dir) / "confusion.svg", rep.confusion_svg());
    write_file(fs::path(out_dir) / "map_vs_threshold.svg", rep.map_chart_svg());
  }
  log_line({{"event", "eval_done"}, {"avg_map", rep.avg_map}});
  std::cout << json{{"avg_map", rep.avg_map},
                    {"map_per_threshold", rep.map_per_threshold}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& sets,
               const std::string& variants_csv, const std::string& seeds_csv,
               const std::string& out_dir) {
  RunConfig rc = load_run_config(config_path, sets);
  if (rc.train_manifest.empty()) throw ConfigError("ablate: data.manifest is required");
  Dataset ds = load_dataset(rc.train_manifest);
  Dataset val;
  if (!rc.val_manifest.empty()) val = load_dataset(rc.val_manifest);
  const Dataset& eval_ds = rc.val_manifest.empty() ? ds : val;

  std::vector<std::string> variants;
  std::stringstream vs(variants_csv);
  std::string tok;
  while (std::getline(vs, tok, ',')) {
    if (!tok.empty()) variants.push_back(tok);
  }
  if (variants.empty()) throw ConfigError("ablate: no variants given");
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty()) seeds.push_back(rc.train.seed);

  std::vector<std::pair<std::string, double>> rows;
  for (const std::string& vname : variants) {
    Variant v = parse_variant(vname);  // rejects unknown names
    double acc = 0.0;
    for (std::uint64_t seed : seeds) {
      RunConfig vc = rc;
      vc.model.variant = v;
      vc.train.seed = seed;
      std::mt19937 rng{std::mt19937::result_type(seed)};
      Model model(vc.model, rng);
      TrainResult res = train(model, ds, rc.val_manifest.empty() ? nullptr : &val,
                              vc.train, vc.thresholds);
      EvalReport rep = run_eval(model, eval_ds, vc);
      acc += rep.avg_map;
      log_line({{"event", "ablate_run"},
                {"variant", variant_name(v)},
                {"seed", seed},
                {"avg_map", rep.avg_map},
                {"best_epoch", res.best_epoch}});
    }
    rows.emplace_back(variant_name(v), acc / double(seeds.size()));
  }

  double base = rows.front().second;
  for (const auto& [name, m] : rows) {
    if (name == "baseline") base = m;
  }
  std::ostringstream csv;
  csv << "variant,avg_map,delta_vs_baseline\n";
  for (const auto& [name, m] : rows) {
    csv << name << "," << m << "," << (m - base) << "\n";
  }
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "ablation.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("CETAL_THREADS")) {
    // single worker today; validated so configs stay forward compatible
    if (std::atoi(threads) < 1) {
      std::cerr << json{{"error", "CETAL_THREADS must be >= 1"}}.dump() << "\n";
      return 2;
    }
  }

  CLI::App app{"temporal action localization toolkit for multichannel sensor signals"};
  app.require_subcommand(1);

  SynthSpec spec;
  std::string synth_out = "dataset";
  auto* synth = app.add_subcommand("synth", "generate a synthetic channel-signature dataset");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--classes", spec.num_classes, "number of classes (>= 2)");
  synth->add_option("--channels", spec.channels, "feature channels");
  synth->add_option("--rate", spec.rate_hz, "sampling rate, Hz");
  synth->add_option("--seq-len", spec.seq_len, "timesteps per sequence");
  synth->add_option("--count", spec.num_sequences, "number of sequences");
  synth->add_option("--amplitude", spec.signal_amplitude, "burst amplitude");
  synth->add_option("--noise", spec.noise_std, "background noise stddev");
  synth->add_option("--seed", spec.seed, "RNG seed");

  std::string config_path, ckpt, manifest, out_dir = "eval_out";
  std::vector<std::string> sets;
  bool resume = false, svg = false;
  auto* tr = app.add_subcommand("train", "train a model from a JSON config");
  tr->add_option("--config", config_path, "config JSON path")->required();
  tr->add_option("--set", sets, "dotted.key=value overrides");
  tr->add_flag("--resume", resume, "continue from the existing checkpoint");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--config", config_path, "config JSON path")->required();
  ev->add_option("--checkpoint", ckpt, "checkpoint path")->required();
  ev->add_option("--data", manifest, "manifest path (default: config data)");
  ev->add_option("--out", out_dir, "report directory");
  ev->add_option("--set", sets, "dotted.key=value overrides");
  ev->add_flag("--svg", svg, "also emit SVG plots");

  std::string variants = "baseline,afse,afswish,afsesswish,ce";
  std::string seeds;
  auto* ab = app.add_subcommand("ablate", "train and compare module variants");
  ab->add_option("--config", config_path, "config JSON path")->required();
  ab->add_option("--variants", variants, "comma-separated variant names");
  ab->add_option("--seeds", seeds, "comma-separated seeds to average over");
  ab->add_option("--out", out_dir, "table directory");
  ab->add_option("--set", sets, "dotted.key=value overrides");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(spec, synth_out);
    if (tr->parsed()) return cmd_train(config_path, sets, resume);
    if (ev->parsed()) return cmd_eval(config_path, sets, ckpt, manifest, out_dir, svg);
    if (ab->parsed()) return cmd_ablate(config_path, sets, variants, seeds, out_dir);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << json{{"error", "data"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << json{{"error", "numeric"}, {"message", e.what()}}.dump() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
