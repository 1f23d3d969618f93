// Command line front end: dataset generation, training, evaluation, and
// ablation sweeps over the completion pipeline.

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pgnet/cloud_io.hpp"
#include "pgnet/data_synth.hpp"
#include "pgnet/errors.hpp"
#include "pgnet/geometry.hpp"
#include "pgnet/hash.hpp"
#include "pgnet/train.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace pgnet;

std::string iso_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One manifest per run directory: command, config snapshot, input content
// hashes, and output paths. The timestamp lives here and nowhere else, so
// every other artifact reproduces byte for byte.
void write_run_manifest(const std::string& dir, const std::string& command,
                        const ordered_json& config, std::uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs) {
  ordered_json hashed = ordered_json::object();
  for (const std::string& path : inputs) hashed[path] = file_content_hash(path);
  ordered_json j{{"command", command}, {"config", config},      {"seed", seed},
                 {"inputs", hashed},   {"outputs", outputs},    {"timestamp", iso_timestamp()}};
  const std::string path = dir + "/run_manifest.json";
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os << j.dump(2) << "\n";
}

std::vector<std::string> split_csv_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      item += c;
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

AblationFlags parse_ablation_list(const std::string& text) {
  AblationFlags flags;
  for (const std::string& name : split_csv_list(text)) {
    if (name == "no_prior_feature_grounding")
      flags.no_prior_feature_grounding = true;
    else if (name == "no_seed_grounding")
      flags.no_seed_grounding = true;
    else if (name == "no_dual_source")
      flags.no_dual_source = true;
    else if (name == "no_structure_aware")
      flags.no_structure_aware = true;
    else if (name == "inpaint_mode")
      flags.inpaint_mode = true;
    else
      throw InputError("unknown ablation flag '" + name + "'");
  }
  return flags;
}

PriorBias bias_profile(const std::string& name) {
  if (name == "default") return PriorBias{};
  if (name == "clean") {
    PriorBias b;
    b.max_rotation = 0.0;
    b.scale_min = 1.0;
    b.scale_max = 1.0;
    b.max_translation = 0.0;
    b.jitter_sigma = 0.0;
    b.blob_probability = 0.0;
    b.dropout_fraction = 0.0;
    return b;
  }
  if (name == "strong") {
    PriorBias b;
    b.max_rotation = 30.0 * 3.14159265358979323846 / 180.0;
    b.scale_min = 0.8;
    b.scale_max = 1.2;
    b.max_translation = 0.1;
    b.jitter_sigma = 0.02;
    b.blob_probability = 0.5;
    b.dropout_fraction = 0.2;
    return b;
  }
  throw InputError("unknown bias profile '" + name + "' (default|clean|strong)");
}

// Applies the optional JSON override file on top of defaults. The file uses
// the same schema as the config.json sidecar; "train" keys are individually
// optional, a "model" section must be complete.
void apply_config_file(const std::string& path, ModelConfig& mcfg, TrainConfig& tcfg) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config file " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed config file " + path + ": " + e.what());
  }
  if (j.contains("model")) mcfg = model_config_from_sidecar(path);
  if (j.contains("train")) {
    const auto& t = j["train"];
    tcfg.iterations = t.value("iterations", tcfg.iterations);
    tcfg.batch_size = t.value("batch_size", tcfg.batch_size);
    tcfg.base_lr = t.value("base_lr", tcfg.base_lr);
    tcfg.weight_decay = t.value("weight_decay", tcfg.weight_decay);
    tcfg.seed = t.value("seed", tcfg.seed);
    tcfg.val_every = t.value("val_every", tcfg.val_every);
    tcfg.fscore_tau = t.value("fscore_tau", tcfg.fscore_tau);
  }
}

struct EvalRow {
  std::string family;
  int n = 0;
  double cd_e3 = 0.0;
  double sqcd_e3 = 0.0;
  double fscore = 0.0;
};

struct EvalReport {
  std::string variant;
  std::vector<EvalRow> rows;  // families sorted by name, then "average"

  const EvalRow& average() const { return rows.back(); }
};

std::vector<int> select_split(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train_indices;
  if (split == "val") return ds.val_indices;
  if (split == "all") {
    std::vector<int> all(ds.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
  }
  throw InputError("unknown split '" + split + "' (train|val|all)");
}

// Loads checkpoint + sidecar and scores every sample of the split. With
// oracle_gt the ground truth itself stands in for the prediction, which
// pins the metric extremes (CD 0, F-score 1).
EvalReport evaluate_checkpoint(const std::string& checkpoint, const Dataset& ds,
                               const std::string& split, double tau, bool oracle_gt,
                               const std::string& export_dir) {
  const std::string sidecar = (fs::path(checkpoint).parent_path() / "config.json").string();
  const ModelConfig mcfg = model_config_from_sidecar(sidecar);

  ParamStore store;
  Rng rng(0);
  Model model(store, mcfg, rng);
  store.load(checkpoint);

  const std::vector<int> picks = select_split(ds, split);
  if (picks.empty()) throw InputError("eval: split '" + split + "' has no samples");

  if (!export_dir.empty()) {
    std::error_code ec;
    fs::create_directories(export_dir, ec);
    if (ec) throw InputError("eval: cannot create " + export_dir + ": " + ec.message());
  }

  struct Acc {
    int n = 0;
    double cd = 0.0, sqcd = 0.0, fs = 0.0;
  };
  std::map<std::string, Acc> by_family;
  Acc total;
  for (int idx : picks) {
    const Sample& s = ds.samples[idx];
    const Mat pred = oracle_gt ? s.gt : predict_final(store, model, s.partial, s.prior);
    const double cd = chamfer_l1(pred, s.gt);
    const double sqcd = chamfer_sq_l2(pred, s.gt);
    const double fs = fscore(pred, s.gt, tau);
    for (Acc* acc : {&by_family[s.family], &total}) {
      acc->n += 1;
      acc->cd += cd;
      acc->sqcd += sqcd;
      acc->fs += fs;
    }
    if (!export_dir.empty()) save_ply(export_dir + "/" + s.id + ".pred.ply", pred);
  }

  EvalReport report;
  report.variant = variant_name(mcfg.ablation);
  auto push = [&](const std::string& family, const Acc& acc) {
    report.rows.push_back(EvalRow{family, acc.n, 1e3 * acc.cd / acc.n, 1e3 * acc.sqcd / acc.n,
                                  acc.fs / acc.n});
  };
  for (const auto& [family, acc] : by_family) push(family, acc);
  push("average", total);
  return report;
}

void print_report(const EvalReport& report, double tau) {
  std::printf("variant: %s\n", report.variant.c_str());
  std::printf("%-12s %6s %12s %12s %12s\n", "family", "n", "cd_e3", "sqcd_e3",
              ("fscore@" + std::to_string(tau).substr(0, 5)).c_str());
  for (const EvalRow& r : report.rows)
    std::printf("%-12s %6d %12.4f %12.4f %12.4f\n", r.family.c_str(), r.n, r.cd_e3, r.sqcd_e3,
                r.fscore);
}

void write_metrics_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os << "variant,family,cd_e3,fscore,n_samples\n";
  char line[256];
  for (const EvalReport& report : reports)
    for (const EvalRow& r : report.rows) {
      std::snprintf(line, sizeof line, "%s,%s,%.6f,%.6f,%d\n", report.variant.c_str(),
                    r.family.c_str(), r.cd_e3, r.fscore, r.n);
      os << line;
    }
}

struct GenDataArgs {
  std::string out;
  std::uint64_t seed = 42;
  int samples = 200;
  std::string families;
  std::string bias = "default";
};

void run_gen_data(const GenDataArgs& args) {
  DatasetConfig cfg;
  cfg.sample_count = args.samples;
  cfg.master_seed = args.seed;
  cfg.bias = bias_profile(args.bias);
  if (!args.families.empty()) {
    cfg.families.clear();
    for (const std::string& name : split_csv_list(args.families))
      cfg.families.push_back(family_from_name(name));
    if (cfg.families.empty()) throw InputError("gen-data: empty family list");
  }
  build_dataset(args.out, cfg);
  std::printf("wrote %d samples to %s\n", cfg.sample_count, args.out.c_str());
}

struct TrainArgs {
  std::string data;
  std::string out;
  int iters = 2000;
  std::uint64_t seed = 1;
  std::string ablate;
  std::string config;
  bool iters_given = false;
  bool seed_given = false;
};

TrainOutcome run_train_once(const Dataset& dataset, ModelConfig mcfg, TrainConfig tcfg,
                            const std::string& out_dir) {
  tcfg.on_validation = [](int step, double train_loss, double val_cd, double val_fscore) {
    if (std::isfinite(train_loss))
      std::printf("step %5d  loss %.6f  val_cd %.6f  val_fscore %.4f\n", step, train_loss,
                  val_cd, val_fscore);
    else
      std::printf("step %5d  val_cd %.6f  val_fscore %.4f\n", step, val_cd, val_fscore);
    std::fflush(stdout);
  };
  return train_loop(dataset, mcfg, tcfg, out_dir);
}

void run_train(const TrainArgs& args) {
  Dataset dataset = load_dataset(args.data);
  ModelConfig mcfg = default_model_config();
  TrainConfig tcfg;
  if (!args.config.empty()) apply_config_file(args.config, mcfg, tcfg);
  if (args.iters_given || args.config.empty()) tcfg.iterations = args.iters;
  if (args.seed_given || args.config.empty()) tcfg.seed = args.seed;
  mcfg.ablation = parse_ablation_list(args.ablate);

  const TrainOutcome outcome = run_train_once(dataset, mcfg, tcfg, args.out);

  write_run_manifest(args.out, "train",
                     ordered_json::parse(config_json(mcfg, tcfg, args.data)), tcfg.seed,
                     {args.data + "/manifest.json"},
                     {outcome.metrics_path, outcome.final_checkpoint, outcome.best_checkpoint,
                      outcome.config_path});
  std::printf("initial val_cd %.6f  final val_cd %.6f  best val_cd %.6f\n",
              outcome.initial_val_cd, outcome.final_val_cd, outcome.best_val_cd);
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "val";
  double tau = 0.01;
  std::string export_dir;
  std::string csv;
  std::string compare;
  bool oracle_gt = false;
};

void run_eval(const EvalArgs& args) {
  Dataset dataset = load_dataset(args.data);
  std::vector<EvalReport> reports;
  reports.push_back(evaluate_checkpoint(args.checkpoint, dataset, args.split, args.tau,
                                        args.oracle_gt, args.export_dir));
  print_report(reports.front(), args.tau);
  if (!args.compare.empty()) {
    reports.push_back(
        evaluate_checkpoint(args.compare, dataset, args.split, args.tau, args.oracle_gt, ""));
    std::printf("\n");
    print_report(reports.back(), args.tau);
    std::printf("\npaired cd_e3 (lower is better)\n");
    std::printf("%-12s %16s %16s\n", "family", reports[0].variant.c_str(),
                reports[1].variant.c_str());
    for (std::size_t i = 0; i < reports[0].rows.size(); ++i) {
      const EvalRow& a = reports[0].rows[i];
      const EvalRow* b = nullptr;
      for (const EvalRow& row : reports[1].rows)
        if (row.family == a.family) b = &row;
      if (b) std::printf("%-12s %16.4f %16.4f\n", a.family.c_str(), a.cd_e3, b->cd_e3);
    }
  }
  std::string csv = args.csv;
  if (csv.empty())
    csv = (fs::path(args.checkpoint).parent_path() / "eval.csv").string();
  write_metrics_csv(csv, reports);
  std::printf("\nmetrics csv: %s\n", csv.c_str());
}

struct AblateArgs {
  std::string data;
  std::string out;
  int iters = 2000;
  std::uint64_t seed = 1;
  double tau = 0.01;
  std::string config;
};

void run_ablate(const AblateArgs& args) {
  Dataset dataset = load_dataset(args.data);

  std::vector<AblationFlags> variants(5);
  variants[1].no_prior_feature_grounding = true;
  variants[2].no_seed_grounding = true;
  variants[3].no_dual_source = true;
  variants[4].no_structure_aware = true;

  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw InputError("ablate: cannot create " + args.out + ": " + ec.message());

  std::vector<EvalReport> reports;
  for (const AblationFlags& flags : variants) {
    ModelConfig mcfg = default_model_config();
    TrainConfig tcfg;
    if (!args.config.empty()) apply_config_file(args.config, mcfg, tcfg);
    tcfg.iterations = args.iters;
    tcfg.seed = args.seed;
    tcfg.fscore_tau = args.tau;
    mcfg.ablation = flags;
    const std::string name = variant_name(flags);
    const std::string run_dir = args.out + "/" + name;
    std::printf("== training variant %s ==\n", name.c_str());
    const TrainOutcome outcome = run_train_once(dataset, mcfg, tcfg, run_dir);
    write_run_manifest(run_dir, "ablate",
                       ordered_json::parse(config_json(mcfg, tcfg, args.data)), tcfg.seed,
                       {args.data + "/manifest.json"},
                       {outcome.metrics_path, outcome.final_checkpoint,
                        outcome.best_checkpoint, outcome.config_path});
    reports.push_back(
        evaluate_checkpoint(outcome.final_checkpoint, dataset, "val", args.tau, false, ""));
  }

  std::printf("\nablation summary (val split, %d iterations, seed %llu)\n", args.iters,
              static_cast<unsigned long long>(args.seed));
  std::printf("%-44s %12s %12s\n", "variant", "cd_e3", "fscore");
  const EvalReport* best = &reports.front();
  for (const EvalReport& r : reports) {
    std::printf("%-44s %12.4f %12.4f\n", r.variant.c_str(), r.average().cd_e3,
                r.average().fscore);
    if (r.average().cd_e3 < best->average().cd_e3) best = &r;
  }
  std::printf("best by cd_e3: %s\n", best->variant.c_str());

  const std::string csv = args.out + "/report.csv";
  write_metrics_csv(csv, reports);
  std::printf("report csv: %s\n", csv.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point cloud completion by correcting a generative shape prior"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
  gen->add_option("--out", gen_args.out, "dataset directory")->required();
  gen->add_option("--seed", gen_args.seed, "master seed (default 42)");
  gen->add_option("--samples", gen_args.samples, "sample count (default 200)");
  gen->add_option("--families", gen_args.families,
                  "comma list: sphere,box,cylinder,bracket,lamp (default all)");
  gen->add_option("--bias-profile", gen_args.bias, "prior perturbation: default|clean|strong");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "optimize the model on a dataset");
  train->add_option("--data", train_args.data, "dataset directory")->required();
  train->add_option("--out", train_args.out, "run directory")->required();
  CLI::Option* iters_opt = train->add_option("--iters", train_args.iters, "iterations");
  CLI::Option* seed_opt = train->add_option("--seed", train_args.seed, "run seed");
  train->add_option("--ablate", train_args.ablate, "comma list of ablation flags");
  train->add_option("--config", train_args.config, "JSON config override file");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", eval_args.data, "dataset directory")->required();
  eval->add_option("--split", eval_args.split, "train|val|all (default val)");
  eval->add_option("--tau", eval_args.tau, "F-score distance threshold");
  eval->add_option("--export", eval_args.export_dir, "directory for predicted PLY clouds");
  eval->add_option("--csv", eval_args.csv, "metrics CSV path");
  eval->add_option("--compare", eval_args.compare, "second checkpoint for a paired table");
  eval->add_flag("--oracle-gt", eval_args.oracle_gt, "score ground truth against itself");

  AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand("ablate", "train and score every ablation variant");
  ablate->add_option("--data", ablate_args.data, "dataset directory")->required();
  ablate->add_option("--out", ablate_args.out, "sweep directory")->required();
  ablate->add_option("--iters", ablate_args.iters, "iterations per variant");
  ablate->add_option("--seed", ablate_args.seed, "shared run seed");
  ablate->add_option("--tau", ablate_args.tau, "F-score distance threshold");
  ablate->add_option("--config", ablate_args.config, "JSON config override file");

  try {
    app.parse(argc, argv);
    train_args.iters_given = iters_opt->count() > 0;
    train_args.seed_given = seed_opt->count() > 0;
    if (gen->parsed()) run_gen_data(gen_args);
    if (train->parsed()) run_train(train_args);
    if (eval->parsed()) run_eval(eval_args);
    if (ablate->parsed()) run_ablate(ablate_args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const StateError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
