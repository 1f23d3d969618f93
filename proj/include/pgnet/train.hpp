#pragma once

#include <functional>
#include <string>

#include "pgnet/data_synth.hpp"
#include "pgnet/pipeline.hpp"

namespace pgnet {

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 8;
  double base_lr = 2e-4;
  double weight_decay = 1e-2;
  std::uint64_t seed = 1;
  int val_every = 100;
  double fscore_tau = 0.01;
  // Invoked after every validation pass (step 0, the cadence steps, and the
  // final step). Not part of the serialized config.
  std::function<void(int step, double train_loss, double val_cd, double val_fscore)>
      on_validation;
};

struct TrainOutcome {
  double initial_val_cd = 0.0;
  double final_val_cd = 0.0;
  double best_val_cd = 0.0;
  std::string metrics_path;
  std::string final_checkpoint;
  std::string best_checkpoint;
  std::string config_path;
};

// Number of batch workers: hardware concurrency, capped by PGNET_THREADS.
int worker_count();

// Runs the model and returns the densest refinement level.
Mat predict_final(ParamStore& store, const Model& model, const Mat& partial, const Mat& prior,
                  ForwardProbe* probe = nullptr);

// End-to-end optimization over the dataset's training split. Writes
// metrics.jsonl, config.json, best.pgnk, and final.pgnk into out_dir.
// Identical dataset + configs + seed reproduce all four files byte for byte,
// independent of worker count. Aborts with NumericalError if any batch item
// produces a non-finite loss.
TrainOutcome train_loop(const Dataset& dataset, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, const std::string& out_dir,
                        ForwardProbe* probe = nullptr);

// Serialized snapshot of both configs, written next to checkpoints so that
// evaluation can rebuild the matching architecture.
std::string config_json(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const std::string& dataset_dir);

ModelConfig model_config_from_sidecar(const std::string& path);

// Canonical run label: "full", or the comma-joined list of active ablation
// flags in declaration order.
std::string variant_name(const AblationFlags& flags);

}  // namespace pgnet
