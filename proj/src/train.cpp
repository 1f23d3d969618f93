#include "pgnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "json.hpp"
#include "pgnet/errors.hpp"
#include "pgnet/geometry.hpp"
#include "pgnet/optimizer.hpp"

namespace pgnet {

namespace {

using nlohmann::ordered_json;

double json_or_null(ordered_json& record, const char* key, double v) {
  if (std::isfinite(v))
    record[key] = v;
  else
    record[key] = nullptr;
  return v;
}

// Runs fn(0..count-1) across `threads` workers, items striped round-robin.
// Exceptions propagate after all workers join.
void parallel_items(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int tid = 0; tid < threads; ++tid) {
    pool.emplace_back([&, tid] {
      try {
        for (int i = tid; i < count; i += threads) fn(i);
      } catch (...) {
        errors[tid] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct ValScore {
  double cd = std::numeric_limits<double>::quiet_NaN();
  double fs = std::numeric_limits<double>::quiet_NaN();
};

ValScore validate(ParamStore& store, const Model& model, const Dataset& ds, double tau,
                  ForwardProbe* probe) {
  if (ds.val_indices.empty()) return {};
  double cd_sum = 0.0, fs_sum = 0.0;
  for (int idx : ds.val_indices) {
    const Sample& s = ds.samples[idx];
    const Mat pred = predict_final(store, model, s.partial, s.prior, probe);
    cd_sum += chamfer_l1(pred, s.gt);
    fs_sum += fscore(pred, s.gt, tau);
  }
  const double n = double(ds.val_indices.size());
  return {cd_sum / n, fs_sum / n};
}

}  // namespace

int worker_count() {
  unsigned hw = std::thread::hardware_concurrency();
  int count = hw == 0 ? 1 : static_cast<int>(hw);
  if (const char* env = std::getenv("PGNET_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) count = std::min(count, cap);
  }
  return std::max(1, count);
}

Mat predict_final(ParamStore& store, const Model& model, const Mat& partial, const Mat& prior,
                  ForwardProbe* probe) {
  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder, probe};
  ForwardOutput out = model.forward(ctx, partial, prior);
  return tape.value(out.levels.back());
}

std::string config_json(const ModelConfig& m, const TrainConfig& t,
                        const std::string& dataset_dir) {
  ordered_json blocks = ordered_json::array();
  for (const GrbConfig& b : m.blocks)
    blocks.push_back({{"upsample_rate", b.upsample_rate},
                      {"k_neighbors", b.k_neighbors},
                      {"feature_dim", b.feature_dim}});
  ordered_json j{
      {"model",
       {{"encoder",
         {{"center_count", m.encoder.center_count},
          {"feature_dim", m.encoder.feature_dim},
          {"k_local", m.encoder.k_local},
          {"attention_heads", m.encoder.attention_heads}}},
        {"seed_stage",
         {{"coarse_count", m.seed.coarse_count},
          {"feature_dim", m.seed.feature_dim},
          {"attention_heads", m.seed.attention_heads},
          {"alt_fusion_roles", m.seed.alt_fusion_roles}}},
        {"blocks", blocks},
        {"ablation",
         {{"no_prior_feature_grounding", m.ablation.no_prior_feature_grounding},
          {"no_seed_grounding", m.ablation.no_seed_grounding},
          {"no_dual_source", m.ablation.no_dual_source},
          {"no_structure_aware", m.ablation.no_structure_aware},
          {"inpaint_mode", m.ablation.inpaint_mode}}}}},
      {"train",
       {{"iterations", t.iterations},
        {"batch_size", t.batch_size},
        {"base_lr", t.base_lr},
        {"weight_decay", t.weight_decay},
        {"seed", t.seed},
        {"val_every", t.val_every},
        {"fscore_tau", t.fscore_tau}}},
      {"dataset", dataset_dir}};
  return j.dump(2) + "\n";
}

ModelConfig model_config_from_sidecar(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config sidecar " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw StateError("malformed config sidecar " + path + ": " + e.what());
  }
  try {
    ModelConfig m;
    const auto& enc = j.at("model").at("encoder");
    m.encoder = EncoderConfig{enc.at("center_count"), enc.at("feature_dim"), enc.at("k_local"),
                              enc.at("attention_heads")};
    const auto& seed = j.at("model").at("seed_stage");
    m.seed = SeedConfig{seed.at("coarse_count"), seed.at("feature_dim"),
                        seed.at("attention_heads"), seed.at("alt_fusion_roles")};
    m.blocks.clear();
    for (const auto& b : j.at("model").at("blocks"))
      m.blocks.push_back(
          GrbConfig{b.at("upsample_rate"), b.at("k_neighbors"), b.at("feature_dim")});
    const auto& a = j.at("model").at("ablation");
    m.ablation.no_prior_feature_grounding = a.at("no_prior_feature_grounding");
    m.ablation.no_seed_grounding = a.at("no_seed_grounding");
    m.ablation.no_dual_source = a.at("no_dual_source");
    m.ablation.no_structure_aware = a.at("no_structure_aware");
    m.ablation.inpaint_mode = a.at("inpaint_mode");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw StateError("config sidecar " + path + " lacks required fields: " + e.what());
  }
}

std::string variant_name(const AblationFlags& f) {
  std::string name;
  auto append = [&](bool on, const char* flag) {
    if (!on) return;
    if (!name.empty()) name += ",";
    name += flag;
  };
  append(f.no_prior_feature_grounding, "no_prior_feature_grounding");
  append(f.no_seed_grounding, "no_seed_grounding");
  append(f.no_dual_source, "no_dual_source");
  append(f.no_structure_aware, "no_structure_aware");
  append(f.inpaint_mode, "inpaint_mode");
  return name.empty() ? "full" : name;
}

TrainOutcome train_loop(const Dataset& dataset, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, const std::string& out_dir,
                        ForwardProbe* probe) {
  if (train_cfg.batch_size < 1) throw InputError("train: batch size must be positive");
  if (train_cfg.iterations < 0) throw InputError("train: negative iteration count");
  if (dataset.train_indices.empty()) throw InputError("train: dataset has no training split");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw InputError("train: cannot create " + out_dir + ": " + ec.message());

  ParamStore store;
  Rng root(train_cfg.seed);
  Model model(store, model_cfg, root);
  Rng batch_rng = root.fork(1);

  AdamW optimizer(store, AdamW::Options{train_cfg.base_lr, 0.9, 0.999, 1e-8,
                                        train_cfg.weight_decay,
                                        std::max(1, train_cfg.iterations)});

  TrainOutcome outcome;
  outcome.metrics_path = out_dir + "/metrics.jsonl";
  outcome.final_checkpoint = out_dir + "/final.pgnk";
  outcome.best_checkpoint = out_dir + "/best.pgnk";
  outcome.config_path = out_dir + "/config.json";

  {
    std::ofstream cfg_os(outcome.config_path);
    if (!cfg_os) throw InputError("train: cannot write " + outcome.config_path);
    cfg_os << config_json(model_cfg, train_cfg, dataset.dir);
  }

  std::ofstream metrics(outcome.metrics_path);
  if (!metrics) throw InputError("train: cannot write " + outcome.metrics_path);

  const int workers = std::min(worker_count(), train_cfg.batch_size);

  double best_cd = std::numeric_limits<double>::infinity();
  auto run_validation = [&](int step, double train_loss, ordered_json& record) {
    const ValScore score = validate(store, model, dataset, train_cfg.fscore_tau, probe);
    json_or_null(record, "val_cd", score.cd);
    json_or_null(record, "val_fscore", score.fs);
    if (std::isfinite(score.cd) && score.cd < best_cd) {
      best_cd = score.cd;
      store.save(outcome.best_checkpoint);
    }
    if (step == 0) outcome.initial_val_cd = score.cd;
    outcome.final_val_cd = score.cd;
    if (train_cfg.on_validation) train_cfg.on_validation(step, train_loss, score.cd, score.fs);
    return score;
  };

  {
    ordered_json record{{"step", 0}, {"lr", optimizer.lr_at(0)}, {"train_loss", nullptr}};
    run_validation(0, std::numeric_limits<double>::quiet_NaN(), record);
    metrics << record.dump() << "\n";
  }

  std::vector<int> queue;
  auto next_batch = [&](std::vector<int>& batch) {
    batch.clear();
    while (static_cast<int>(batch.size()) < train_cfg.batch_size) {
      if (queue.empty()) {
        queue = dataset.train_indices;
        for (int i = static_cast<int>(queue.size()) - 1; i > 0; --i)
          std::swap(queue[i], queue[batch_rng.uniform_int(0, i)]);
      }
      batch.push_back(queue.back());
      queue.pop_back();
    }
  };

  std::vector<int> batch;
  std::vector<double> item_loss(train_cfg.batch_size);
  std::vector<std::vector<Mat>> item_grads;
  for (int i = 0; i < train_cfg.batch_size; ++i) item_grads.push_back(make_gradient_buffer(store));
  std::vector<Mat> grads = make_gradient_buffer(store);

  // Workers audit into private probes; evidence merges after the join so the
  // shared probe never sees interleaved forwards.
  std::vector<ForwardProbe> item_probes(train_cfg.batch_size);

  for (int iter = 1; iter <= train_cfg.iterations; ++iter) {
    next_batch(batch);
    const double item_scale = 1.0 / double(train_cfg.batch_size);

    parallel_items(train_cfg.batch_size, workers, [&](int slot) {
      const Sample& s = dataset.samples[batch[slot]];
      Tape tape;
      Binder binder(store, tape);
      if (probe) {
        item_probes[slot] = ForwardProbe{};
        item_probes[slot].expected_cardinalities = probe->expected_cardinalities;
      }
      Ctx ctx{binder, probe ? &item_probes[slot] : nullptr};
      ForwardOutput out = model.forward(ctx, s.partial, s.prior);
      Value loss = total_loss(tape, out, tape.constant(s.gt));
      item_loss[slot] = tape.value(loss)(0, 0);
      if (!std::isfinite(item_loss[slot])) return;
      tape.backward(loss);
      for (Mat& g : item_grads[slot])
        std::fill(g.data(), g.data() + g.size(), 0.0);
      binder.accumulate_gradients(item_scale, item_grads[slot]);
    });
    if (probe)
      for (const ForwardProbe& p : item_probes) probe->merge_from(p);

    std::string bad_ids;
    for (int slot = 0; slot < train_cfg.batch_size; ++slot)
      if (!std::isfinite(item_loss[slot]))
        bad_ids += (bad_ids.empty() ? "" : ", ") + dataset.samples[batch[slot]].id;
    if (!bad_ids.empty())
      throw NumericalError("train: non-finite loss at iteration " + std::to_string(iter) +
                           " on samples [" + bad_ids + "]");

    for (Mat& g : grads) std::fill(g.data(), g.data() + g.size(), 0.0);
    for (int slot = 0; slot < train_cfg.batch_size; ++slot)
      for (std::size_t p = 0; p < grads.size(); ++p) {
        const Mat& src = item_grads[slot][p];
        Mat& dst = grads[p];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }

    optimizer.step(store, grads, iter - 1);

    double loss_sum = 0.0;
    for (int slot = 0; slot < train_cfg.batch_size; ++slot) loss_sum += item_loss[slot];

    ordered_json record{{"step", iter},
                        {"lr", optimizer.lr_at(iter - 1)},
                        {"train_loss", loss_sum * item_scale}};
    if (iter % train_cfg.val_every == 0 || iter == train_cfg.iterations) {
      run_validation(iter, loss_sum * item_scale, record);
    } else {
      record["val_cd"] = nullptr;
      record["val_fscore"] = nullptr;
    }
    metrics << record.dump() << "\n";
  }

  store.save(outcome.final_checkpoint);
  if (!std::isfinite(best_cd)) store.save(outcome.best_checkpoint);
  outcome.best_val_cd = best_cd;
  return outcome;
}

}  // namespace pgnet
