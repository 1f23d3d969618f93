#pragma once

#include <vector>

#include "pgnet/encoders.hpp"
#include "pgnet/refinement.hpp"
#include "pgnet/seed_generator.hpp"

namespace pgnet {

struct AblationFlags {
  bool no_prior_feature_grounding = false;
  bool no_seed_grounding = false;
  bool no_dual_source = false;
  bool no_structure_aware = false;
  bool inpaint_mode = false;
};

struct ModelConfig {
  EncoderConfig encoder;
  SeedConfig seed;
  std::vector<GrbConfig> blocks{GrbConfig{}, GrbConfig{}};
  AblationFlags ablation;
};

// Desk-scale default configuration.
ModelConfig default_model_config();

struct ForwardOutput {
  Value coarse;               // N_c x 3
  std::vector<Value> levels;  // N_c*r, N_c*r^2, ...
};

// The correction function: consumes a partial observation and a generative
// prior, emits the coarse scaffold and every refinement level. Parameters
// are declared once at construction in a fixed, flag-independent order, so
// ablated variants share initialization with the full model.
class Model {
 public:
  Model(ParamStore& store, const ModelConfig& cfg, Rng& rng);

  ForwardOutput forward(Ctx& ctx, const Mat& partial, const Mat& prior) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  MlpParams pos_embed_;
  LocalEncoderParams obs_encoder_;
  LocalEncoderParams gen_encoder_;
  SalientParams salient_;
  GroundingParams grounding_;
  SeedParams seed_;
  LinearParams ctx_init_;
  std::vector<GrbParams> grbs_;
};

// Multi-level training objective: unweighted mean of the L1 Chamfer
// distances of the coarse cloud and every refinement level against the
// ground truth.
Value total_loss(Tape& tape, const ForwardOutput& out, Value gt);

}  // namespace pgnet
