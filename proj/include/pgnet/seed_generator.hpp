#pragma once

#include "pgnet/nn_blocks.hpp"

namespace pgnet {

struct SeedConfig {
  int coarse_count = 64;  // N_c
  int feature_dim = 64;   // D
  int attention_heads = 4;
  // Query/key roles in the pooled-global fusion. The default has the prior
  // global querying observation tokens; the switch flips to the observation
  // global querying prior tokens.
  bool alt_fusion_roles = false;
};

struct SeedParams {
  AttentionParams fuse_attn;
  LinearParams fuse_mlp;    // 2D -> D
  MlpParams expand;         // D -> 2D -> N_c*D
  AttentionParams ground_attn;
  MlpParams coarse;         // 3D -> D -> 3
};
SeedParams declare_seed(ParamStore& store, const std::string& prefix, const SeedConfig& cfg,
                        Rng& rng);

// Pool both feature sets column-wise, cross-attend one global token against
// the per-center tokens, and mix in the pooled observation through an MLP.
Value fuse_global(Ctx& ctx, const SeedParams& p, const SeedConfig& cfg, Value f_gen,
                  Value f_obs);

// PixelShuffle-style expansion: project the fused global to N_c*D and
// reshape row-major into N_c seed features.
Value expand_seeds(Ctx& ctx, const SeedParams& p, const SeedConfig& cfg, Value fused);

// Cross-attention with seeds as queries and observation features as
// keys/values.
Value ground_seeds(Ctx& ctx, const SeedParams& p, Value f_seed, Value f_obs);

// Coarse cloud from [replicated fused global, seed features, grounded
// features].
Value coarse_points(Ctx& ctx, const SeedParams& p, const SeedConfig& cfg, Value fused,
                    Value f_seed, Value f_grounded);

}  // namespace pgnet
