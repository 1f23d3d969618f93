#include "pgnet/seed_generator.hpp"

namespace pgnet {

SeedParams declare_seed(ParamStore& store, const std::string& prefix, const SeedConfig& cfg,
                        Rng& rng) {
  const int d = cfg.feature_dim;
  SeedParams p;
  p.fuse_attn = declare_attention(store, prefix + ".fuse.attn", cfg.attention_heads, d, rng);
  p.fuse_mlp = declare_linear(store, prefix + ".fuse.mlp", 2 * d, d, rng);
  p.expand = declare_mlp(store, prefix + ".expand", {d, 2 * d, cfg.coarse_count * d}, rng);
  p.ground_attn = declare_attention(store, prefix + ".ground.attn", cfg.attention_heads, d, rng);
  p.coarse = declare_mlp(store, prefix + ".coarse", {3 * d, d, 3}, rng);
  return p;
}

Value fuse_global(Ctx& ctx, const SeedParams& p, const SeedConfig& cfg, Value f_gen,
                  Value f_obs) {
  Tape& t = ctx.tape();
  Value gen_global = t.max_rows(f_gen);
  Value obs_global = t.max_rows(f_obs);
  Value attended = cfg.alt_fusion_roles
                       ? attention_apply(ctx, p.fuse_attn, obs_global, f_gen)
                       : attention_apply(ctx, p.fuse_attn, gen_global, f_obs);
  return linear_apply(ctx, p.fuse_mlp, t.concat_cols(attended, obs_global));
}

Value expand_seeds(Ctx& ctx, const SeedParams& p, const SeedConfig& cfg, Value fused) {
  Value flat = mlp_apply(ctx, p.expand, fused);
  return ctx.tape().reshape(flat, cfg.coarse_count, cfg.feature_dim);
}

Value ground_seeds(Ctx& ctx, const SeedParams& p, Value f_seed, Value f_obs) {
  return attention_apply(ctx, p.ground_attn, f_seed, f_obs);
}

Value coarse_points(Ctx& ctx, const SeedParams& p, const SeedConfig& cfg, Value fused,
                    Value f_seed, Value f_grounded) {
  Tape& t = ctx.tape();
  Value replicated = t.repeat_rows(fused, cfg.coarse_count);
  Value stacked = t.concat_cols(t.concat_cols(replicated, f_seed), f_grounded);
  return mlp_apply(ctx, p.coarse, stacked);
}

}  // namespace pgnet
