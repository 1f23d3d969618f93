#include "pgnet/pipeline.hpp"

namespace pgnet {

ModelConfig default_model_config() {
  ModelConfig cfg;
  cfg.encoder = EncoderConfig{32, 64, 8, 4};
  cfg.seed = SeedConfig{64, 64, 4, false};
  cfg.blocks = {GrbConfig{2, 8, 64}, GrbConfig{2, 8, 64}};
  return cfg;
}

Model::Model(ParamStore& store, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int d = cfg.encoder.feature_dim;
  pos_embed_ = declare_pos_embed(store, "encoder.pos", d, rng);
  obs_encoder_ = declare_local_encoder(store, "encoder.obs", d, rng);
  gen_encoder_ = declare_local_encoder(store, "encoder.gen", d, rng);
  salient_ = declare_salient(store, "encoder.obs", cfg.encoder, rng);
  grounding_ = declare_grounding(store, "encoder.gen", cfg.encoder, rng);
  seed_ = declare_seed(store, "seed", cfg.seed, rng);
  ctx_init_ = declare_linear(store, "refine.ctx_init", 2 * d, d, rng);
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b)
    grbs_.push_back(declare_grb(store, "refine.grb" + std::to_string(b), cfg.blocks[b], rng));
}

ForwardOutput Model::forward(Ctx& ctx, const Mat& partial, const Mat& prior) const {
  Tape& t = ctx.tape();
  const AblationFlags& flags = cfg_.ablation;

  EncodedSet enc_obs = encode_local(ctx, partial, cfg_.encoder, obs_encoder_, pos_embed_);
  Value f_obs = salient_transform(ctx, enc_obs.feats, enc_obs.centers, cfg_.encoder, salient_);

  Value f_grounded;
  if (flags.inpaint_mode) {
    f_grounded = f_obs;
  } else {
    EncodedSet enc_gen = encode_local(ctx, prior, cfg_.encoder, gen_encoder_, pos_embed_);
    f_grounded = grounding_transform(ctx, enc_gen.feats, f_obs, grounding_,
                                     flags.no_prior_feature_grounding);
  }

  Value fused = fuse_global(ctx, seed_, cfg_.seed, f_grounded, f_obs);
  Value f_seed = expand_seeds(ctx, seed_, cfg_.seed, fused);
  Value f_gr = flags.no_seed_grounding
                   ? t.constant(Mat(cfg_.seed.coarse_count, cfg_.seed.feature_dim))
                   : ground_seeds(ctx, seed_, f_seed, f_obs);
  Value coarse = coarse_points(ctx, seed_, cfg_.seed, fused, f_seed, f_gr);
  if (ctx.probe) ctx.probe->note_cardinality(t.value(coarse).rows());

  // The grounded observation features live at the observation centers and
  // feed every refinement block.
  EncodedSet grounded_obs{enc_obs.centers, f_obs};

  ForwardOutput out;
  out.coarse = coarse;
  Value points = coarse;
  GrbState state;
  Value first_assoc;
  for (std::size_t b = 0; b < grbs_.size(); ++b) {
    if (b == 0) {
      first_assoc = dual_source_assoc(ctx, points, grounded_obs, f_grounded,
                                      cfg_.blocks[0].k_neighbors, flags.no_dual_source);
      state = GrbState{points, linear_apply(ctx, ctx_init_, first_assoc)};
    }
    GrbOutput step = grb_forward(ctx, grbs_[b], points, grounded_obs, f_grounded, state,
                                 cfg_.blocks[b], flags.no_dual_source,
                                 flags.no_structure_aware, b == 0 ? first_assoc : Value{});
    points = step.points;
    state = step.state;
    out.levels.push_back(points);
    if (ctx.probe) ctx.probe->note_cardinality(t.value(points).rows());
  }
  return out;
}

Value total_loss(Tape& tape, const ForwardOutput& out, Value gt) {
  Value sum = chamfer_l1_t(tape, out.coarse, gt);
  for (Value level : out.levels) sum = tape.add(sum, chamfer_l1_t(tape, level, gt));
  return tape.scale(sum, 1.0 / double(1 + out.levels.size()));
}

}  // namespace pgnet
