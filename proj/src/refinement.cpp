#include "pgnet/refinement.hpp"

#include "pgnet/errors.hpp"

namespace pgnet {

GrbParams declare_grb(ParamStore& store, const std::string& prefix, const GrbConfig& cfg,
                      Rng& rng) {
  const int d = cfg.feature_dim;
  GrbParams p;
  p.query = declare_linear(store, prefix + ".query", 2 * d, d, rng);
  p.key = declare_linear(store, prefix + ".key", d, d, rng);
  p.value = declare_linear(store, prefix + ".value", d, d, rng);
  p.pos = declare_pos_embed(store, prefix + ".pos", d, rng);
  p.weight = declare_mlp(store, prefix + ".weight", {d, d, 1}, rng);
  p.displace = declare_mlp(store, prefix + ".displace", {d, 3 * cfg.upsample_rate}, rng);
  return p;
}

Value dual_source_assoc(Ctx& ctx, Value points, const EncodedSet& enc_obs, Value f_grounded,
                        int k, bool suppress_prior_source) {
  Tape& t = ctx.tape();
  Value obs_centers = t.constant(enc_obs.centers);
  Value f_obs = idw_interp_spatial_t(t, points, obs_centers, enc_obs.feats, k);
  Value f_gen = suppress_prior_source
                    ? f_obs
                    : idw_interp_feature_t(t, f_obs, f_grounded, f_grounded, k);
  return t.concat_cols(f_obs, f_gen);
}

Value cssc(Ctx& ctx, const GrbParams& p, Value points, Value f_assoc, const GrbState& state,
           const GrbConfig& cfg) {
  Tape& t = ctx.tape();
  const Mat& query_pts = t.value(points);
  const Mat& ctx_pts = t.value(state.ctx_points);
  if (cfg.k_neighbors > ctx_pts.rows())
    throw InputError("cssc: k=" + std::to_string(cfg.k_neighbors) + " exceeds " +
                     std::to_string(ctx_pts.rows()) + " context points");

  const int n = query_pts.rows();
  const int k = cfg.k_neighbors;
  const NeighborSet nbr = knn(query_pts, ctx_pts, k);
  std::vector<int> flat(nbr.indices.begin(), nbr.indices.end());
  std::vector<int> owner(flat.size());
  for (std::size_t e = 0; e < flat.size(); ++e) owner[e] = static_cast<int>(e) / k;

  Value f_query = linear_apply(ctx, p.query, f_assoc);
  Value keys = linear_apply(ctx, p.key, state.ctx_feats);
  Value values = linear_apply(ctx, p.value, state.ctx_feats);

  Value rel_pos = t.sub(t.repeat_rows(points, k), t.gather_rows(state.ctx_points, flat));
  Value pos_code = mlp_apply(ctx, p.pos, rel_pos);
  Value mix = t.add(t.sub(t.repeat_rows(f_query, k), t.gather_rows(keys, flat)), pos_code);
  Value logits = mlp_apply(ctx, p.weight, mix);

  Value alpha = t.softmax_rows(t.reshape(logits, n, k));
  if (ctx.probe) ctx.probe->note_attention(t.value(alpha));
  Value alpha_flat = t.reshape(alpha, n * k, 1);

  Value weighted = t.mul(t.broadcast_cols(alpha_flat, cfg.feature_dim), t.gather_rows(values, flat));
  Value context = t.group_sum(weighted, owner, n);
  return t.add(f_query, context);
}

Value upsample(Ctx& ctx, const GrbParams& p, Value points, Value f_ctx, int r) {
  Tape& t = ctx.tape();
  const int n = t.value(points).rows();
  Value displacement = t.reshape(mlp_apply(ctx, p.displace, f_ctx), n * r, 3);
  return t.add(t.repeat_rows(points, r), displacement);
}

GrbOutput grb_forward(Ctx& ctx, const GrbParams& p, Value points, const EncodedSet& enc_obs,
                      Value f_grounded, const GrbState& state, const GrbConfig& cfg,
                      bool suppress_prior_source, bool suppress_structure_aware,
                      Value pre_assoc) {
  Value f_assoc = pre_assoc.valid()
                      ? pre_assoc
                      : dual_source_assoc(ctx, points, enc_obs, f_grounded, cfg.k_neighbors,
                                          suppress_prior_source);
  Value f_ctx = suppress_structure_aware ? linear_apply(ctx, p.query, f_assoc)
                                         : cssc(ctx, p, points, f_assoc, state, cfg);
  Value up = upsample(ctx, p, points, f_ctx, cfg.upsample_rate);
  return GrbOutput{up, GrbState{points, f_ctx}};
}

}  // namespace pgnet
