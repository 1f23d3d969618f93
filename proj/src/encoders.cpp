#include "pgnet/encoders.hpp"

#include "pgnet/errors.hpp"

namespace pgnet {

namespace {

constexpr int kEdgeHidden = 64;

// One edge convolution: per (center, neighbor) pair build
// [f_neighbor - f_center, f_center], apply a shared linear layer + ReLU, and
// max-aggregate each center's edges.
Value edge_conv(Ctx& ctx, const LinearParams& layer, Value center_feats, Value source_feats,
                const NeighborSet& nbr) {
  Tape& t = ctx.tape();
  const int centers = t.value(center_feats).rows();
  std::vector<int> flat(nbr.indices.begin(), nbr.indices.end());
  std::vector<int> owner(flat.size());
  for (std::size_t e = 0; e < flat.size(); ++e) owner[e] = static_cast<int>(e) / nbr.k;

  Value center_rep = t.repeat_rows(center_feats, nbr.k);
  Value neighbor = t.gather_rows(source_feats, flat);
  Value edge = t.concat_cols(t.sub(neighbor, center_rep), center_rep);
  Value h = t.relu(linear_apply(ctx, layer, edge));
  return t.group_max(h, owner, centers);
}

}  // namespace

LocalEncoderParams declare_local_encoder(ParamStore& store, const std::string& prefix, int dim,
                                         Rng& rng) {
  LocalEncoderParams p;
  p.edge0 = declare_linear(store, prefix + ".edge0", 6, kEdgeHidden, rng);
  p.edge1 = declare_linear(store, prefix + ".edge1", 2 * kEdgeHidden, dim, rng);
  return p;
}

SalientParams declare_salient(ParamStore& store, const std::string& prefix,
                              const EncoderConfig& cfg, Rng& rng) {
  SalientParams p;
  p.attn = declare_attention(store, prefix + ".attn", cfg.attention_heads, cfg.feature_dim, rng);
  p.local = declare_mlp(store, prefix + ".local", {cfg.feature_dim, cfg.feature_dim}, rng);
  p.gate = declare_salience_gate(store, prefix + ".gate", cfg.feature_dim, rng);
  return p;
}

GroundingParams declare_grounding(ParamStore& store, const std::string& prefix,
                                  const EncoderConfig& cfg, Rng& rng) {
  GroundingParams p;
  p.self_attn =
      declare_attention(store, prefix + ".attn", cfg.attention_heads, cfg.feature_dim, rng);
  p.cross_attn =
      declare_attention(store, prefix + ".cross", cfg.attention_heads, cfg.feature_dim, rng);
  p.gate = declare_salience_gate(store, prefix + ".gate", cfg.feature_dim, rng);
  return p;
}

EncodedSet encode_local(Ctx& ctx, const Mat& cloud, const EncoderConfig& cfg,
                        const LocalEncoderParams& p, const MlpParams& pos_embed) {
  if (cloud.rows() < cfg.center_count || cloud.rows() < cfg.k_local)
    throw InputError("encode_local: cloud of " + std::to_string(cloud.rows()) +
                     " points is too small for N_e=" + std::to_string(cfg.center_count) +
                     ", k=" + std::to_string(cfg.k_local));
  Tape& t = ctx.tape();

  Value coords = t.constant(cloud);
  const NeighborSet point_nbr = knn(cloud, cloud, cfg.k_local);
  Value point_feats = edge_conv(ctx, p.edge0, coords, coords, point_nbr);

  const std::vector<int> fps = farthest_point_sample(cloud, cfg.center_count,
                                                     centroid_seed(cloud));
  Mat centers(cfg.center_count, 3);
  for (int i = 0; i < cfg.center_count; ++i)
    for (int c = 0; c < 3; ++c) centers(i, c) = cloud(fps[i], c);

  const NeighborSet center_nbr = knn(centers, cloud, cfg.k_local);
  Value center_feats = t.gather_rows(point_feats, fps);
  Value local = edge_conv(ctx, p.edge1, center_feats, point_feats, center_nbr);

  Value pos = mlp_apply(ctx, pos_embed, t.constant(centers));
  return EncodedSet{std::move(centers), t.add(local, pos)};
}

Value salient_transform(Ctx& ctx, Value f_obs, const Mat& centers, const EncoderConfig& cfg,
                        const SalientParams& p) {
  Tape& t = ctx.tape();
  Value global_branch = attention_apply(ctx, p.attn, f_obs, f_obs);

  const NeighborSet nbr = knn(centers, centers, cfg.k_local);
  std::vector<int> flat(nbr.indices.begin(), nbr.indices.end());
  std::vector<int> owner(flat.size());
  for (std::size_t e = 0; e < flat.size(); ++e) owner[e] = static_cast<int>(e) / nbr.k;
  Value patterns = mlp_apply(ctx, p.local, f_obs);
  Value local_branch = t.group_max(t.gather_rows(patterns, flat), owner, centers.rows());

  return salience_fuse(ctx, p.gate, global_branch, local_branch);
}

Value grounding_transform(Ctx& ctx, Value f_gen, Value f_obs_final, const GroundingParams& p,
                          bool suppress_cross_branch) {
  Value self_branch = attention_apply(ctx, p.self_attn, f_gen, f_gen);
  Value cross_branch = suppress_cross_branch
                           ? self_branch
                           : attention_apply(ctx, p.cross_attn, f_gen, f_obs_final);
  return salience_fuse(ctx, p.gate, self_branch, cross_branch);
}

}  // namespace pgnet
