#pragma once

#include "pgnet/geometry.hpp"
#include "pgnet/nn_blocks.hpp"

namespace pgnet {

// Centers plus their per-center features. Centers are coordinates fixed by
// sampling (not differentiated); features live on the tape.
struct EncodedSet {
  Mat centers;  // N_e x 3
  Value feats;  // N_e x D
};

struct EncoderConfig {
  int center_count = 32;  // N_e
  int feature_dim = 64;   // D
  int k_local = 8;
  int attention_heads = 4;
};

// Hierarchical local encoder for one cloud: edge convolutions over raw
// points, then over FPS centers, each as [f_neighbor - f_center, f_center]
// through a shared linear layer with ReLU, max-aggregated over neighbors.
struct LocalEncoderParams {
  LinearParams edge0;  // 6 -> 64
  LinearParams edge1;  // 2*64 -> D
};
LocalEncoderParams declare_local_encoder(ParamStore& store, const std::string& prefix, int dim,
                                         Rng& rng);

// Salient Transformer: global MHSA branch fused with a local max-pooled MLP
// branch through the salience gate.
struct SalientParams {
  AttentionParams attn;
  MlpParams local;  // D -> D
  SalienceGateParams gate;
};
SalientParams declare_salient(ParamStore& store, const std::string& prefix,
                              const EncoderConfig& cfg, Rng& rng);

// Grounding Transformer: self-attention branch fused with a cross-attention
// branch (prior queries, observation keys/values) through the salience gate.
struct GroundingParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  SalienceGateParams gate;
};
GroundingParams declare_grounding(ParamStore& store, const std::string& prefix,
                                  const EncoderConfig& cfg, Rng& rng);

// FPS centers + two edge-conv levels + shared positional embedding.
EncodedSet encode_local(Ctx& ctx, const Mat& cloud, const EncoderConfig& cfg,
                        const LocalEncoderParams& p, const MlpParams& pos_embed);

Value salient_transform(Ctx& ctx, Value f_obs, const Mat& centers, const EncoderConfig& cfg,
                        const SalientParams& p);

// With the cross branch suppressed (prior-feature-grounding ablation), the
// gate fuses the self branch with itself and the result collapses to it.
Value grounding_transform(Ctx& ctx, Value f_gen, Value f_obs_final, const GroundingParams& p,
                          bool suppress_cross_branch);

}  // namespace pgnet
