#pragma once

#include "pgnet/encoders.hpp"
#include "pgnet/geometry.hpp"
#include "pgnet/nn_blocks.hpp"

namespace pgnet {

struct GrbConfig {
  int upsample_rate = 2;  // r
  int k_neighbors = 8;    // interpolation and context attention
  int feature_dim = 64;   // D
};

// Carried between blocks: the previous resolution's coordinates and their
// contextual features.
struct GrbState {
  Value ctx_points;  // N_prev x 3
  Value ctx_feats;   // N_prev x D
};

struct GrbParams {
  LinearParams query;   // 2D -> D, also the bypass projection for the
                        // structure-aware ablation
  LinearParams key;     // D -> D
  LinearParams value;   // D -> D
  MlpParams pos;        // 3 -> D -> D, relative offsets
  MlpParams weight;     // D -> D -> 1, scalar attention logits
  MlpParams displace;   // D -> 3r, the displacement head
};
GrbParams declare_grb(ParamStore& store, const std::string& prefix, const GrbConfig& cfg,
                      Rng& rng);

// Dual-source association: spatial IDW from observation centers, then
// feature-space IDW over the grounded prior features, concatenated.
// suppress_prior_source duplicates the observation features instead.
Value dual_source_assoc(Ctx& ctx, Value points, const EncodedSet& enc_obs, Value f_grounded,
                        int k, bool suppress_prior_source);

// Cross-scale shape context: kNN-restricted attention over the previous
// resolution, with relative positional encoding, residual on the projected
// query.
Value cssc(Ctx& ctx, const GrbParams& p, Value points, Value f_assoc, const GrbState& state,
           const GrbConfig& cfg);

// Displacement upsampling: r children per input point, point-major layout.
Value upsample(Ctx& ctx, const GrbParams& p, Value points, Value f_ctx, int r);

struct GrbOutput {
  Value points;    // r*N x 3
  GrbState state;  // for the next block
};

// One full block. pre_assoc carries F_as of `points` when the caller already
// computed it (the first block shares it with the initial state projection);
// pass an invalid Value to compute it here.
GrbOutput grb_forward(Ctx& ctx, const GrbParams& p, Value points, const EncodedSet& enc_obs,
                      Value f_grounded, const GrbState& state, const GrbConfig& cfg,
                      bool suppress_prior_source, bool suppress_structure_aware,
                      Value pre_assoc = {});

}  // namespace pgnet
