#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pgnet/errors.hpp"
#include "pgnet/grad_check.hpp"
#include "pgnet/params.hpp"
#include "pgnet/refinement.hpp"
#include "pgnet/rng.hpp"
#include "pgnet/seed_generator.hpp"

using namespace pgnet;

namespace {

Mat random_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.uniform(-1.0, 1.0);
  return m;
}

std::vector<double> linear_row(const Mat& w, const Mat& b, const std::vector<double>& x) {
  std::vector<double> out(w.cols());
  for (int j = 0; j < w.cols(); ++j) {
    double s = b(0, j);
    for (int i = 0; i < w.rows(); ++i) s += x[i] * w(i, j);
    out[j] = s;
  }
  return out;
}

std::vector<double> relu_row(std::vector<double> x) {
  for (double& v : x) v = std::max(0.0, v);
  return x;
}

// Reference forward through MlpParams: relu between layers, none after last.
std::vector<double> mlp_row(const ParamStore& store, const MlpParams& mlp,
                            std::vector<double> x) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    x = linear_row(store.tensor(mlp.layers[l].weight), store.tensor(mlp.layers[l].bias), x);
    if (l + 1 < mlp.layers.size()) x = relu_row(std::move(x));
  }
  return x;
}

std::vector<double> mat_row(const Mat& m, int i) {
  std::vector<double> out(m.cols());
  for (int c = 0; c < m.cols(); ++c) out[c] = m(i, c);
  return out;
}

SeedConfig tiny_seed_config() {
  SeedConfig cfg;
  cfg.coarse_count = 2;
  cfg.feature_dim = 4;
  cfg.attention_heads = 2;
  return cfg;
}

GrbConfig tiny_grb_config() {
  GrbConfig cfg;
  cfg.upsample_rate = 2;
  cfg.k_neighbors = 2;
  cfg.feature_dim = 4;
  return cfg;
}

void zero_tensor(ParamStore& store, int id) {
  Mat& m = store.tensor(id);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = 0.0;
}

}  // namespace

TEST_CASE("fuse_global pools, cross-attends and mixes in the declared roles") {
  const SeedConfig cfg = tiny_seed_config();
  ParamStore store;
  Rng rng(51);
  SeedParams p = declare_seed(store, "seed", cfg, rng);
  const Mat f_gen = random_mat(3, cfg.feature_dim, rng);
  const Mat f_obs = random_mat(5, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  Value f_gen_v = tape.constant(f_gen);
  Value f_obs_v = tape.constant(f_obs);
  const Mat fused = tape.value(fuse_global(ctx, p, cfg, f_gen_v, f_obs_v));

  Mat gen_global(1, cfg.feature_dim);
  Mat obs_global(1, cfg.feature_dim);
  for (int c = 0; c < cfg.feature_dim; ++c) {
    double mg = -1e300;
    double mo = -1e300;
    for (int i = 0; i < 3; ++i) mg = std::max(mg, f_gen(i, c));
    for (int i = 0; i < 5; ++i) mo = std::max(mo, f_obs(i, c));
    gen_global(0, c) = mg;
    obs_global(0, c) = mo;
  }
  Value attended = attention_apply(ctx, p.fuse_attn, tape.constant(gen_global), f_obs_v);
  const Mat want = tape.value(
      linear_apply(ctx, p.fuse_mlp, tape.concat_cols(attended, tape.constant(obs_global))));

  REQUIRE(fused.same_shape(Mat(1, cfg.feature_dim)));
  for (std::size_t k = 0; k < want.size(); ++k)
    CHECK(fused[k] == doctest::Approx(want[k]).epsilon(1e-12));
}

TEST_CASE("fuse_global role switch makes the observation global the query") {
  SeedConfig cfg = tiny_seed_config();
  ParamStore store;
  Rng rng(52);
  SeedParams p = declare_seed(store, "seed", cfg, rng);
  const Mat f_gen = random_mat(3, cfg.feature_dim, rng);
  const Mat f_obs = random_mat(5, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  Value f_gen_v = tape.constant(f_gen);
  Value f_obs_v = tape.constant(f_obs);
  cfg.alt_fusion_roles = true;
  const Mat alt = tape.value(fuse_global(ctx, p, cfg, f_gen_v, f_obs_v));

  Mat obs_global(1, cfg.feature_dim);
  for (int c = 0; c < cfg.feature_dim; ++c) {
    double mo = -1e300;
    for (int i = 0; i < 5; ++i) mo = std::max(mo, f_obs(i, c));
    obs_global(0, c) = mo;
  }
  Value attended = attention_apply(ctx, p.fuse_attn, tape.constant(obs_global), f_gen_v);
  const Mat want = tape.value(
      linear_apply(ctx, p.fuse_mlp, tape.concat_cols(attended, tape.constant(obs_global))));
  for (std::size_t k = 0; k < want.size(); ++k)
    CHECK(alt[k] == doctest::Approx(want[k]).epsilon(1e-12));
}

TEST_CASE("expand_seeds reshapes the projected global row-major") {
  const SeedConfig cfg = tiny_seed_config();
  ParamStore store;
  Rng rng(53);
  SeedParams p = declare_seed(store, "seed", cfg, rng);
  const Mat fused = random_mat(1, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const Mat seeds = tape.value(expand_seeds(ctx, p, cfg, tape.constant(fused)));
  REQUIRE(seeds.same_shape(Mat(cfg.coarse_count, cfg.feature_dim)));

  const std::vector<double> flat = mlp_row(store, p.expand, mat_row(fused, 0));
  REQUIRE(int(flat.size()) == cfg.coarse_count * cfg.feature_dim);
  for (int i = 0; i < cfg.coarse_count; ++i)
    for (int c = 0; c < cfg.feature_dim; ++c)
      CHECK(seeds(i, c) ==
            doctest::Approx(flat[std::size_t(i) * cfg.feature_dim + c]).epsilon(1e-12));
}

TEST_CASE("ground_seeds is plain cross attention onto the observations") {
  const SeedConfig cfg = tiny_seed_config();
  ParamStore store;
  Rng rng(54);
  SeedParams p = declare_seed(store, "seed", cfg, rng);
  const Mat f_seed = random_mat(2, cfg.feature_dim, rng);
  const Mat f_obs = random_mat(3, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  Value f_seed_v = tape.constant(f_seed);
  Value f_obs_v = tape.constant(f_obs);
  const Mat got = tape.value(ground_seeds(ctx, p, f_seed_v, f_obs_v));
  const Mat want = tape.value(attention_apply(ctx, p.ground_attn, f_seed_v, f_obs_v));
  REQUIRE(got.same_shape(want));
  for (std::size_t k = 0; k < want.size(); ++k) CHECK(got[k] == want[k]);
}

TEST_CASE("coarse_points maps the stacked features row by row") {
  const SeedConfig cfg = tiny_seed_config();
  ParamStore store;
  Rng rng(55);
  SeedParams p = declare_seed(store, "seed", cfg, rng);
  const Mat fused = random_mat(1, cfg.feature_dim, rng);
  const Mat f_seed = random_mat(cfg.coarse_count, cfg.feature_dim, rng);
  const Mat f_grounded = random_mat(cfg.coarse_count, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const Mat got = tape.value(coarse_points(ctx, p, cfg, tape.constant(fused),
                                           tape.constant(f_seed), tape.constant(f_grounded)));
  REQUIRE(got.same_shape(Mat(cfg.coarse_count, 3)));

  for (int i = 0; i < cfg.coarse_count; ++i) {
    std::vector<double> x;
    for (int c = 0; c < cfg.feature_dim; ++c) x.push_back(fused(0, c));
    for (int c = 0; c < cfg.feature_dim; ++c) x.push_back(f_seed(i, c));
    for (int c = 0; c < cfg.feature_dim; ++c) x.push_back(f_grounded(i, c));
    const std::vector<double> want = mlp_row(store, p.coarse, x);
    for (int c = 0; c < 3; ++c) CHECK(got(i, c) == doctest::Approx(want[c]).epsilon(1e-12));
  }
}

TEST_CASE("dual_source_assoc matches hand-rolled inverse distance weighting") {
  ParamStore store;
  Rng rng(56);
  const int d = 4;
  const int k = 2;
  EncodedSet enc;
  enc.centers = random_mat(6, 3, rng);
  const Mat obs_feats = random_mat(6, d, rng);
  const Mat grounded = random_mat(5, d, rng);
  const Mat query_pts = random_mat(4, 3, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  enc.feats = tape.constant(obs_feats);
  const Mat got = tape.value(dual_source_assoc(ctx, tape.constant(query_pts), enc,
                                               tape.constant(grounded), k, false));
  REQUIRE(got.same_shape(Mat(4, 2 * d)));

  // Spatial pass: interpolate observation features at each query point.
  Mat f_obs_ref(4, d);
  const NeighborSet spatial = knn(query_pts, enc.centers, k);
  for (int i = 0; i < 4; ++i) {
    double wsum = 0.0;
    std::vector<double> acc(d, 0.0);
    for (int e = 0; e < k; ++e) {
      const double w = 1.0 / (spatial.distances(i, e) + 1e-8);
      const int j = spatial.indices[std::size_t(i) * k + e];
      wsum += w;
      for (int c = 0; c < d; ++c) acc[c] += w * obs_feats(j, c);
    }
    for (int c = 0; c < d; ++c) f_obs_ref(i, c) = acc[c] / wsum;
  }
  // Feature pass: nearest grounded rows in feature space, same weighting.
  const NeighborSet feat_nbr = knn(f_obs_ref, grounded, k);
  for (int i = 0; i < 4; ++i) {
    double wsum = 0.0;
    std::vector<double> acc(d, 0.0);
    for (int e = 0; e < k; ++e) {
      const double w = 1.0 / (feat_nbr.distances(i, e) + 1e-8);
      const int j = feat_nbr.indices[std::size_t(i) * k + e];
      wsum += w;
      for (int c = 0; c < d; ++c) acc[c] += w * grounded(j, c);
    }
    for (int c = 0; c < d; ++c) {
      CHECK(got(i, c) == doctest::Approx(f_obs_ref(i, c)).epsilon(1e-11));
      CHECK(got(i, d + c) == doctest::Approx(acc[c] / wsum).epsilon(1e-11));
    }
  }
}

TEST_CASE("dual_source_assoc duplicates the spatial half when the prior source is off") {
  ParamStore store;
  Rng rng(57);
  const int d = 4;
  EncodedSet enc;
  enc.centers = random_mat(6, 3, rng);
  const Mat obs_feats = random_mat(6, d, rng);
  const Mat grounded = random_mat(5, d, rng);
  const Mat query_pts = random_mat(4, 3, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  enc.feats = tape.constant(obs_feats);
  const Mat got = tape.value(dual_source_assoc(ctx, tape.constant(query_pts), enc,
                                               tape.constant(grounded), 2, true));
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < d; ++c) CHECK(got(i, c) == got(i, d + c));
}

TEST_CASE("cssc with k=1 adds the nearest context value onto the projected query") {
  GrbConfig cfg = tiny_grb_config();
  cfg.k_neighbors = 1;
  ParamStore store;
  Rng rng(58);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  const int d = cfg.feature_dim;
  const Mat query_pts = random_mat(3, 3, rng);
  const Mat ctx_pts = random_mat(4, 3, rng);
  const Mat ctx_feats = random_mat(4, d, rng);
  const Mat f_assoc = random_mat(3, 2 * d, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  GrbState state{tape.constant(ctx_pts), tape.constant(ctx_feats)};
  const Mat got =
      tape.value(cssc(ctx, p, tape.constant(query_pts), tape.constant(f_assoc), state, cfg));

  const NeighborSet nbr = knn(query_pts, ctx_pts, 1);
  for (int i = 0; i < 3; ++i) {
    const std::vector<double> fq =
        linear_row(store.tensor(p.query.weight), store.tensor(p.query.bias), mat_row(f_assoc, i));
    const std::vector<double> val =
        linear_row(store.tensor(p.value.weight), store.tensor(p.value.bias),
                   mat_row(ctx_feats, nbr.indices[std::size_t(i)]));
    for (int c = 0; c < d; ++c)
      CHECK(got(i, c) == doctest::Approx(fq[c] + val[c]).epsilon(1e-11));
  }
}

TEST_CASE("cssc with a zeroed logit head weights all neighbors equally") {
  const GrbConfig cfg = tiny_grb_config();
  ParamStore store;
  Rng rng(59);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  for (const LinearParams& l : p.weight.layers) zero_tensor(store, l.weight);
  const int d = cfg.feature_dim;
  const Mat query_pts = random_mat(3, 3, rng);
  const Mat ctx_pts = random_mat(5, 3, rng);
  const Mat ctx_feats = random_mat(5, d, rng);
  const Mat f_assoc = random_mat(3, 2 * d, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  GrbState state{tape.constant(ctx_pts), tape.constant(ctx_feats)};
  const Mat got =
      tape.value(cssc(ctx, p, tape.constant(query_pts), tape.constant(f_assoc), state, cfg));

  const NeighborSet nbr = knn(query_pts, ctx_pts, cfg.k_neighbors);
  for (int i = 0; i < 3; ++i) {
    const std::vector<double> fq =
        linear_row(store.tensor(p.query.weight), store.tensor(p.query.bias), mat_row(f_assoc, i));
    std::vector<double> mean_val(d, 0.0);
    for (int e = 0; e < cfg.k_neighbors; ++e) {
      const std::vector<double> val = linear_row(
          store.tensor(p.value.weight), store.tensor(p.value.bias),
          mat_row(ctx_feats, nbr.indices[std::size_t(i) * cfg.k_neighbors + e]));
      for (int c = 0; c < d; ++c) mean_val[c] += val[c] / cfg.k_neighbors;
    }
    for (int c = 0; c < d; ++c)
      CHECK(got(i, c) == doctest::Approx(fq[c] + mean_val[c]).epsilon(1e-11));
  }
}

TEST_CASE("cssc matches a full plain-loop reference") {
  const GrbConfig cfg = tiny_grb_config();
  ParamStore store;
  Rng rng(60);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  const int d = cfg.feature_dim;
  const int k = cfg.k_neighbors;
  const Mat query_pts = random_mat(2, 3, rng);
  const Mat ctx_pts = random_mat(3, 3, rng);
  const Mat ctx_feats = random_mat(3, d, rng);
  const Mat f_assoc = random_mat(2, 2 * d, rng);

  Tape tape;
  Binder binder(store, tape);
  ForwardProbe probe;
  Ctx ctx{binder, &probe};
  GrbState state{tape.constant(ctx_pts), tape.constant(ctx_feats)};
  const Mat got =
      tape.value(cssc(ctx, p, tape.constant(query_pts), tape.constant(f_assoc), state, cfg));
  CHECK(probe.attention_rows_seen == 2);
  CHECK(probe.max_attention_row_error < 1e-12);

  const NeighborSet nbr = knn(query_pts, ctx_pts, k);
  for (int i = 0; i < 2; ++i) {
    const std::vector<double> fq =
        linear_row(store.tensor(p.query.weight), store.tensor(p.query.bias), mat_row(f_assoc, i));
    std::vector<double> logits(k);
    std::vector<std::vector<double>> vals(k);
    for (int e = 0; e < k; ++e) {
      const int j = nbr.indices[std::size_t(i) * k + e];
      std::vector<double> rel{query_pts(i, 0) - ctx_pts(j, 0), query_pts(i, 1) - ctx_pts(j, 1),
                              query_pts(i, 2) - ctx_pts(j, 2)};
      const std::vector<double> pos_code = mlp_row(store, p.pos, rel);
      const std::vector<double> key =
          linear_row(store.tensor(p.key.weight), store.tensor(p.key.bias), mat_row(ctx_feats, j));
      std::vector<double> mix(d);
      for (int c = 0; c < d; ++c) mix[c] = fq[c] - key[c] + pos_code[c];
      logits[e] = mlp_row(store, p.weight, mix)[0];
      vals[e] = linear_row(store.tensor(p.value.weight), store.tensor(p.value.bias),
                           mat_row(ctx_feats, j));
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - max_logit);
      z += l;
    }
    for (int c = 0; c < d; ++c) {
      double acc = fq[c];
      for (int e = 0; e < k; ++e) acc += logits[e] / z * vals[e][c];
      CHECK(got(i, c) == doctest::Approx(acc).epsilon(1e-11));
    }
  }
}

TEST_CASE("cssc rejects k above the context size") {
  GrbConfig cfg = tiny_grb_config();
  cfg.k_neighbors = 9;
  ParamStore store;
  Rng rng(61);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  GrbState state{tape.constant(random_mat(3, 3, rng)),
                 tape.constant(random_mat(3, cfg.feature_dim, rng))};
  CHECK_THROWS_AS(cssc(ctx, p, tape.constant(random_mat(2, 3, rng)),
                       tape.constant(random_mat(2, 2 * cfg.feature_dim, rng)), state, cfg),
                  InputError);
}

TEST_CASE("upsample lays children out point-major") {
  const GrbConfig cfg = tiny_grb_config();
  ParamStore store;
  Rng rng(62);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  REQUIRE(p.displace.layers.size() == 1);
  const Mat points = random_mat(2, 3, rng);
  const Mat f_ctx = random_mat(2, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const Mat got = tape.value(
      upsample(ctx, p, tape.constant(points), tape.constant(f_ctx), cfg.upsample_rate));
  REQUIRE(got.same_shape(Mat(4, 3)));

  for (int i = 0; i < 2; ++i) {
    const std::vector<double> disp = linear_row(store.tensor(p.displace.layers[0].weight),
                                                store.tensor(p.displace.layers[0].bias),
                                                mat_row(f_ctx, i));
    REQUIRE(disp.size() == 6);
    for (int child = 0; child < 2; ++child)
      for (int c = 0; c < 3; ++c)
        CHECK(got(2 * i + child, c) ==
              doctest::Approx(points(i, c) + disp[std::size_t(3 * child + c)]).epsilon(1e-12));
  }
}

TEST_CASE("zero displacement head replicates each point exactly") {
  const GrbConfig cfg = tiny_grb_config();
  ParamStore store;
  Rng rng(63);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  for (const LinearParams& l : p.displace.layers) zero_tensor(store, l.weight);
  const Mat points = random_mat(3, 3, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const Mat got =
      tape.value(upsample(ctx, p, tape.constant(points),
                          tape.constant(random_mat(3, cfg.feature_dim, rng)), cfg.upsample_rate));
  for (int i = 0; i < 3; ++i)
    for (int child = 0; child < 2; ++child)
      for (int c = 0; c < 3; ++c) CHECK(got(2 * i + child, c) == points(i, c));
}

TEST_CASE("grb_forward composes assoc, context and upsampling") {
  const GrbConfig cfg = tiny_grb_config();
  ParamStore store;
  Rng rng(64);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  EncodedSet enc;
  enc.centers = random_mat(6, 3, rng);
  const Mat obs_feats = random_mat(6, cfg.feature_dim, rng);
  const Mat grounded = random_mat(5, cfg.feature_dim, rng);
  const Mat points = random_mat(3, 3, rng);
  const Mat ctx_pts = random_mat(4, 3, rng);
  const Mat ctx_feats = random_mat(4, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  enc.feats = tape.constant(obs_feats);
  Value points_v = tape.constant(points);
  Value grounded_v = tape.constant(grounded);
  GrbState state{tape.constant(ctx_pts), tape.constant(ctx_feats)};

  const GrbOutput out =
      grb_forward(ctx, p, points_v, enc, grounded_v, state, cfg, false, false);
  const Mat got_points = tape.value(out.points);
  const Mat got_state_feats = tape.value(out.state.ctx_feats);

  Value f_assoc = dual_source_assoc(ctx, points_v, enc, grounded_v, cfg.k_neighbors, false);
  Value f_ctx = cssc(ctx, p, points_v, f_assoc, state, cfg);
  const Mat want_feats = tape.value(f_ctx);
  const Mat want_points = tape.value(upsample(ctx, p, points_v, f_ctx, cfg.upsample_rate));

  REQUIRE(got_points.same_shape(want_points));
  for (std::size_t k = 0; k < want_points.size(); ++k)
    CHECK(got_points[k] == doctest::Approx(want_points[k]).epsilon(1e-12));
  for (std::size_t k = 0; k < want_feats.size(); ++k)
    CHECK(got_state_feats[k] == doctest::Approx(want_feats[k]).epsilon(1e-12));
  // The state handed to the next block keeps this block's input resolution.
  const Mat state_pts = tape.value(out.state.ctx_points);
  REQUIRE(state_pts.same_shape(points));
  for (std::size_t k = 0; k < points.size(); ++k) CHECK(state_pts[k] == points[k]);
}

TEST_CASE("grb_forward honors a precomputed association") {
  const GrbConfig cfg = tiny_grb_config();
  ParamStore store;
  Rng rng(65);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  EncodedSet enc;
  enc.centers = random_mat(6, 3, rng);
  const Mat obs_feats = random_mat(6, cfg.feature_dim, rng);
  const Mat grounded = random_mat(5, cfg.feature_dim, rng);
  const Mat points = random_mat(3, 3, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  enc.feats = tape.constant(obs_feats);
  Value points_v = tape.constant(points);
  Value grounded_v = tape.constant(grounded);
  GrbState state{tape.constant(random_mat(4, 3, rng)),
                 tape.constant(random_mat(4, cfg.feature_dim, rng))};

  Value assoc = dual_source_assoc(ctx, points_v, enc, grounded_v, cfg.k_neighbors, false);
  const GrbOutput with_pre =
      grb_forward(ctx, p, points_v, enc, grounded_v, state, cfg, false, false, assoc);
  const Mat a = tape.value(with_pre.points);
  const GrbOutput without =
      grb_forward(ctx, p, points_v, enc, grounded_v, state, cfg, false, false);
  const Mat b = tape.value(without.points);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
}

TEST_CASE("structure-aware suppression bypasses the context attention") {
  const GrbConfig cfg = tiny_grb_config();
  ParamStore store;
  Rng rng(66);
  GrbParams p = declare_grb(store, "grb", cfg, rng);
  EncodedSet enc;
  enc.centers = random_mat(6, 3, rng);
  const Mat obs_feats = random_mat(6, cfg.feature_dim, rng);
  const Mat grounded = random_mat(5, cfg.feature_dim, rng);
  const Mat points = random_mat(3, 3, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  enc.feats = tape.constant(obs_feats);
  Value points_v = tape.constant(points);
  Value grounded_v = tape.constant(grounded);
  GrbState state{tape.constant(random_mat(4, 3, rng)),
                 tape.constant(random_mat(4, cfg.feature_dim, rng))};

  const GrbOutput out =
      grb_forward(ctx, p, points_v, enc, grounded_v, state, cfg, false, true);
  const Mat got = tape.value(out.state.ctx_feats);

  Value assoc = dual_source_assoc(ctx, points_v, enc, grounded_v, cfg.k_neighbors, false);
  const Mat want = tape.value(linear_apply(ctx, p.query, assoc));
  REQUIRE(got.same_shape(want));
  for (std::size_t k = 0; k < want.size(); ++k)
    CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
}

TEST_CASE("seed and refinement gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    {
      const SeedConfig cfg = tiny_seed_config();
      ParamStore store;
      Rng rng(seed);
      SeedParams p = declare_seed(store, "seed", cfg, rng);
      Rng data_rng(seed + 400);
      const Mat f_gen = random_mat(3, cfg.feature_dim, data_rng);
      const Mat f_obs = random_mat(5, cfg.feature_dim, data_rng);
      auto res = grad_check(store, [&](Binder& binder) {
        Ctx ctx{binder};
        Tape& t = binder.tape();
        Value f_gen_v = t.constant(f_gen);
        Value f_obs_v = t.constant(f_obs);
        Value fused = fuse_global(ctx, p, cfg, f_gen_v, f_obs_v);
        Value f_seed = expand_seeds(ctx, p, cfg, fused);
        Value f_grounded = ground_seeds(ctx, p, f_seed, f_obs_v);
        return t.mean_all(coarse_points(ctx, p, cfg, fused, f_seed, f_grounded));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4,
                    "seed stage seed " << seed << " worst " << res.worst_entry);
    }
    {
      const GrbConfig cfg = tiny_grb_config();
      ParamStore store;
      Rng rng(seed);
      GrbParams p = declare_grb(store, "grb", cfg, rng);
      Rng data_rng(seed + 500);
      EncodedSet enc;
      enc.centers = random_mat(6, 3, data_rng);
      const Mat obs_feats = random_mat(6, cfg.feature_dim, data_rng);
      const Mat grounded = random_mat(5, cfg.feature_dim, data_rng);
      const Mat points = random_mat(3, 3, data_rng);
      const Mat ctx_pts = random_mat(4, 3, data_rng);
      const Mat ctx_feats = random_mat(4, cfg.feature_dim, data_rng);
      auto res = grad_check(store, [&](Binder& binder) {
        Ctx ctx{binder};
        Tape& t = binder.tape();
        EncodedSet enc_local = enc;
        enc_local.feats = t.constant(obs_feats);
        GrbState state{t.constant(ctx_pts), t.constant(ctx_feats)};
        const GrbOutput out = grb_forward(ctx, p, t.constant(points), enc_local,
                                          t.constant(grounded), state, cfg, false, false);
        return t.mean_all(out.points);
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "grb seed " << seed << " worst " << res.worst_entry);
    }
  }
}
