#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pgnet/encoders.hpp"
#include "pgnet/errors.hpp"
#include "pgnet/grad_check.hpp"
#include "pgnet/params.hpp"
#include "pgnet/rng.hpp"

using namespace pgnet;

namespace {

Mat random_cloud(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat m(n, 3);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.uniform(lo, hi);
  return m;
}

Mat random_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.uniform(-1.0, 1.0);
  return m;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.center_count = 4;
  cfg.feature_dim = 8;
  cfg.k_local = 3;
  cfg.attention_heads = 2;
  return cfg;
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

// Reference edge convolution: for each center, run every neighbor edge
// [f_nbr - f_ctr, f_ctr] through the layer, relu, and take the feature-wise
// max over the center's edges.
Mat edge_conv_ref(const Mat& w, const Mat& b, const Mat& center_feats, const Mat& source_feats,
                  const NeighborSet& nbr) {
  Mat out(center_feats.rows(), w.cols());
  for (int i = 0; i < center_feats.rows(); ++i) {
    std::vector<double> best(w.cols(), -1e300);
    for (int e = 0; e < nbr.k; ++e) {
      const int j = nbr.indices[std::size_t(i) * nbr.k + e];
      std::vector<double> edge(2 * center_feats.cols());
      for (int c = 0; c < center_feats.cols(); ++c) {
        edge[c] = source_feats(j, c) - center_feats(i, c);
        edge[center_feats.cols() + c] = center_feats(i, c);
      }
      const std::vector<double> h = relu_row(linear_row(w, b, edge));
      for (int c = 0; c < w.cols(); ++c) best[c] = std::max(best[c], h[c]);
    }
    for (int c = 0; c < w.cols(); ++c) out(i, c) = best[c];
  }
  return out;
}

}  // namespace

TEST_CASE("encode_local matches a plain-loop reference") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(31);
  const MlpParams pos = declare_pos_embed(store, "pos", cfg.feature_dim, rng);
  const LocalEncoderParams enc = declare_local_encoder(store, "enc", cfg.feature_dim, rng);
  Rng data_rng(32);
  const Mat cloud = random_cloud(12, data_rng);

  // Reference path, reusing the deterministic knn/fps primitives as inputs.
  const NeighborSet point_nbr = knn(cloud, cloud, cfg.k_local);
  const Mat point_feats = edge_conv_ref(store.tensor(enc.edge0.weight),
                                        store.tensor(enc.edge0.bias), cloud, cloud, point_nbr);
  const std::vector<int> fps =
      farthest_point_sample(cloud, cfg.center_count, centroid_seed(cloud));
  Mat centers(cfg.center_count, 3);
  Mat center_feats(cfg.center_count, point_feats.cols());
  for (int i = 0; i < cfg.center_count; ++i) {
    for (int c = 0; c < 3; ++c) centers(i, c) = cloud(fps[i], c);
    for (int c = 0; c < point_feats.cols(); ++c) center_feats(i, c) = point_feats(fps[i], c);
  }
  const NeighborSet center_nbr = knn(centers, cloud, cfg.k_local);
  const Mat local = edge_conv_ref(store.tensor(enc.edge1.weight), store.tensor(enc.edge1.bias),
                                  center_feats, point_feats, center_nbr);
  Mat want = local;
  for (int i = 0; i < cfg.center_count; ++i) {
    std::vector<double> x{centers(i, 0), centers(i, 1), centers(i, 2)};
    const std::vector<double> hidden = relu_row(linear_row(
        store.tensor(pos.layers[0].weight), store.tensor(pos.layers[0].bias), x));
    const std::vector<double> embed =
        linear_row(store.tensor(pos.layers[1].weight), store.tensor(pos.layers[1].bias), hidden);
    for (int c = 0; c < want.cols(); ++c) want(i, c) += embed[c];
  }

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const EncodedSet got = encode_local(ctx, cloud, cfg, enc, pos);
  REQUIRE(got.centers.same_shape(centers));
  for (std::size_t k = 0; k < centers.size(); ++k) CHECK(got.centers[k] == centers[k]);
  const Mat& feats = tape.value(got.feats);
  REQUIRE(feats.same_shape(want));
  for (std::size_t k = 0; k < want.size(); ++k)
    CHECK(feats[k] == doctest::Approx(want[k]).epsilon(1e-12));
}

TEST_CASE("encode_local is invariant to input row order") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(33);
  const MlpParams pos = declare_pos_embed(store, "pos", cfg.feature_dim, rng);
  const LocalEncoderParams enc = declare_local_encoder(store, "enc", cfg.feature_dim, rng);
  const Mat cloud = random_cloud(16, rng);
  Mat shuffled(16, 3);
  std::vector<int> perm(16);
  for (int i = 0; i < 16; ++i) perm[i] = (i * 7 + 3) % 16;
  for (int i = 0; i < 16; ++i)
    for (int c = 0; c < 3; ++c) shuffled(i, c) = cloud(perm[i], c);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const EncodedSet a = encode_local(ctx, cloud, cfg, enc, pos);
  const EncodedSet b = encode_local(ctx, shuffled, cfg, enc, pos);

  // FPS seeds from the geometric centroid, so the selected centers and their
  // features only depend on the point set, not on row order.
  for (std::size_t k = 0; k < a.centers.size(); ++k) CHECK(a.centers[k] == b.centers[k]);
  const Mat fa = tape.value(a.feats);
  const Mat fb = tape.value(b.feats);
  for (std::size_t k = 0; k < fa.size(); ++k) CHECK(fa[k] == doctest::Approx(fb[k]).epsilon(1e-12));
}

TEST_CASE("encode_local on a degenerate all-equal cloud stays finite and uniform") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(34);
  const MlpParams pos = declare_pos_embed(store, "pos", cfg.feature_dim, rng);
  const LocalEncoderParams enc = declare_local_encoder(store, "enc", cfg.feature_dim, rng);
  Mat cloud(10, 3);
  for (int i = 0; i < 10; ++i) {
    cloud(i, 0) = 0.25;
    cloud(i, 1) = -0.5;
    cloud(i, 2) = 0.125;
  }

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const EncodedSet got = encode_local(ctx, cloud, cfg, enc, pos);
  const Mat& feats = tape.value(got.feats);
  for (int i = 0; i < cfg.center_count; ++i) {
    CHECK(got.centers(i, 0) == 0.25);
    CHECK(got.centers(i, 1) == -0.5);
    CHECK(got.centers(i, 2) == 0.125);
    for (int c = 0; c < feats.cols(); ++c) {
      CHECK(std::isfinite(feats(i, c)));
      CHECK(feats(i, c) == feats(0, c));
    }
  }
}

TEST_CASE("encode_local centers cover a line of points") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(35);
  const MlpParams pos = declare_pos_embed(store, "pos", cfg.feature_dim, rng);
  const LocalEncoderParams enc = declare_local_encoder(store, "enc", cfg.feature_dim, rng);
  Mat cloud(64, 3);
  for (int i = 0; i < 64; ++i) {
    const double s = double(i) / 63.0;
    cloud(i, 0) = s;
    cloud(i, 1) = s;
    cloud(i, 2) = s;
  }

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const EncodedSet got = encode_local(ctx, cloud, cfg, enc, pos);

  // Every center is one of the input points, and greedy max-min selection
  // keeps the worst gap along the segment below a quarter of its length.
  const double line_len = std::sqrt(3.0);
  for (int i = 0; i < cfg.center_count; ++i) {
    const double s = got.centers(i, 0);
    CHECK(got.centers(i, 1) == s);
    CHECK(got.centers(i, 2) == s);
  }
  const NeighborSet nearest = knn(cloud, got.centers, 1);
  double worst = 0.0;
  for (int i = 0; i < 64; ++i) worst = std::max(worst, nearest.distances(i, 0));
  CHECK(worst < line_len / 4.0);
}

TEST_CASE("encode_local rejects clouds smaller than the center count") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(36);
  const MlpParams pos = declare_pos_embed(store, "pos", cfg.feature_dim, rng);
  const LocalEncoderParams enc = declare_local_encoder(store, "enc", cfg.feature_dim, rng);
  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const Mat tiny = random_cloud(3, rng);
  CHECK_THROWS_AS(encode_local(ctx, tiny, cfg, enc, pos), InputError);
}

TEST_CASE("salient transform local branch matches a plain-loop reference") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(37);
  SalientParams sal = declare_salient(store, "sal", cfg, rng);
  // Zero the gate so the output is exactly the midpoint of the two branches
  // and the local branch can be recovered from it.
  for (const LinearParams& l : sal.gate.mlp.layers) {
    Mat& w = store.tensor(l.weight);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = 0.0;
  }

  Rng data_rng(38);
  const Mat centers = random_cloud(6, data_rng);
  const Mat f_obs = random_mat(6, cfg.feature_dim, data_rng);

  // One linear layer and no trailing relu, so negative patterns are kept.
  Mat patterns(6, cfg.feature_dim);
  for (int i = 0; i < 6; ++i) {
    std::vector<double> row(cfg.feature_dim);
    for (int c = 0; c < cfg.feature_dim; ++c) row[c] = f_obs(i, c);
    const std::vector<double> mapped = linear_row(
        store.tensor(sal.local.layers[0].weight), store.tensor(sal.local.layers[0].bias), row);
    for (int c = 0; c < cfg.feature_dim; ++c) patterns(i, c) = mapped[c];
  }
  const NeighborSet nbr = knn(centers, centers, cfg.k_local);
  Mat local_want(6, cfg.feature_dim);
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < cfg.feature_dim; ++c) {
      double best = -1e300;
      for (int e = 0; e < nbr.k; ++e)
        best = std::max(best, patterns(nbr.indices[std::size_t(i) * nbr.k + e], c));
      local_want(i, c) = best;
    }

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  Value f_obs_v = tape.constant(f_obs);
  const Mat fused = tape.value(salient_transform(ctx, f_obs_v, centers, cfg, sal));
  const Mat global_branch = tape.value(attention_apply(ctx, sal.attn, f_obs_v, f_obs_v));
  for (std::size_t k = 0; k < fused.size(); ++k) {
    const double local_got = 2.0 * fused[k] - global_branch[k];
    CHECK(local_got == doctest::Approx(local_want[k]).epsilon(1e-11));
  }
}

TEST_CASE("salient transform single-layer pattern mlp ends without relu") {
  // The local branch MLP is one linear layer, so negative pattern values
  // must survive into the max-pooling.
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(39);
  SalientParams sal = declare_salient(store, "sal", cfg, rng);
  REQUIRE(sal.local.layers.size() == 1);
}

TEST_CASE("salient transform is equivariant to center permutation") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(40);
  SalientParams sal = declare_salient(store, "sal", cfg, rng);
  const Mat centers = random_cloud(7, rng);
  const Mat f_obs = random_mat(7, cfg.feature_dim, rng);

  const int perm[7] = {5, 0, 3, 6, 1, 4, 2};
  Mat centers_p(7, 3);
  Mat f_obs_p(7, cfg.feature_dim);
  for (int i = 0; i < 7; ++i) {
    for (int c = 0; c < 3; ++c) centers_p(i, c) = centers(perm[i], c);
    for (int c = 0; c < cfg.feature_dim; ++c) f_obs_p(i, c) = f_obs(perm[i], c);
  }

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  const Mat base = tape.value(salient_transform(ctx, tape.constant(f_obs), centers, cfg, sal));
  const Mat& moved =
      tape.value(salient_transform(ctx, tape.constant(f_obs_p), centers_p, cfg, sal));
  for (int i = 0; i < 7; ++i)
    for (int c = 0; c < cfg.feature_dim; ++c)
      CHECK(moved(i, c) == doctest::Approx(base(perm[i], c)).epsilon(1e-11));
}

TEST_CASE("grounding transform with the cross branch suppressed returns the self branch") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(41);
  GroundingParams grounding = declare_grounding(store, "gnd", cfg, rng);
  const Mat f_gen = random_mat(5, cfg.feature_dim, rng);
  const Mat f_obs = random_mat(6, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  Value f_gen_v = tape.constant(f_gen);
  const Mat suppressed =
      tape.value(grounding_transform(ctx, f_gen_v, tape.constant(f_obs), grounding, true));
  const Mat self_branch = tape.value(attention_apply(ctx, grounding.self_attn, f_gen_v, f_gen_v));
  REQUIRE(suppressed.same_shape(self_branch));
  for (std::size_t k = 0; k < suppressed.size(); ++k)
    CHECK(suppressed[k] == doctest::Approx(self_branch[k]).epsilon(1e-13));
}

TEST_CASE("grounding transform uses the observation features when enabled") {
  const EncoderConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(42);
  GroundingParams grounding = declare_grounding(store, "gnd", cfg, rng);
  const Mat f_gen = random_mat(5, cfg.feature_dim, rng);
  const Mat f_obs_a = random_mat(6, cfg.feature_dim, rng);
  const Mat f_obs_b = random_mat(6, cfg.feature_dim, rng);

  Tape tape;
  Binder binder(store, tape);
  Ctx ctx{binder};
  Value f_gen_v = tape.constant(f_gen);
  const Mat& out_a =
      tape.value(grounding_transform(ctx, f_gen_v, tape.constant(f_obs_a), grounding, false));
  const Mat& out_b =
      tape.value(grounding_transform(ctx, f_gen_v, tape.constant(f_obs_b), grounding, false));
  double diff = 0.0;
  for (std::size_t k = 0; k < out_a.size(); ++k) diff = std::max(diff, std::abs(out_a[k] - out_b[k]));
  CHECK(diff > 0.0);
}

TEST_CASE("encoder gradients match finite differences") {
  const EncoderConfig cfg = tiny_config();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    {
      ParamStore store;
      Rng rng(seed);
      const MlpParams pos = declare_pos_embed(store, "pos", cfg.feature_dim, rng);
      const LocalEncoderParams enc = declare_local_encoder(store, "enc", cfg.feature_dim, rng);
      Rng data_rng(seed + 100);
      const Mat cloud = random_cloud(10, data_rng);
      auto res = grad_check(store, [&](Binder& binder) {
        Ctx ctx{binder};
        const EncodedSet set = encode_local(ctx, cloud, cfg, enc, pos);
        return binder.tape().mean_all(set.feats);
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4,
                    "encode_local seed " << seed << " worst " << res.worst_entry);
    }
    {
      ParamStore store;
      Rng rng(seed);
      SalientParams sal = declare_salient(store, "sal", cfg, rng);
      Rng data_rng(seed + 200);
      const Mat centers = random_cloud(6, data_rng);
      const Mat f_obs = random_mat(6, cfg.feature_dim, data_rng);
      auto res = grad_check(store, [&](Binder& binder) {
        Ctx ctx{binder};
        return binder.tape().mean_all(
            salient_transform(ctx, binder.tape().constant(f_obs), centers, cfg, sal));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "salient seed " << seed << " worst " << res.worst_entry);
    }
    {
      ParamStore store;
      Rng rng(seed);
      GroundingParams grounding = declare_grounding(store, "gnd", cfg, rng);
      Rng data_rng(seed + 300);
      const Mat f_gen = random_mat(5, cfg.feature_dim, data_rng);
      const Mat f_obs = random_mat(6, cfg.feature_dim, data_rng);
      auto res = grad_check(store, [&](Binder& binder) {
        Ctx ctx{binder};
        Tape& t = binder.tape();
        return t.mean_all(
            grounding_transform(ctx, t.constant(f_gen), t.constant(f_obs), grounding, false));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-6,
                    "grounding seed " << seed << " worst " << res.worst_entry);
    }
  }
}
