#include "pgnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pgnet/errors.hpp"

namespace pgnet {

namespace {

double sq_dist(const double* a, const double* b, int dims) {
  double acc = 0.0;
  for (int d = 0; d < dims; ++d) {
    const double diff = a[d] - b[d];
    acc += diff * diff;
  }
  return acc;
}

double l1_dist(const double* a, const double* b, int dims) {
  double acc = 0.0;
  for (int d = 0; d < dims; ++d) acc += std::fabs(a[d] - b[d]);
  return acc;
}

// Nearest row of ref to each row of a under the given metric; ties to lowest
// index.
template <typename Metric>
std::vector<int> nearest_indices(const Mat& a, const Mat& ref, Metric metric) {
  std::vector<int> out(a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (int j = 0; j < ref.rows(); ++j) {
      const double d = metric(a.row(i), ref.row(j), a.cols());
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    if (best_j < 0)
      throw NumericalError("nearest-point search: no finite distance, coordinates diverged");
    out[i] = best_j;
  }
  return out;
}

bool all_finite(const Mat& m) {
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!std::isfinite(m[i])) return false;
  return true;
}

}  // namespace

std::vector<int> farthest_point_sample(const Mat& cloud, int m, int seed_index) {
  const int n = cloud.rows();
  if (n < 1) throw InputError("farthest_point_sample: empty cloud");
  if (m < 1 || m > n)
    throw InputError("farthest_point_sample: m=" + std::to_string(m) + " out of range for " +
                     std::to_string(n) + " points");
  if (seed_index < 0 || seed_index >= n)
    throw InputError("farthest_point_sample: seed index out of range");

  std::vector<int> chosen;
  chosen.reserve(m);
  chosen.push_back(seed_index);
  std::vector<double> min_sq(n, std::numeric_limits<double>::infinity());
  int last = seed_index;
  while (static_cast<int>(chosen.size()) < m) {
    double best = -1.0;
    int best_i = -1;
    for (int i = 0; i < n; ++i) {
      const double d = sq_dist(cloud.row(i), cloud.row(last), 3);
      if (d < min_sq[i]) min_sq[i] = d;
      if (min_sq[i] > best) {
        best = min_sq[i];
        best_i = i;
      }
    }
    chosen.push_back(best_i);
    last = best_i;
  }
  return chosen;
}

int centroid_seed(const Mat& cloud) {
  if (cloud.rows() < 1) throw InputError("centroid_seed: empty cloud");
  double cx = 0.0, cy = 0.0, cz = 0.0;
  for (int i = 0; i < cloud.rows(); ++i) {
    cx += cloud(i, 0);
    cy += cloud(i, 1);
    cz += cloud(i, 2);
  }
  const double inv_n = 1.0 / cloud.rows();
  const double centroid[3] = {cx * inv_n, cy * inv_n, cz * inv_n};
  double best = std::numeric_limits<double>::infinity();
  int best_i = 0;
  for (int i = 0; i < cloud.rows(); ++i) {
    const double d = sq_dist(cloud.row(i), centroid, 3);
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  return best_i;
}

NeighborSet knn(const Mat& query, const Mat& ref, int k) {
  if (ref.rows() < 1) throw InputError("knn: empty reference cloud");
  if (k < 1 || k > ref.rows())
    throw InputError("knn: k=" + std::to_string(k) + " out of range for " +
                     std::to_string(ref.rows()) + " reference points");
  if (query.cols() != ref.cols())
    throw InputError("knn: dimension mismatch " + query.shape_str() + " vs " + ref.shape_str());
  // NaN breaks the candidate ordering below, so fail loudly instead; the
  // only way coordinates go non-finite is a diverged model.
  if (!all_finite(query) || !all_finite(ref))
    throw NumericalError("knn: non-finite coordinates");

  NeighborSet out;
  out.k = k;
  out.indices.resize(std::size_t(query.rows()) * k);
  out.distances = Mat(query.rows(), k);
  std::vector<std::pair<double, int>> cand(ref.rows());
  for (int i = 0; i < query.rows(); ++i) {
    for (int j = 0; j < ref.rows(); ++j)
      cand[j] = {sq_dist(query.row(i), ref.row(j), query.cols()), j};
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int j = 0; j < k; ++j) {
      out.indices[std::size_t(i) * k + j] = cand[j].second;
      out.distances(i, j) = std::sqrt(cand[j].first);
    }
  }
  return out;
}

Mat idw_interp_spatial(const Mat& query, const Mat& centers, const Mat& feats, int k) {
  if (centers.rows() < 1) throw InputError("idw_interp_spatial: empty centers");
  if (feats.rows() != centers.rows())
    throw InputError("idw_interp_spatial: feature rows " + std::to_string(feats.rows()) +
                     " != centers " + std::to_string(centers.rows()));
  const NeighborSet nbr = knn(query, centers, k);
  Mat out(query.rows(), feats.cols());
  for (int i = 0; i < query.rows(); ++i) {
    double weight_sum = 0.0;
    for (int j = 0; j < k; ++j) weight_sum += 1.0 / (nbr.distances(i, j) + 1e-8);
    double* out_row = out.row(i);
    for (int j = 0; j < k; ++j) {
      const double w = 1.0 / (nbr.distances(i, j) + 1e-8) / weight_sum;
      const double* f = feats.row(nbr.index(i, j));
      for (int c = 0; c < feats.cols(); ++c) out_row[c] += w * f[c];
    }
  }
  return out;
}

Mat idw_interp_feature(const Mat& query_feats, const Mat& ref_feats, int k) {
  return idw_interp_spatial(query_feats, ref_feats, ref_feats, k);
}

double chamfer_l1(const Mat& a, const Mat& b) {
  if (a.rows() < 1 || b.rows() < 1) throw InputError("chamfer_l1: empty cloud");
  double term_a = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < b.rows(); ++j)
      best = std::min(best, l1_dist(a.row(i), b.row(j), 3));
    term_a += best;
  }
  double term_b = 0.0;
  for (int j = 0; j < b.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < a.rows(); ++i)
      best = std::min(best, l1_dist(b.row(j), a.row(i), 3));
    term_b += best;
  }
  return term_a / a.rows() + term_b / b.rows();
}

double chamfer_sq_l2(const Mat& a, const Mat& b) {
  if (a.rows() < 1 || b.rows() < 1) throw InputError("chamfer_sq_l2: empty cloud");
  double term_a = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < b.rows(); ++j)
      best = std::min(best, sq_dist(a.row(i), b.row(j), 3));
    term_a += best;
  }
  double term_b = 0.0;
  for (int j = 0; j < b.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < a.rows(); ++i)
      best = std::min(best, sq_dist(b.row(j), a.row(i), 3));
    term_b += best;
  }
  return term_a / a.rows() + term_b / b.rows();
}

double fscore(const Mat& pred, const Mat& gt, double tau) {
  if (pred.rows() < 1 || gt.rows() < 1) throw InputError("fscore: empty cloud");
  if (tau <= 0.0) throw InputError("fscore: tau must be positive");
  const double tau_sq = tau * tau;
  int hits_pred = 0;
  for (int i = 0; i < pred.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < gt.rows(); ++j)
      best = std::min(best, sq_dist(pred.row(i), gt.row(j), 3));
    if (best < tau_sq) ++hits_pred;
  }
  int hits_gt = 0;
  for (int j = 0; j < gt.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < pred.rows(); ++i)
      best = std::min(best, sq_dist(gt.row(j), pred.row(i), 3));
    if (best < tau_sq) ++hits_gt;
  }
  const double precision = double(hits_pred) / pred.rows();
  const double recall = double(hits_gt) / gt.rows();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

Value pairwise_distance_t(Tape& tape, Value a, Value b) {
  Value diff = tape.sub(a, b);
  Value sq = tape.mul(diff, diff);
  return tape.sqrt(tape.row_sum(sq));
}

Value chamfer_l1_t(Tape& tape, Value a, Value b) {
  const Mat& av = tape.value(a);
  const Mat& bv = tape.value(b);
  if (av.rows() < 1 || bv.rows() < 1) throw InputError("chamfer_l1: empty cloud");

  const std::vector<int> a_to_b = nearest_indices(av, bv, l1_dist);
  const std::vector<int> b_to_a = nearest_indices(bv, av, l1_dist);

  Value da = tape.sub(a, tape.gather_rows(b, a_to_b));
  Value term_a = tape.mean_all(tape.row_sum(tape.abs(da)));
  Value db = tape.sub(b, tape.gather_rows(a, b_to_a));
  Value term_b = tape.mean_all(tape.row_sum(tape.abs(db)));
  return tape.add(term_a, term_b);
}

namespace {

// Shared IDW body once neighbor indices are fixed: recompute the selected
// distances on tape so gradients reach both endpoints of each pair.
Value idw_gather_t(Tape& tape, Value query_space, Value ref_space, Value payload,
                   const NeighborSet& nbr) {
  const int q_rows = tape.value(query_space).rows();
  const int k = nbr.k;
  std::vector<int> flat_nbr(nbr.indices.begin(), nbr.indices.end());
  std::vector<int> owner(std::size_t(q_rows) * k);
  for (int i = 0; i < q_rows; ++i)
    for (int j = 0; j < k; ++j) owner[std::size_t(i) * k + j] = i;

  Value q_rep = tape.repeat_rows(query_space, k);
  Value r_sel = tape.gather_rows(ref_space, flat_nbr);
  Value dist = pairwise_distance_t(tape, q_rep, r_sel);
  Value weight = tape.reciprocal(tape.offset(dist, 1e-8));
  Value weight_sum = tape.group_sum(weight, owner, q_rows);
  Value norm = tape.mul(weight, tape.gather_rows(tape.reciprocal(weight_sum), owner));

  Value features = tape.gather_rows(payload, flat_nbr);
  Value weighted = tape.mul(tape.broadcast_cols(norm, tape.value(features).cols()), features);
  return tape.group_sum(weighted, owner, q_rows);
}

}  // namespace

Value idw_interp_spatial_t(Tape& tape, Value query, Value centers, Value feats, int k) {
  const NeighborSet nbr = knn(tape.value(query), tape.value(centers), k);
  return idw_gather_t(tape, query, centers, feats, nbr);
}

Value idw_interp_feature_t(Tape& tape, Value query_feats, Value ref_feats, Value payload, int k) {
  const NeighborSet nbr = knn(tape.value(query_feats), tape.value(ref_feats), k);
  return idw_gather_t(tape, query_feats, ref_feats, payload, nbr);
}

}  // namespace pgnet
