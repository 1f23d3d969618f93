#pragma once

#include <vector>

#include "pgnet/mat.hpp"
#include "pgnet/tape.hpp"

namespace pgnet {

// k nearest neighbors per query row. Rows sorted ascending by distance,
// ties broken by lowest reference index.
struct NeighborSet {
  int k = 0;
  std::vector<int> indices;  // row-major Q x k
  Mat distances;             // Q x k, Euclidean

  int index(int q, int j) const { return indices[std::size_t(q) * k + j]; }
};

// Greedy max-min subsampling. First pick is seed_index; each later pick
// maximizes the minimum distance to the chosen set, ties to lowest index.
std::vector<int> farthest_point_sample(const Mat& cloud, int m, int seed_index);

// Index of the point nearest the centroid, ties to lowest index. The
// canonical deterministic FPS seed.
int centroid_seed(const Mat& cloud);

// Exact brute-force kNN in Euclidean metric. Works for any column count, so
// it serves both 3-D clouds and D-dimensional feature sets.
NeighborSet knn(const Mat& query, const Mat& ref, int k);

// Inverse distance weighting with weights 1/(d + 1e-8), normalized. Spatial
// variant searches in coordinate space, feature variant in feature space and
// interpolates the reference rows themselves.
Mat idw_interp_spatial(const Mat& query, const Mat& centers, const Mat& feats, int k);
Mat idw_interp_feature(const Mat& query_feats, const Mat& ref_feats, int k);

// Symmetric L1 Chamfer distance: mean-over-a of min-over-b L1 distance plus
// the reverse term. Nearest neighbor is selected by the L1 distance itself.
double chamfer_l1(const Mat& a, const Mat& b);

// Squared-L2 Chamfer, reported alongside L1 in evaluation output.
double chamfer_sq_l2(const Mat& a, const Mat& b);

// F-score at distance threshold tau (strict <, Euclidean).
double fscore(const Mat& pred, const Mat& gt, double tau);

// Differentiable counterparts. Neighbor/nearest index selection happens on
// the current values and is constant; gradients flow through coordinates and
// features.
Value chamfer_l1_t(Tape& tape, Value a, Value b);
Value idw_interp_spatial_t(Tape& tape, Value query, Value centers, Value feats, int k);
Value idw_interp_feature_t(Tape& tape, Value query_feats, Value ref_feats, Value payload, int k);

// On-tape Euclidean distances between paired rows: ||a_i - b_i||_2 as Nx1.
Value pairwise_distance_t(Tape& tape, Value a, Value b);

}  // namespace pgnet
