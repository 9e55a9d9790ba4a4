#pragma once

#include <cstdint>
#include <vector>

#include "cfield/types.hpp"

namespace cfield {

// Linear shape model over corresponded vertex coordinates.  Shapes travel as
// flat vectors ordered [x0 y0 z0 x1 y1 z1 ...]; modes carry unit-norm columns
// with per-mode standard deviations kept separate, so training scores come
// out with unit variance.
struct ShapeModel {
  VecX mean_shape;   // 3 N_v
  MatX modes;        // 3 N_v x N_M, orthonormal columns
  VecX mode_scales;  // N_M, non-increasing (mm)
  MatX scores;       // N_O x N_M training coefficients
  VecX score_mean;   // empirical per-mode mean of the training scores
  VecX score_std;    // empirical per-mode std (ddof = 1)

  int n_modes() const { return static_cast<int>(modes.cols()); }
};

VecX flatten(const Points& pts);
Points unflatten(const VecX& flat);

// PCA of the row-per-subject coordinate matrix.  Numerically zero modes are
// dropped; a zero-variance cohort yields a model with no modes at all (plus
// a stderr note) rather than an error.
ShapeModel fit_pca(const MatX& vertex_matrix);

struct Encoding {
  VecX alpha;  // unit-variance coefficients
  VecX z;      // alpha re-centered by the empirical score statistics
};

Encoding encode(const ShapeModel& model, const VecX& shape);

// mean + sum_m alpha_m * scale_m * mode_m over the first alpha.size() modes.
VecX reconstruct_shape(const ShapeModel& model, const VecX& alpha);
VecX reconstruct_from_z(const ShapeModel& model, const VecX& z);

// Rows of z-scores mapped back to the scale used for candidate matching:
// (z * std + mean) * mode_scale per column.
MatX denormalize_scores(const ShapeModel& model, const MatX& z);

struct KdeModel {
  MatX train;       // n x d
  VecX bandwidths;  // d, all > 0
};

// Product-Gaussian KDE with Scott's rule bandwidths h_j = n^(-1/(d+4)) s_j.
// Requires at least two points and nonzero spread in every dimension.
KdeModel fit_kde(const MatX& points);

double kde_density(const KdeModel& kde, const VecX& z);

// Smallest training-point density: the retention gate for synthetic samples.
double kde_threshold(const KdeModel& kde);

// Latin hypercube over [lo, hi]^d: each dimension hits each of the n equal
// strata exactly once.  Deterministic per seed.
MatX lhs_sample(int n, int d, double lo, double hi, std::uint64_t seed);

// Indices of candidate rows whose density clears the threshold, in order.
std::vector<int> filter_candidates(const MatX& candidates, const KdeModel& kde);

struct Assignment {
  int original;   // row in the originals matrix
  int candidate;  // row in the candidates matrix
};

// For each original, in index order, the k nearest still-unclaimed candidates
// by Euclidean distance; a taken candidate is skipped in favor of the next
// nearest.  Throws when fewer than originals*k candidates are available.
std::vector<Assignment> select_nearest(const MatX& originals, const MatX& candidates, int k);

}  // namespace cfield
