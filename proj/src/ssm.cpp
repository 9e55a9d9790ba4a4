#include "cfield/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "cfield/rng.hpp"

namespace cfield {

VecX flatten(const Points& pts) {
  VecX flat(pts.rows() * 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) flat.segment<3>(3 * i) = pts.row(i).transpose();
  return flat;
}

Points unflatten(const VecX& flat) {
  if (flat.size() % 3 != 0) throw std::invalid_argument("unflatten: size not a multiple of 3");
  Points pts(flat.size() / 3, 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) pts.row(i) = flat.segment<3>(3 * i).transpose();
  return pts;
}

ShapeModel fit_pca(const MatX& vertex_matrix) {
  const Eigen::Index n = vertex_matrix.rows();
  const Eigen::Index d = vertex_matrix.cols();
  if (n < 2) throw std::invalid_argument("fit_pca: need at least 2 subjects");
  if (d == 0 || d % 3 != 0)
    throw std::invalid_argument("fit_pca: columns must hold xyz triplets");

  ShapeModel model;
  model.mean_shape = vertex_matrix.colwise().mean().transpose();
  MatX centered = vertex_matrix.rowwise() - model.mean_shape.transpose();

  Eigen::BDCSVD<MatX> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX& sv = svd.singularValues();

  // Keep numerically real modes only; the centered matrix has rank at most
  // n-1, so at least one singular value is always noise.
  const double cutoff = sv.size() > 0 ? sv(0) * 1e-10 : 0.0;
  Eigen::Index rank = 0;
  while (rank < sv.size() && rank < n - 1 && sv(rank) > cutoff) ++rank;

  if (rank == 0) {
    std::fprintf(stderr, "fit_pca: cohort has zero shape variance; no modes retained\n");
    model.modes = MatX(d, 0);
    model.mode_scales = VecX(0);
    model.scores = MatX(n, 0);
    model.score_mean = VecX(0);
    model.score_std = VecX(0);
    return model;
  }

  const double denom = std::sqrt(static_cast<double>(n - 1));
  model.modes = svd.matrixV().leftCols(rank);
  model.mode_scales = sv.head(rank) / denom;
  model.scores = svd.matrixU().leftCols(rank) * denom;
  model.score_mean = model.scores.colwise().mean().transpose();
  MatX score_centered = model.scores.rowwise() - model.score_mean.transpose();
  model.score_std =
      (score_centered.array().square().colwise().sum() / static_cast<double>(n - 1))
          .sqrt()
          .transpose();
  return model;
}

Encoding encode(const ShapeModel& model, const VecX& shape) {
  if (shape.size() != model.mean_shape.size())
    throw std::invalid_argument("encode: shape dimension mismatch");
  Encoding enc;
  enc.alpha = model.modes.transpose() * (shape - model.mean_shape);
  for (int m = 0; m < model.n_modes(); ++m) enc.alpha(m) /= model.mode_scales(m);
  enc.z = enc.alpha;
  for (int m = 0; m < model.n_modes(); ++m)
    enc.z(m) = (enc.alpha(m) - model.score_mean(m)) / model.score_std(m);
  return enc;
}

VecX reconstruct_shape(const ShapeModel& model, const VecX& alpha) {
  if (alpha.size() > model.n_modes())
    throw std::invalid_argument("reconstruct_shape: more scores than modes");
  if (!alpha.allFinite()) throw std::invalid_argument("reconstruct_shape: non-finite scores");
  const Eigen::Index m = alpha.size();
  return model.mean_shape +
         model.modes.leftCols(m) * (alpha.array() * model.mode_scales.head(m).array()).matrix();
}

VecX reconstruct_from_z(const ShapeModel& model, const VecX& z) {
  if (z.size() > model.n_modes())
    throw std::invalid_argument("reconstruct_from_z: more scores than modes");
  const Eigen::Index m = z.size();
  const VecX alpha =
      (z.array() * model.score_std.head(m).array() + model.score_mean.head(m).array()).matrix();
  return reconstruct_shape(model, alpha);
}

MatX denormalize_scores(const ShapeModel& model, const MatX& z) {
  if (z.cols() > model.n_modes())
    throw std::invalid_argument("denormalize_scores: more columns than modes");
  MatX out = z;
  for (Eigen::Index m = 0; m < z.cols(); ++m)
    out.col(m) = (z.col(m).array() * model.score_std(m) + model.score_mean(m)) *
                 model.mode_scales(m);
  return out;
}

KdeModel fit_kde(const MatX& points) {
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  if (n < 2) throw std::invalid_argument("fit_kde: need at least 2 points");
  if (d < 1) throw std::invalid_argument("fit_kde: need at least 1 dimension");

  KdeModel kde;
  kde.train = points;
  kde.bandwidths = VecX(d);
  const double factor = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
  const VecX mean = points.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var =
        (points.col(j).array() - mean(j)).square().sum() / static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    if (sd <= 0.0)
      throw std::invalid_argument("fit_kde: zero variance in dimension " + std::to_string(j));
    kde.bandwidths(j) = factor * sd;
  }
  return kde;
}

double kde_density(const KdeModel& kde, const VecX& z) {
  const Eigen::Index n = kde.train.rows();
  const Eigen::Index d = kde.train.cols();
  if (z.size() != d) throw std::invalid_argument("kde_density: dimension mismatch");

  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w =
        ((kde.train.row(i).transpose() - z).array() / kde.bandwidths.array()).square().sum();
    sum += std::exp(-0.5 * w);
  }
  const double norm = std::pow(2.0 * M_PI, -0.5 * static_cast<double>(d)) /
                      (static_cast<double>(n) * kde.bandwidths.prod());
  return norm * sum;
}

double kde_threshold(const KdeModel& kde) {
  double tau = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < kde.train.rows(); ++i)
    tau = std::min(tau, kde_density(kde, kde.train.row(i).transpose()));
  return tau;
}

MatX lhs_sample(int n, int d, double lo, double hi, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("lhs_sample: n and d must be positive");
  if (!(lo < hi)) throw std::invalid_argument("lhs_sample: lo must be less than hi");

  Rng rng(seed);
  MatX samples(n, d);
  std::vector<int> strata(n);
  const double width = (hi - lo) / static_cast<double>(n);
  for (int j = 0; j < d; ++j) {
    std::iota(strata.begin(), strata.end(), 0);
    rng.shuffle(strata);
    for (int i = 0; i < n; ++i)
      samples(i, j) = lo + width * (static_cast<double>(strata[i]) + rng.uniform());
  }
  return samples;
}

std::vector<int> filter_candidates(const MatX& candidates, const KdeModel& kde) {
  const double tau = kde_threshold(kde);
  std::vector<int> kept;
  for (Eigen::Index i = 0; i < candidates.rows(); ++i)
    if (kde_density(kde, candidates.row(i).transpose()) >= tau)
      kept.push_back(static_cast<int>(i));
  return kept;
}

std::vector<Assignment> select_nearest(const MatX& originals, const MatX& candidates, int k) {
  if (k < 1) throw std::invalid_argument("select_nearest: k must be positive");
  if (originals.cols() != candidates.cols())
    throw std::invalid_argument("select_nearest: dimension mismatch");
  const Eigen::Index n = originals.rows();
  const Eigen::Index m = candidates.rows();
  if (m < n * k)
    throw std::invalid_argument("select_nearest: not enough candidates for " +
                                std::to_string(n) + " originals at k=" + std::to_string(k));

  std::vector<Assignment> picks;
  picks.reserve(static_cast<std::size_t>(n * k));
  std::vector<bool> taken(m, false);
  std::vector<std::pair<double, int>> order(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j)
      order[j] = {(candidates.row(j) - originals.row(i)).squaredNorm(), static_cast<int>(j)};
    std::sort(order.begin(), order.end());
    int found = 0;
    for (const auto& [dist, j] : order) {
      if (taken[j]) continue;
      taken[j] = true;
      picks.push_back({static_cast<int>(i), j});
      if (++found == k) break;
    }
  }
  return picks;
}

}  // namespace cfield
