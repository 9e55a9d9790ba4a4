#include "cfield/align.hpp"

#include <cmath>
#include <stdexcept>

#include "cfield/geometry.hpp"

namespace cfield {

namespace {

// Orthogonal Procrustes: rotation + translation minimising the paired RMS.
RigidTransform kabsch(const Points& src, const Points& dst) {
  const Vec3 src_mean = src.colwise().mean().transpose();
  const Vec3 dst_mean = dst.colwise().mean().transpose();
  const Points a = src.rowwise() - src_mean.transpose();
  const Points b = dst.rowwise() - dst_mean.transpose();
  const Mat3 h = a.transpose() * b;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = dst_mean - t.rotation * src_mean;
  return t;
}

}  // namespace

IcpResult icp_align(const Points& source, const Points& target, const IcpOptions& opts) {
  if (source.rows() == 0 || target.rows() == 0)
    throw std::invalid_argument("icp_align: empty point set");

  const PointLocator target_locator(target);
  IcpResult result;
  Points current = source;

  // Centroid pre-alignment: removes any gross offset so the nearest-vertex
  // correspondences start meaningful.
  result.transform.translation =
      (target.colwise().mean() - source.colwise().mean()).transpose();
  current.rowwise() += result.transform.translation.transpose();

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    Points matched(source.rows(), 3);
    double rms = 0.0;
    for (int i = 0; i < current.rows(); ++i) {
      double d = 0.0;
      const int j = target_locator.nearest(current.row(i).transpose(), &d);
      matched.row(i) = target.row(j);
      rms += d * d;
    }
    rms = std::sqrt(rms / static_cast<double>(current.rows()));

    const RigidTransform step = kabsch(current, matched);
    current = step.apply(current);
    result.transform.rotation = step.rotation * result.transform.rotation;
    result.transform.translation = step.rotation * result.transform.translation + step.translation;
    result.iterations = iter + 1;

    // The solve cannot increase the squared correspondence objective, so the
    // RMS recorded before each solve is non-increasing.
    if (!result.history.empty()) {
      const double prev = result.history.back();
      if (std::abs(prev - rms) <= opts.tolerance * std::max(prev, 1e-30)) {
        result.history.push_back(rms);
        break;
      }
    }
    result.history.push_back(rms);
  }

  double final_dist = 0.0;
  for (int i = 0; i < current.rows(); ++i) {
    double d = 0.0;
    target_locator.nearest(current.row(i).transpose(), &d);
    final_dist += d;
  }
  result.mean_distance = final_dist / static_cast<double>(current.rows());
  return result;
}

double mean_closest_point_distance(const Points& a, const Points& b) {
  const PointLocator la(a), lb(b);
  double ab = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    double d = 0.0;
    lb.nearest(a.row(i).transpose(), &d);
    ab += d;
  }
  double ba = 0.0;
  for (int i = 0; i < b.rows(); ++i) {
    double d = 0.0;
    la.nearest(b.row(i).transpose(), &d);
    ba += d;
  }
  return 0.5 * (ab / static_cast<double>(a.rows()) + ba / static_cast<double>(b.rows()));
}

int select_medoid(const std::vector<Points>& cohort) {
  const int n = static_cast<int>(cohort.size());
  if (n == 0) throw std::invalid_argument("select_medoid: empty cohort");
  MatX d = MatX::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) d(i, j) = d(j, i) = mean_closest_point_distance(cohort[static_cast<std::size_t>(i)], cohort[static_cast<std::size_t>(j)]);
  int best = 0;
  double best_sum = d.row(0).sum();
  for (int i = 1; i < n; ++i) {
    const double s = d.row(i).sum();
    if (s < best_sum) {
      best_sum = s;
      best = i;
    }
  }
  return best;
}

}  // namespace cfield
