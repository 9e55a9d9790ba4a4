#include "cfield/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cfield {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5.
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return a + v * ab;
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return a + w * ac;
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return b + w * (c - b);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return a + ab * v + ac * w;
}

Plane fit_plane(const Points& pts, const std::vector<int>& subset) {
  if (subset.size() < 3) throw std::invalid_argument("fit_plane: need at least 3 points");
  Vec3 centroid = Vec3::Zero();
  for (int i : subset) centroid += pts.row(i).transpose();
  centroid /= static_cast<double>(subset.size());

  Mat3 cov = Mat3::Zero();
  for (int i : subset) {
    const Vec3 d = pts.row(i).transpose() - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Plane plane;
  plane.origin = centroid;
  plane.normal = es.eigenvectors().col(0).normalized();
  return plane;
}

PointLocator::PointLocator(const Points& pts, double cell_size) : pts_(pts) {
  const int n = static_cast<int>(pts.rows());
  if (n == 0) return;
  const Vec3 lo = pts.colwise().minCoeff().transpose();
  const Vec3 hi = pts.colwise().maxCoeff().transpose();
  const Vec3 span = hi - lo;
  if (cell_size <= 0.0) {
    // Aim for a handful of points per bucket; degenerate axes (planar or
    // collinear clouds) drop out of the density estimate.
    double measure = 1.0;
    int live_axes = 0;
    for (int d = 0; d < 3; ++d)
      if (span[d] > 0.0) {
        measure *= span[d];
        ++live_axes;
      }
    cell_size = live_axes == 0 ? 1.0 : std::pow(measure / n, 1.0 / live_axes);
    cell_size = std::max(cell_size, 1e-6);
  }
  cell_ = cell_size;
  origin_ = lo;
  const auto fill_dims = [&] {
    for (int d = 0; d < 3; ++d)
      dims_[d] = std::max(1, static_cast<int>(std::floor(span[d] / cell_)) + 1);
  };
  fill_dims();
  // Outliers can stretch the box far beyond the bulk density; keep the bucket
  // table bounded rather than trusting the heuristic.
  while (static_cast<double>(dims_[0]) * dims_[1] * dims_[2] > double(1 << 24)) {
    cell_ *= 2.0;
    fill_dims();
  }
  buckets_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], {});
  for (int i = 0; i < n; ++i) {
    const Key k = key_of(pts.row(i).transpose());
    buckets_[bucket_of(k.x, k.y, k.z)].push_back(i);
  }
}

PointLocator::Key PointLocator::key_of(const Vec3& p) const {
  Key k;
  k.x = std::clamp(static_cast<int>(std::floor((p.x() - origin_.x()) / cell_)), 0, dims_[0] - 1);
  k.y = std::clamp(static_cast<int>(std::floor((p.y() - origin_.y()) / cell_)), 0, dims_[1] - 1);
  k.z = std::clamp(static_cast<int>(std::floor((p.z() - origin_.z()) / cell_)), 0, dims_[2] - 1);
  return k;
}

std::size_t PointLocator::bucket_of(int kx, int ky, int kz) const {
  return (static_cast<std::size_t>(kz) * dims_[1] + ky) * dims_[0] + kx;
}

int PointLocator::nearest(const Vec3& q, double* dist_out) const {
  static const std::vector<int> kEmpty;
  return nearest_excluding(q, kEmpty, dist_out);
}

int PointLocator::nearest_excluding(const Vec3& q, const std::vector<int>& skip,
                                    double* dist_out) const {
  if (pts_.rows() == 0) return -1;
  const Key center = key_of(q);
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  // Search expanding shells of buckets until the best distance is safely
  // inside the searched region.
  const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
  for (int ring = 0; ring <= max_ring; ++ring) {
    if (best >= 0) {
      const double safe = (static_cast<double>(ring) - 1.0) * cell_;
      if (safe > 0.0 && best_d2 <= safe * safe) break;
    }
    bool visited_any = false;
    for (int dz = -ring; dz <= ring; ++dz) {
      const int z = center.z + dz;
      if (z < 0 || z >= dims_[2]) continue;
      for (int dy = -ring; dy <= ring; ++dy) {
        const int y = center.y + dy;
        if (y < 0 || y >= dims_[1]) continue;
        for (int dx = -ring; dx <= ring; ++dx) {
          // Shell only: skip interior cells already visited.
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          const int x = center.x + dx;
          if (x < 0 || x >= dims_[0]) continue;
          visited_any = true;
          for (int idx : buckets_[bucket_of(x, y, z)]) {
            if (!skip.empty() && std::binary_search(skip.begin(), skip.end(), idx)) continue;
            const double d2 = (pts_.row(idx).transpose() - q).squaredNorm();
            if (d2 < best_d2) {
              best_d2 = d2;
              best = idx;
            }
          }
        }
      }
    }
    if (!visited_any && ring > 0 && best >= 0) break;
  }
  if (dist_out) *dist_out = best >= 0 ? std::sqrt(best_d2) : std::numeric_limits<double>::infinity();
  return best;
}

bool PointLocator::any_within(const Vec3& q, double radius) const {
  if (pts_.rows() == 0) return false;
  const Key center = key_of(q);
  const double r2 = radius * radius;
  // Clamp the scan window in double precision first: a huge radius must not
  // overflow the integer cell arithmetic, it just means "scan everything".
  const double reach = radius / cell_ + 1.0;
  const auto lo = [&](int c) { return reach > c ? 0 : c - static_cast<int>(reach); };
  const auto hi = [&](int c, int dim) {
    return reach > dim - 1 - c ? dim - 1 : c + static_cast<int>(reach);
  };
  for (int z = lo(center.z); z <= hi(center.z, dims_[2]); ++z)
    for (int y = lo(center.y); y <= hi(center.y, dims_[1]); ++y)
      for (int x = lo(center.x); x <= hi(center.x, dims_[0]); ++x)
        for (int idx : buckets_[bucket_of(x, y, z)])
          if ((pts_.row(idx).transpose() - q).squaredNorm() <= r2) return true;
  return false;
}

TriangleSurface::TriangleSurface(const Points& pts, const TriCells& tris)
    : pts_(pts), tris_(tris) {
  const int m = static_cast<int>(tris.rows());
  centroids_.resize(m, 3);
  for (int t = 0; t < m; ++t) {
    const Vec3 a = pts_.row(tris_(t, 0)).transpose();
    const Vec3 b = pts_.row(tris_(t, 1)).transpose();
    const Vec3 c = pts_.row(tris_(t, 2)).transpose();
    const Vec3 g = triangle_centroid(a, b, c);
    centroids_.row(t) = g.transpose();
    max_radius_ = std::max({max_radius_, (a - g).norm(), (b - g).norm(), (c - g).norm()});
  }
  centroid_locator_ = PointLocator(centroids_);
}

SurfaceDistance TriangleSurface::closest_point(const Vec3& q) const {
  SurfaceDistance out{Vec3::Zero(), std::numeric_limits<double>::infinity(), -1};
  if (tris_.rows() == 0) return out;
  double centroid_dist = 0.0;
  centroid_locator_.nearest(q, &centroid_dist);
  // Any face whose centroid lies farther than this bound cannot contain the
  // closest point.
  const double bound = centroid_dist + 2.0 * max_radius_;
  const double bound2 = bound * bound;
  for (int t = 0; t < tris_.rows(); ++t) {
    if ((centroids_.row(t).transpose() - q).squaredNorm() > bound2) continue;
    const Vec3 cp = closest_point_on_triangle(q, pts_.row(tris_(t, 0)).transpose(),
                                              pts_.row(tris_(t, 1)).transpose(),
                                              pts_.row(tris_(t, 2)).transpose());
    const double d = (cp - q).norm();
    if (d < out.distance) {
      out.distance = d;
      out.point = cp;
      out.triangle = t;
    }
  }
  return out;
}

}  // namespace cfield
