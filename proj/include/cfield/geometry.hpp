#pragma once

#include <vector>

#include "cfield/types.hpp"

namespace cfield {

inline Vec3 triangle_centroid(const Vec3& a, const Vec3& b, const Vec3& c) {
  return (a + b + c) / 3.0;
}

// Normal scaled by triangle area.
inline Vec3 triangle_area_normal(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a);
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct Plane {
  Vec3 origin = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();

  double signed_distance(const Vec3& p) const { return normal.dot(p - origin); }
};

// Least-squares plane through a point cloud (smallest covariance direction).
Plane fit_plane(const Points& pts, const std::vector<int>& subset);

// Uniform-grid accelerator for nearest-vertex and radius queries.
class PointLocator {
 public:
  PointLocator() = default;
  explicit PointLocator(const Points& pts, double cell_size = 0.0);

  // Index of nearest stored point, or -1 when empty.
  int nearest(const Vec3& q, double* dist_out = nullptr) const;

  // Nearest point whose index is not excluded by `skip` (sorted unique list).
  int nearest_excluding(const Vec3& q, const std::vector<int>& skip,
                        double* dist_out = nullptr) const;

  bool any_within(const Vec3& q, double radius) const;

  int size() const { return static_cast<int>(pts_.rows()); }

 private:
  struct Key {
    int x, y, z;
  };
  Key key_of(const Vec3& p) const;
  std::size_t bucket_of(int kx, int ky, int kz) const;

  Points pts_;
  double cell_ = 1.0;
  Vec3 origin_ = Vec3::Zero();
  int dims_[3] = {0, 0, 0};
  std::vector<std::vector<int>> buckets_;
};

// Closest point on a triangulated surface; brute force over the triangle list
// with a locator-driven candidate ordering happens at the call site when
// needed.  Kept simple: surfaces at this scale have a few thousand faces.
struct SurfaceDistance {
  Vec3 point;
  double distance;
  int triangle;
};

class TriangleSurface {
 public:
  TriangleSurface() = default;
  TriangleSurface(const Points& pts, const TriCells& tris);

  SurfaceDistance closest_point(const Vec3& q) const;
  const Points& points() const { return pts_; }
  const TriCells& triangles() const { return tris_; }

 private:
  Points pts_;
  TriCells tris_;
  Points centroids_;
  PointLocator centroid_locator_;
  double max_radius_ = 0.0;  // largest circumscribed reach of a face
};

}  // namespace cfield
