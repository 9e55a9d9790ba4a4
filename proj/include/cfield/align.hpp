#pragma once

#include <vector>

#include "cfield/mesh.hpp"

namespace cfield {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Points apply(const Points& pts) const {
    return (pts * rotation.transpose()).rowwise() + translation.transpose();
  }
  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
  }
};

struct IcpOptions {
  int max_iterations = 60;
  double tolerance = 1e-9;  // relative change of mean correspondence distance
};

struct IcpResult {
  RigidTransform transform;  // maps source points into the target frame
  double mean_distance = 0.0;
  int iterations = 0;
  std::vector<double> history;  // RMS correspondence distance per iteration, non-increasing
};

// Rigid alignment by iterated nearest-vertex correspondences and the SVD
// orthogonal Procrustes solve.
IcpResult icp_align(const Points& source, const Points& target, const IcpOptions& opts = {});

// Symmetric mean closest-vertex distance between two point sets.
double mean_closest_point_distance(const Points& a, const Points& b);

// Index minimising the summed pairwise distance to the rest of the cohort;
// ties resolve to the lowest index.
int select_medoid(const std::vector<Points>& cohort);

}  // namespace cfield
