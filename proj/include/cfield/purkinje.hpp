#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cfield/geometry.hpp"
#include "cfield/mesh.hpp"
#include "cfield/types.hpp"

namespace cfield {

struct FractalTreeParams {
  double median_length = 1.8;                      // mm
  double length_std = std::sqrt(0.2) * 1.8;        // mm
  double branch_angle = 0.2;                       // rad
  double repulsion = 0.15;                         // heading blend weight
  double initial_length = 6.5;                     // mm, first deterministic segment
  int generations = 22;
  std::uint64_t rng_seed = 1;
};

// Conduction-tree graph living on a triangulated endocardial surface.  Nodes
// are the growth substeps, so edge lengths are a quarter median branch length
// and the node cloud doubles as the coverage sample set.
struct PurkinjeTree {
  Points nodes;
  std::vector<std::array<int, 2>> edges;  // {parent node, child node}
  std::vector<int> generation;            // per node; the first segment is 0
  int root = 0;

  int n_nodes() const { return static_cast<int>(nodes.rows()); }
};

struct SeedSelection {
  Vec3 lv_seed = Vec3::Zero();
  Vec3 rv_seed = Vec3::Zero();
  Vec3 lv_dir_pt = Vec3::Zero();
  Vec3 rv_dir_pt = Vec3::Zero();
  int lv_seed_vertex = -1;
  int rv_seed_vertex = -1;
  int lv_dir_vertex = -1;
  int rv_dir_vertex = -1;
};

// Start and direction points per ventricle from apicobasal level sets: seeds
// from the 0.99 band (closest to the line through the two band centroids),
// direction points from the 0.97 band (closest to the ventricle's seed).
SeedSelection select_seed_points(const Mesh& mesh, const VecX& phi_ab, double tol = 0.005);

PurkinjeTree grow_fractal_tree(const TriangleSurface& surface, const Vec3& seed,
                               const Vec3& direction_point, const FractalTreeParams& params);

// Fraction of `targets` rows within `radius` of some tree node.
double coverage_fraction(const PurkinjeTree& tree, const Points& targets, double radius);

struct CoverageGrowth {
  PurkinjeTree tree;
  double coverage = 0.0;
  int attempts = 0;        // total growth runs, first try included
  bool reached_target = false;
};

// Regrow with two extra generations and a 10% longer first segment per retry
// (fresh rng stream each time) until the node cloud covers `target` of the
// surface vertices at `radius`, or ten retries are spent.  Always returns the
// best tree seen.
CoverageGrowth grow_until_coverage(const TriangleSurface& surface, const Vec3& seed,
                                   const Vec3& direction_point, const FractalTreeParams& params,
                                   double target = 0.82, double radius = 0.5);

}  // namespace cfield
