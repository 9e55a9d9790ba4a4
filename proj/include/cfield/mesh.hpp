#pragma once

#include <map>
#include <string>
#include <vector>

#include "cfield/types.hpp"

namespace cfield {

// Volumetric and/or surface mesh.  Coordinates are millimetres.  Labels are
// named vertex sets (sorted, unique); the conventional anatomical ones are
// "lv_endo", "rv_endo", "epi", "base" and "apex" (apex is a subset of epi,
// all other pairs are disjoint).
struct Mesh {
  Points points;
  TetCells tets;
  TriCells tris;
  LineCells lines;
  std::map<std::string, std::vector<int>> labels;
  std::map<std::string, MatX> point_data;  // n_points rows; 1 or 3 columns

  int n_points() const { return static_cast<int>(points.rows()); }

  bool has_label(const std::string& name) const { return labels.count(name) > 0; }
  const std::vector<int>& label(const std::string& name) const;
};

double tet_signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

// Reorders tet vertices so every signed volume is positive.  Throws on
// degenerate (zero-volume) tets.
void orient_tets(Mesh& mesh);

// Checks index ranges, label sorting/uniqueness, point-data sizes and the
// label disjointness convention.  Throws std::runtime_error with the
// offending cell or label named.
void validate_mesh(const Mesh& mesh);

struct BoundingBox {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  Vec3 extent() const { return hi - lo; }
  double diameter() const { return extent().norm(); }
};

BoundingBox bounding_box(const Points& pts);

// Faces of the tet mesh that belong to exactly one tet, outward oriented.
TriCells boundary_faces(const Mesh& mesh);

// Triangles whose three vertices all carry the label.
TriCells label_triangles(const Mesh& mesh, const std::string& label);

// Extracts a compact surface mesh (points renumbered) from a triangle
// subset; vertex_map[i] gives the original mesh index of surface vertex i.
struct SurfaceMesh {
  Points points;
  TriCells tris;
  std::vector<int> vertex_map;
};

SurfaceMesh extract_surface(const Mesh& mesh, const TriCells& tris);

// Mean edge length of the triangle set (resolution proxy).
double mean_edge_length(const Points& pts, const TriCells& tris);

}  // namespace cfield
