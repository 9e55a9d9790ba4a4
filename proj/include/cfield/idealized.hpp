#pragma once

#include <functional>

#include "cfield/mesh.hpp"
#include "cfield/rng.hpp"

namespace cfield {

// Closed triangulated sphere from a subdivided cube projected outward;
// n is the per-face grid resolution.
Mesh make_sphere_surface(double radius, int n, const Vec3& center = Vec3::Zero());

// Tetrahedral shell between two concentric spheres.  Inner surface is
// labelled lv_endo, outer epi; rv_endo is present but empty; base is a small
// polar cap carved out of epi, apex the antipodal epi vertex.
Mesh make_spherical_shell(double r_inner, double r_outer, int n, int n_layers);

// Axis-aligned box [origin, origin+size] filled with a conforming
// six-tets-per-cube lattice of spacing ~h.  Boundary triangles included.
Mesh make_box_mesh(const Vec3& origin, const Vec3& size, double h);

// Collects vertex indices satisfying a predicate on position.
std::vector<int> select_vertices(const Mesh& mesh,
                                 const std::function<bool(const Vec3&)>& pred);

// ------------------------------------------------------------------------
// Idealized biventricular solid: a half-ellipsoid of myocardium cropped at
// the base plane z = 0 with two cavities (open at the base) carved out.
// Axis lengths in millimetres.
struct VentricleCavity {
  Vec3 center = Vec3::Zero();  // center.z is 0: cavities open at the base
  Vec3 axes = Vec3::Ones();
};

struct BiventricularShape {
  Vec3 epi_axes = Vec3(12.5, 12.0, 18.5);
  VentricleCavity lv{Vec3(-4.5, 0.0, 0.0), Vec3(4.2, 6.6, 11.5)};
  VentricleCavity rv{Vec3(5.6, 0.0, 0.0), Vec3(3.5, 7.4, 10.2)};

  // Negative inside the myocardium.
  double inside(const Vec3& p) const;
};

// Randomized cohort member, mirror-symmetric when jitter = 0.
BiventricularShape sample_biventricular_shape(Rng& rng, double jitter = 0.08);

// Lattice-classified tetrahedral mesh of the shape with boundary vertices
// projected onto the analytic surfaces.  Labels: lv_endo, rv_endo, epi,
// base, apex (single deepest epicardial vertex).
Mesh make_biventricular_mesh(const BiventricularShape& shape, double h);

// Coarse closed surface for correspondence work: the boundary of a fine
// lattice mesh simplified by vertex clustering at `cell` spacing, with
// cluster representatives re-projected onto the analytic surfaces.
Mesh make_biventricular_surface(const BiventricularShape& shape, double h, double cell);

// Generic vertex-clustering simplification of a triangle mesh with labels.
// Degenerate faces are dropped; a cluster inherits every label carried by a
// majority of its members.
Mesh cluster_decimate(const Mesh& surface, double cell);

}  // namespace cfield
