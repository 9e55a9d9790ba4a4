#pragma once

#include "cfield/mesh.hpp"
#include "cfield/types.hpp"

namespace cfield {

// Smooth volumetric extension of a displacement field known at scattered
// surface points: Gaussian radial basis functions (same exp(-r²/λ²) kernel as
// the registration machinery) plus a constant term, ridge-regularized.  Used
// to carry a reconstructed surface shape onto the template's tetrahedral
// mesh without remeshing.
struct RbfWarp {
  Points centers;     // n x 3
  MatX coefficients;  // n x 3, one column per displacement component
  Vec3 constant = Vec3::Zero();
  double width = 0.0;
};

// Solves [K + ridge·I, 1; 1ᵀ, 0] for each displacement component with the
// zero-sum side condition on the coefficients, so a constant field is
// reproduced exactly everywhere.
RbfWarp fit_rbf_warp(const Points& centers, const MatX& displacements, double width,
                     double ridge = 1e-8);

// Interpolated displacement at each query row.
MatX rbf_displacement(const RbfWarp& warp, const Points& queries);

// Same connectivity, labels and point data; points moved by the warp.
Mesh warp_mesh(const Mesh& mesh, const RbfWarp& warp);

}  // namespace cfield
