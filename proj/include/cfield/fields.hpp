#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cfield/mesh.hpp"
#include "cfield/types.hpp"

namespace cfield {

struct ScalarField {
  std::string name;
  VecX values;  // one per mesh node
  std::vector<std::pair<std::string, double>> dirichlet;  // label -> imposed value
};

// P1 finite-element solution of the Laplace equation with Dirichlet data
// given per vertex label.  Conjugate gradients with Jacobi preconditioning;
// the assembled residual is verified to < 1e-8 relative before returning.
// Throws on unknown/empty labels, conflicting values on a shared node, or a
// system left singular by missing boundary data.
ScalarField solve_laplace(const Mesh& mesh,
                          const std::vector<std::pair<std::string, double>>& dirichlet,
                          const std::string& name = "phi");

// Apex 0, base 1.
ScalarField apicobasal_coordinate(const Mesh& mesh);

// Both endocardial surfaces 0, epicardium 1.
ScalarField transmural_coordinate(const Mesh& mesh);

// Per-node gradient: volume-weighted average of the constant per-tet
// gradients touching each node.
Points nodal_gradient(const Mesh& mesh, const VecX& values);

struct FiberField {
  Points fiber;   // f0
  Points sheet;   // s0
  Points normal;  // n0 = f0 x s0
};

// Rule-based fiber architecture.  The transmural field supplies the local
// wall-crossing axis, the apicobasal field the longitudinal axis; the helix
// angle interpolates linearly in transmural depth from alpha_endo to
// alpha_epi (beta likewise for the sheet angle).  Angles in degrees.
// Zero-gradient nodes are repaired by neighbor averaging; an unresolvable
// node is an error.
FiberField generate_fibers(const Mesh& mesh, const ScalarField& phi_ab,
                           const ScalarField& phi_tm, double alpha_epi_deg,
                           double alpha_endo_deg, double beta_epi_deg, double beta_endo_deg);

// Convenience: solves both coordinate fields from the anatomical labels.
FiberField generate_fibers(const Mesh& mesh, double alpha_epi_deg, double alpha_endo_deg,
                           double beta_epi_deg, double beta_endo_deg);

}  // namespace cfield
