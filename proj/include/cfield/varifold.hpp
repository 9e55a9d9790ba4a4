#pragma once

#include "cfield/types.hpp"

namespace cfield {

// Surface as an oriented varifold: triangle centroids plus area-weighted
// normals.  The inner product between two surfaces is
//   ⟨A,B⟩ = Σ_ij exp(−‖c_i−c_j‖²/λ_W²) · (n_i·n_j)² / (‖n_i‖‖n_j‖),
// which is bilinear in triangle area and insensitive to the in-plane
// tessellation.
struct VarifoldRep {
  Points centroids;
  Points normals;
};

// Throws on zero-area triangles.
VarifoldRep varifold_rep(const Points& pts, const TriCells& tris);

double varifold_product(const VarifoldRep& a, const VarifoldRep& b, double lambda_w);

double varifold_distance_sq(const Points& a_pts, const TriCells& a_tris,
                            const Points& b_pts, const TriCells& b_tris, double lambda_w);

// ⟨A,A⟩ − 2⟨A,B⟩ (the part of d² that depends on A), optionally with its
// gradient with respect to the vertex positions of A.
double varifold_mismatch(const Points& a_pts, const TriCells& a_tris, const VarifoldRep& b,
                         double lambda_w, Points* grad_pts = nullptr);

}  // namespace cfield
