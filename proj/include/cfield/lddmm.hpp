#pragma once

#include <array>
#include <vector>

#include "cfield/mesh.hpp"
#include "cfield/types.hpp"

namespace cfield {

// K(i,j) = exp(−‖a_i − b_j‖²/λ²).  Throws on non-positive λ.
MatX gaussian_kernel(const Points& a, const Points& b, double lambda);

// Axis-aligned lattice of momenta carriers covering a region of interest.
struct ControlGrid {
  Points points;
  double spacing = 6.0;
};

// Lattice with the given spacing over the box inflated by one spacing on
// every side.
ControlGrid make_control_grid(const BoundingBox& box, double spacing);

// H(q, μ) = ½ Σ_kl K(q_k, q_l) μ_kᵀ μ_l, conserved along geodesics.
double hamiltonian(const Points& q, const Points& mu, double lambda_v);

// State carried by the Hamiltonian flow: control points, momenta, and any
// passively advected points x (possibly empty).
struct FlowState {
  Points q;
  Points mu;
  Points x;
};

// Geodesic integrated with classical RK4 on uniform steps over [0,1].  The
// per-step stage states are retained so passive points can later be advected
// through (and differentiated against) exactly the same discrete flow.
struct GeodesicTrajectory {
  double lambda_v = 6.0;
  double h = 0.1;
  int steps = 10;
  std::vector<FlowState> node;                   // steps+1 entries
  std::vector<std::array<FlowState, 3>> stage;   // states where k2, k3, k4 were evaluated

  const Points& q0() const { return node.front().q; }
  const Points& q1() const { return node.back().q; }
  const Points& x1() const { return node.back().x; }
};

// Integrates the Hamiltonian system from (q0, mu0), carrying x0 along.
// Throws when the state leaves the finite range.
GeodesicTrajectory shoot_geodesic(const Points& q0, const Points& mu0, double lambda_v,
                                  int steps = 10, const Points& x0 = Points(0, 3));

// Advects points through a recorded trajectory with the same integrator and
// steps; bit-identical to having carried them in shoot_geodesic.
Points flow_points(const Points& x0, const GeodesicTrajectory& traj);

// Reverse-mode derivatives of the final state with respect to the initial
// one: given adjoints of (q(1), μ(1), x(1)), returns adjoints of
// (q(0), μ(0), x(0)).  Adjoint matrices may be empty (treated as zero); the
// trajectory must have carried x if g_x1 is nonempty.
FlowState flow_vjp(const GeodesicTrajectory& traj, const Points& g_q1, const Points& g_mu1,
                   const Points& g_x1);

struct RegistrationOptions {
  double lambda_v = 6.0;
  double lambda_w = 6.0;
  double sigma = 1.0;     // mismatch weight is 1/σ²
  int steps = 10;
  int max_iterations = 200;
  double rel_tol = 1e-5;  // relative cost decrease considered converged
  double armijo_c = 1e-4;
  double initial_step = 1.0;
  int max_halvings = 40;
};

struct RegistrationResult {
  Points momenta;     // one row per control point
  Points warped;      // template vertices advected to t=1
  double varifold_sq = 0.0;
  double kinetic = 0.0;
  std::vector<double> cost_history;  // strictly decreasing over accepted steps
  int iterations = 0;
  bool converged = false;
};

// Gradient descent with Armijo backtracking on the initial momenta,
// minimizing (1/σ²) d_W²(φ(template), target) + μᵀKμ.  Non-convergence
// within the iteration budget returns best-so-far with converged = false.
RegistrationResult register_target(const Points& tmpl_pts, const TriCells& tmpl_tris,
                                   const Points& target_pts, const TriCells& target_tris,
                                   const ControlGrid& grid, const RegistrationOptions& opts = {},
                                   const Points* warm_start = nullptr);

struct TemplateOptions {
  RegistrationOptions reg;
  int max_outer = 40;
  // Momenta steps per outer pass.  Keep this small: letting the per-subject
  // registrations converge between template updates parks the iteration at
  // whatever template it started from, because fully fitted warps leave no
  // residual to pull the template toward the cohort mean.
  int inner_iterations = 3;
  double rel_tol = 1e-5;
};

struct TemplateResult {
  Points points;                // final template vertices
  std::vector<Points> momenta;  // one momenta field per subject
  std::vector<double> cost_history;  // total cost at each outer iteration, non-increasing
  int outer_iterations = 0;
  bool converged = false;
};

// Alternating template estimation: per-subject momenta optimization at a
// fixed template, then one line-searched gradient step on the template
// vertices at fixed momenta.  The template keeps the connectivity `tris`.
TemplateResult estimate_template(const Points& init_pts, const TriCells& tris,
                                 const std::vector<Points>& target_pts,
                                 const std::vector<TriCells>& target_tris,
                                 const ControlGrid& grid, const TemplateOptions& opts = {});

// Mean vertex-to-vertex Euclidean distance between corresponded meshes.
// Throws on vertex count mismatch.
double reconstruction_error(const Points& a, const Points& b);

}  // namespace cfield
