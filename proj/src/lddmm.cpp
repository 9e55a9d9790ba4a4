#include "cfield/lddmm.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "cfield/varifold.hpp"

namespace cfield {

namespace {

MatX pairwise_sq(const Points& a, const Points& b) {
  MatX d2 = -2.0 * (a * b.transpose());
  d2.colwise() += a.rowwise().squaredNorm();
  d2.rowwise() += b.rowwise().squaredNorm().transpose();
  return d2.cwiseMax(0.0);
}

}  // namespace

MatX gaussian_kernel(const Points& a, const Points& b, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("gaussian_kernel: lambda must be positive");
  return (-pairwise_sq(a, b) / (lambda * lambda)).array().exp();
}

ControlGrid make_control_grid(const BoundingBox& box, double spacing) {
  if (spacing <= 0.0) throw std::invalid_argument("make_control_grid: spacing must be positive");
  ControlGrid grid;
  grid.spacing = spacing;
  int n[3];
  Vec3 lo;
  for (int d = 0; d < 3; ++d) {
    lo[d] = box.lo[d] - spacing;
    const double extent = box.hi[d] + spacing - lo[d];
    n[d] = static_cast<int>(std::ceil(extent / spacing)) + 1;
  }
  grid.points.resize(n[0] * n[1] * n[2], 3);
  int row = 0;
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i)
        grid.points.row(row++) << lo.x() + i * spacing, lo.y() + j * spacing,
            lo.z() + k * spacing;
  return grid;
}

double hamiltonian(const Points& q, const Points& mu, double lambda_v) {
  const MatX k = gaussian_kernel(q, q, lambda_v);
  return 0.5 * (k.array() * (mu * mu.transpose()).array()).sum();
}

namespace {

struct Derivative {
  Points q;
  Points mu;
  Points x;
};

Derivative flow_rhs(const FlowState& s, double lambda) {
  const double c = 2.0 / (lambda * lambda);
  const MatX k = gaussian_kernel(s.q, s.q, lambda);
  Derivative d;
  d.q = k * s.mu;
  const MatX w = k.cwiseProduct(s.mu * s.mu.transpose());
  const VecX wsum = w.rowwise().sum();
  d.mu = c * (wsum.asDiagonal() * s.q - w * s.q);
  if (s.x.rows() > 0)
    d.x = gaussian_kernel(s.x, s.q, lambda) * s.mu;
  else
    d.x = Points(0, 3);
  return d;
}

// Adjoint of flow_rhs: given the adjoint (aq, amu, ax) of the output slots,
// returns the gradient with respect to the input state.
FlowState flow_rhs_vjp(const FlowState& s, const Derivative& a, double lambda) {
  const double c = 2.0 / (lambda * lambda);
  const int n = static_cast<int>(s.q.rows());
  const MatX k = gaussian_kernel(s.q, s.q, lambda);
  const MatX m = s.mu * s.mu.transpose();

  FlowState g;
  g.q = Points::Zero(n, 3);
  g.mu = Points::Zero(n, 3);
  g.x = Points(s.x.rows(), 3);

  // q̇ = K μ.
  g.mu += k * a.q;
  {
    const MatX sym = k.cwiseProduct(a.q * s.mu.transpose() + s.mu * a.q.transpose());
    const VecX srow = sym.rowwise().sum();
    g.q -= c * (srow.asDiagonal() * s.q - sym * s.q);
  }

  // μ̇ = c Σ_j K_kj (μ_k·μ_j)(q_k − q_j).
  {
    MatX t = -(a.mu * s.q.transpose());
    t.colwise() += (a.mu.array() * s.q.array()).rowwise().sum().matrix();
    t = k.cwiseProduct(t);  // t_kj = K_kj (aμ_k · (q_k − q_j))
    g.mu += c * (t * s.mu + t.transpose() * s.mu);

    const MatX w = k.cwiseProduct(m);
    const VecX wsum = w.rowwise().sum();
    g.q += c * (wsum.asDiagonal() * a.mu - w * a.mu);

    const MatX rr = t.cwiseProduct(m);
    const MatX rsym = rr + rr.transpose();
    const VecX rsum = rsym.rowwise().sum();
    g.q -= c * c * (rsum.asDiagonal() * s.q - rsym * s.q);
  }

  // ẋ = K(x, q) μ.
  if (s.x.rows() > 0) {
    const MatX kx = gaussian_kernel(s.x, s.q, lambda);
    g.mu += kx.transpose() * a.x;
    const MatX e = kx.cwiseProduct(a.x * s.mu.transpose());
    const VecX erow = e.rowwise().sum();
    g.x = -c * (erow.asDiagonal() * s.x - e * s.q);
    const VecX ecol = e.colwise().sum().transpose();
    g.q += c * (e.transpose() * s.x - ecol.asDiagonal() * s.q);
  }
  return g;
}

FlowState state_axpy(const FlowState& s, double t, const Derivative& d) {
  FlowState out;
  out.q = s.q + t * d.q;
  out.mu = s.mu + t * d.mu;
  out.x = s.x.rows() > 0 ? Points(s.x + t * d.x) : Points(0, 3);
  return out;
}

bool state_finite(const FlowState& s) {
  return s.q.allFinite() && s.mu.allFinite() && (s.x.rows() == 0 || s.x.allFinite());
}

}  // namespace

GeodesicTrajectory shoot_geodesic(const Points& q0, const Points& mu0, double lambda_v,
                                  int steps, const Points& x0) {
  if (q0.rows() == 0) throw std::invalid_argument("shoot_geodesic: empty control points");
  if (q0.rows() != mu0.rows())
    throw std::invalid_argument("shoot_geodesic: momenta shape does not match control points");
  if (steps < 1) throw std::invalid_argument("shoot_geodesic: steps must be >= 1");

  GeodesicTrajectory traj;
  traj.lambda_v = lambda_v;
  traj.steps = steps;
  traj.h = 1.0 / steps;
  traj.node.reserve(static_cast<std::size_t>(steps) + 1);
  traj.stage.reserve(static_cast<std::size_t>(steps));

  FlowState s{q0, mu0, x0};
  traj.node.push_back(s);
  const double h = traj.h;
  for (int i = 0; i < steps; ++i) {
    const Derivative k1 = flow_rhs(s, lambda_v);
    const FlowState e2 = state_axpy(s, 0.5 * h, k1);
    const Derivative k2 = flow_rhs(e2, lambda_v);
    const FlowState e3 = state_axpy(s, 0.5 * h, k2);
    const Derivative k3 = flow_rhs(e3, lambda_v);
    const FlowState e4 = state_axpy(s, h, k3);
    const Derivative k4 = flow_rhs(e4, lambda_v);

    FlowState next;
    next.q = s.q + (h / 6.0) * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q);
    next.mu = s.mu + (h / 6.0) * (k1.mu + 2.0 * k2.mu + 2.0 * k3.mu + k4.mu);
    next.x = s.x.rows() > 0
                 ? Points(s.x + (h / 6.0) * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x))
                 : Points(0, 3);
    if (!state_finite(next))
      throw std::runtime_error("shoot_geodesic: non-finite state at step " + std::to_string(i));

    traj.stage.push_back({e2, e3, e4});
    traj.node.push_back(next);
    s = std::move(next);
  }
  return traj;
}

Points flow_points(const Points& x0, const GeodesicTrajectory& traj) {
  const auto velocity = [&](const Points& x, const FlowState& s) -> Points {
    return gaussian_kernel(x, s.q, traj.lambda_v) * s.mu;
  };
  Points x = x0;
  const double h = traj.h;
  for (int i = 0; i < traj.steps; ++i) {
    const Points k1 = velocity(x, traj.node[static_cast<std::size_t>(i)]);
    const Points k2 = velocity(x + 0.5 * h * k1, traj.stage[static_cast<std::size_t>(i)][0]);
    const Points k3 = velocity(x + 0.5 * h * k2, traj.stage[static_cast<std::size_t>(i)][1]);
    const Points k4 = velocity(x + h * k3, traj.stage[static_cast<std::size_t>(i)][2]);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  if (!x.allFinite()) throw std::runtime_error("flow_points: non-finite output");
  return x;
}

FlowState flow_vjp(const GeodesicTrajectory& traj, const Points& g_q1, const Points& g_mu1,
                   const Points& g_x1) {
  const int nq = static_cast<int>(traj.node.front().q.rows());
  const int nx = static_cast<int>(traj.node.front().x.rows());
  if (g_x1.rows() > 0 && g_x1.rows() != nx)
    throw std::invalid_argument("flow_vjp: x adjoint does not match carried points");

  Derivative adj;  // adjoint of the state (same shape as a derivative)
  adj.q = g_q1.rows() > 0 ? Points(g_q1) : Points(Points::Zero(nq, 3));
  adj.mu = g_mu1.rows() > 0 ? Points(g_mu1) : Points(Points::Zero(nq, 3));
  adj.x = g_x1.rows() > 0 ? Points(g_x1) : Points(Points::Zero(nx, 3));

  const double h = traj.h;
  const auto scaled = [](const Derivative& d, double t) {
    Derivative out;
    out.q = t * d.q;
    out.mu = t * d.mu;
    out.x = t * d.x;
    return out;
  };
  const auto add = [](Derivative& d, const FlowState& g, double t = 1.0) {
    d.q += t * g.q;
    d.mu += t * g.mu;
    if (g.x.rows() > 0) d.x += t * g.x;
  };

  for (int i = traj.steps - 1; i >= 0; --i) {
    const FlowState& s = traj.node[static_cast<std::size_t>(i)];
    const auto& st = traj.stage[static_cast<std::size_t>(i)];

    Derivative gk1 = scaled(adj, h / 6.0);
    Derivative gk2 = scaled(adj, h / 3.0);
    Derivative gk3 = scaled(adj, h / 3.0);
    Derivative gk4 = scaled(adj, h / 6.0);

    const FlowState a4 = flow_rhs_vjp(st[2], gk4, traj.lambda_v);
    add(gk3, a4, h);
    const FlowState a3 = flow_rhs_vjp(st[1], gk3, traj.lambda_v);
    add(gk2, a3, 0.5 * h);
    const FlowState a2 = flow_rhs_vjp(st[0], gk2, traj.lambda_v);
    add(gk1, a2, 0.5 * h);
    const FlowState a1 = flow_rhs_vjp(s, gk1, traj.lambda_v);

    add(adj, a1);
    add(adj, a2);
    add(adj, a3);
    add(adj, a4);
  }

  FlowState out;
  out.q = adj.q;
  out.mu = adj.mu;
  out.x = adj.x;
  return out;
}

namespace {

struct CostTerms {
  double cost = 0.0;
  double varifold_sq = 0.0;
  double kinetic = 0.0;
};

}  // namespace

RegistrationResult register_target(const Points& tmpl_pts, const TriCells& tmpl_tris,
                                   const Points& target_pts, const TriCells& target_tris,
                                   const ControlGrid& grid, const RegistrationOptions& opts,
                                   const Points* warm_start) {
  if (opts.sigma <= 0.0) throw std::invalid_argument("register_target: sigma must be positive");
  if (tmpl_tris.rows() == 0 || target_tris.rows() == 0)
    throw std::invalid_argument("register_target: both surfaces need triangles");

  const MatX kq = gaussian_kernel(grid.points, grid.points, opts.lambda_v);
  const VarifoldRep target_rep = varifold_rep(target_pts, target_tris);
  const double bb = varifold_product(target_rep, target_rep, opts.lambda_w);
  const double inv_s2 = 1.0 / (opts.sigma * opts.sigma);

  const auto evaluate = [&](const Points& mu, Points* grad, Points* warped) {
    const GeodesicTrajectory traj =
        shoot_geodesic(grid.points, mu, opts.lambda_v, opts.steps, tmpl_pts);
    Points g_surface;
    const double mismatch = varifold_mismatch(traj.x1(), tmpl_tris, target_rep, opts.lambda_w,
                                              grad != nullptr ? &g_surface : nullptr);
    CostTerms terms;
    terms.varifold_sq = mismatch + bb;
    terms.kinetic = (mu.array() * (kq * mu).array()).sum();
    terms.cost = inv_s2 * terms.varifold_sq + terms.kinetic;
    if (grad != nullptr) {
      const FlowState g = flow_vjp(traj, Points(0, 3), Points(0, 3), inv_s2 * g_surface);
      *grad = g.mu + 2.0 * (kq * mu);
    }
    if (warped != nullptr) *warped = traj.x1();
    return terms;
  };

  RegistrationResult result;
  result.momenta = warm_start != nullptr ? *warm_start : Points(Points::Zero(grid.points.rows(), 3));
  if (warm_start != nullptr && warm_start->rows() != grid.points.rows())
    throw std::invalid_argument("register_target: warm start shape mismatch");

  double step = opts.initial_step;
  Points grad;
  CostTerms current = evaluate(result.momenta, &grad, nullptr);
  result.cost_history.push_back(current.cost);

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    result.iterations = iter + 1;
    const double g2 = grad.squaredNorm();
    if (g2 < 1e-30) {
      result.converged = true;
      break;
    }

    bool accepted = false;
    double t = step;
    for (int halving = 0; halving < opts.max_halvings; ++halving) {
      const Points trial = result.momenta - t * grad;
      const CostTerms trial_terms = evaluate(trial, nullptr, nullptr);
      if (trial_terms.cost <= current.cost - opts.armijo_c * t * g2) {
        result.momenta = trial;
        const double previous = current.cost;
        current = evaluate(result.momenta, &grad, nullptr);
        result.cost_history.push_back(current.cost);
        step = halving == 0 ? t * 1.5 : t;
        accepted = true;
        if (previous - current.cost <= opts.rel_tol * std::max(std::abs(previous), 1e-30)) {
          result.converged = true;
        }
        break;
      }
      t *= 0.5;
    }
    if (!accepted || result.converged) {
      if (!accepted) result.converged = false;
      break;
    }
  }

  CostTerms final_terms = evaluate(result.momenta, nullptr, &result.warped);
  result.varifold_sq = final_terms.varifold_sq;
  result.kinetic = final_terms.kinetic;
  return result;
}

TemplateResult estimate_template(const Points& init_pts, const TriCells& tris,
                                 const std::vector<Points>& target_pts,
                                 const std::vector<TriCells>& target_tris,
                                 const ControlGrid& grid, const TemplateOptions& opts) {
  const std::size_t n_subjects = target_pts.size();
  if (n_subjects < 2) throw std::invalid_argument("estimate_template: cohort size must be >= 2");
  if (target_tris.size() != n_subjects)
    throw std::invalid_argument("estimate_template: triangle list count mismatch");

  TemplateResult result;
  result.points = init_pts;
  result.momenta.assign(n_subjects, Points::Zero(grid.points.rows(), 3));

  RegistrationOptions inner = opts.reg;
  inner.max_iterations = opts.inner_iterations;
  const double inv_s2 = 1.0 / (inner.sigma * inner.sigma);

  std::vector<VarifoldRep> reps;
  std::vector<double> bb(n_subjects, 0.0);
  for (std::size_t i = 0; i < n_subjects; ++i) {
    reps.push_back(varifold_rep(target_pts[i], target_tris[i]));
    bb[i] = varifold_product(reps[i], reps[i], inner.lambda_w);
  }

  double previous_total = std::numeric_limits<double>::infinity();

  for (int outer = 0; outer < opts.max_outer; ++outer) {
    result.outer_iterations = outer + 1;

    // (i) momenta refresh at the current template.
    double kinetic_total = 0.0;
    for (std::size_t i = 0; i < n_subjects; ++i) {
      const RegistrationResult reg =
          register_target(result.points, tris, target_pts[i], target_tris[i], grid, inner,
                          &result.momenta[i]);
      result.momenta[i] = reg.momenta;
      kinetic_total += reg.kinetic;
    }

    // (ii) one line-searched gradient step on the template vertices.
    std::vector<GeodesicTrajectory> trajs;
    trajs.reserve(n_subjects);
    Points grad = Points::Zero(result.points.rows(), 3);
    double mismatch_total = 0.0;
    for (std::size_t i = 0; i < n_subjects; ++i) {
      trajs.push_back(shoot_geodesic(grid.points, result.momenta[i], inner.lambda_v, inner.steps,
                                     result.points));
      Points g_surface;
      const double mism =
          varifold_mismatch(trajs[i].x1(), tris, reps[i], inner.lambda_w, &g_surface);
      mismatch_total += inv_s2 * (mism + bb[i]);
      const FlowState g = flow_vjp(trajs[i], Points(0, 3), Points(0, 3), inv_s2 * g_surface);
      grad += g.x;
    }

    const auto cohort_mismatch = [&](const Points& pts) {
      double total = 0.0;
      for (std::size_t i = 0; i < n_subjects; ++i) {
        const Points moved = flow_points(pts, trajs[i]);
        total += inv_s2 * (varifold_mismatch(moved, tris, reps[i], inner.lambda_w) + bb[i]);
      }
      return total;
    };

    const double g2 = grad.squaredNorm();
    const double gmax = grad.rowwise().norm().maxCoeff();
    if (gmax > 1e-10) {
      // Backtrack from a gradient-scaled step: the first trial moves the
      // fastest vertex a quarter of the kernel width, so step sizes stay
      // meaningful regardless of sigma or mesh scale.
      double t = 0.25 * inner.lambda_v / gmax;
      for (int halving = 0; halving < inner.max_halvings; ++halving) {
        const Points trial = result.points - t * grad;
        const double trial_mismatch = cohort_mismatch(trial);
        if (trial_mismatch <= mismatch_total - inner.armijo_c * t * g2) {
          result.points = trial;
          mismatch_total = trial_mismatch;
          break;
        }
        t *= 0.5;
      }
    }

    const double total = mismatch_total + kinetic_total;
    result.cost_history.push_back(total);
    if (std::isfinite(previous_total) &&
        std::abs(previous_total - total) <= opts.rel_tol * std::max(std::abs(previous_total), 1e-30)) {
      result.converged = true;
      break;
    }
    previous_total = total;
  }
  return result;
}

double reconstruction_error(const Points& a, const Points& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("reconstruction_error: vertex count mismatch");
  if (a.rows() == 0) return 0.0;
  return (a - b).rowwise().norm().mean();
}

}  // namespace cfield
