#include "test_common.hpp"

#include <cmath>

#include "cfield/idealized.hpp"
#include "cfield/lddmm.hpp"
#include "cfield/mesh.hpp"
#include "cfield/rng.hpp"
#include "cfield/varifold.hpp"

using namespace cfield;

namespace {

Points random_points(Rng& rng, int n, double scale) {
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    p.row(i) << rng.uniform(-scale, scale), rng.uniform(-scale, scale),
        rng.uniform(-scale, scale);
  return p;
}

Points random_normal(Rng& rng, int n, double sd) {
  Points p(n, 3);
  for (int i = 0; i < n; ++i) p.row(i) << rng.normal(0, sd), rng.normal(0, sd), rng.normal(0, sd);
  return p;
}

double dot_all(const Points& a, const Points& b) { return (a.array() * b.array()).sum(); }

}  // namespace

TEST_CASE("gaussian kernel basics") {
  Rng rng(5);
  const Points pts = random_points(rng, 5, 10.0);
  const MatX k = gaussian_kernel(pts, pts, 6.0);
  for (int i = 0; i < 5; ++i) CHECK(k(i, i) == doctest::Approx(1.0));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double d2 = (pts.row(i) - pts.row(j)).squaredNorm();
      CHECK(k(i, j) == doctest::Approx(std::exp(-d2 / 36.0)).epsilon(1e-12));
      CHECK(k(i, j) == doctest::Approx(k(j, i)));
    }

  Points two(2, 3);
  two << 0, 0, 0, 6, 0, 0;
  CHECK(gaussian_kernel(two, two, 6.0)(0, 1) == doctest::Approx(std::exp(-1.0)));

  CHECK_THROWS_AS(gaussian_kernel(two, two, 0.0), std::invalid_argument);
}

TEST_CASE("kernel matrices are positive semi-definite") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const Points pts = random_points(rng, 8, 12.0);
    const MatX k = gaussian_kernel(pts, pts, 6.0);
    Eigen::SelfAdjointEigenSolver<MatX> eig(k);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("control grid covers the inflated box") {
  BoundingBox box;
  box.lo = Vec3(-10, -8, -5);
  box.hi = Vec3(12, 9, 6);
  const ControlGrid grid = make_control_grid(box, 6.0);
  const BoundingBox cover = bounding_box(grid.points);
  for (int d = 0; d < 3; ++d) {
    CHECK(cover.lo[d] <= box.lo[d] - 6.0 + 1e-12);
    CHECK(cover.hi[d] >= box.hi[d] + 6.0 - 1e-12);
  }
  CHECK(grid.spacing == 6.0);
}

TEST_CASE("zero momenta is an exact fixed point") {
  Rng rng(7);
  const Points q0 = random_points(rng, 12, 15.0);
  const Points mu0 = Points::Zero(12, 3);
  const GeodesicTrajectory traj = shoot_geodesic(q0, mu0, 6.0, 10);
  CHECK(traj.q1() == q0);
  CHECK(traj.node.back().mu == mu0);
}

TEST_CASE("single control point moves on a straight line") {
  Points q0(1, 3), mu0(1, 3);
  q0 << 1.0, -2.0, 0.5;
  mu0 << 3.0, 4.0, -1.0;
  const GeodesicTrajectory traj = shoot_geodesic(q0, mu0, 6.0, 10);
  CHECK((traj.q1() - (q0 + mu0)).norm() < 1e-12);
  CHECK((traj.node.back().mu - mu0).norm() < 1e-12);
  // Halfway node sits at q0 + 0.5 v.
  CHECK((traj.node[5].q - (q0 + 0.5 * mu0)).norm() < 1e-12);
}

TEST_CASE("hamiltonian is conserved") {
  Rng rng(23);
  Points q0(2, 3);
  q0 << 0, 0, 0, 4, 2, -3;
  const Points mu0 = random_normal(rng, 2, 2.0);
  const GeodesicTrajectory traj = shoot_geodesic(q0, mu0, 6.0, 10);
  const double h0 = hamiltonian(traj.node.front().q, traj.node.front().mu, 6.0);
  const double h1 = hamiltonian(traj.q1(), traj.node.back().mu, 6.0);
  CHECK(std::abs(h1 - h0) / std::abs(h0) < 1e-6);

  for (int trial = 0; trial < 5; ++trial) {
    const Points q = random_points(rng, 20, 15.0);
    const Points mu = random_normal(rng, 20, 1.5);
    const GeodesicTrajectory t = shoot_geodesic(q, mu, 6.0, 10);
    const double a = hamiltonian(q, mu, 6.0);
    const double b = hamiltonian(t.q1(), t.node.back().mu, 6.0);
    CHECK(std::abs(b - a) / std::abs(a) < 1e-6);
  }
}

TEST_CASE("flow of passive points") {
  Rng rng(31);

  SUBCASE("zero momenta leaves points untouched") {
    const Points q0 = random_points(rng, 6, 10.0);
    const Points x0 = random_points(rng, 9, 10.0);
    const GeodesicTrajectory traj = shoot_geodesic(q0, Points::Zero(6, 3), 6.0, 10);
    CHECK(flow_points(x0, traj) == x0);
  }

  SUBCASE("point riding a single control point translates exactly") {
    Points q0(1, 3), mu0(1, 3), x0(1, 3);
    q0 << 0.5, 0.25, -1.0;
    mu0 << 2.0, -1.0, 0.5;
    x0 = q0;
    const GeodesicTrajectory traj = shoot_geodesic(q0, mu0, 6.0, 10);
    CHECK((flow_points(x0, traj) - (x0 + mu0)).norm() < 1e-12);
  }

  SUBCASE("points far from all control points stay put") {
    const Points q0 = random_points(rng, 5, 5.0);
    const Points mu0 = random_normal(rng, 5, 2.0);
    Points x0(1, 3);
    x0 << 5.0 + 60.0, 0, 0;  // 10 λ away from anything
    const GeodesicTrajectory traj = shoot_geodesic(q0, mu0, 6.0, 10);
    CHECK((flow_points(x0, traj) - x0).norm() < 1e-10);
  }

  SUBCASE("carried points equal separately flowed points bitwise") {
    const Points q0 = random_points(rng, 6, 8.0);
    const Points mu0 = random_normal(rng, 6, 1.5);
    const Points x0 = random_points(rng, 7, 8.0);
    const GeodesicTrajectory carried = shoot_geodesic(q0, mu0, 6.0, 10, x0);
    const GeodesicTrajectory bare = shoot_geodesic(q0, mu0, 6.0, 10);
    CHECK(carried.x1() == flow_points(x0, bare));
  }

  SUBCASE("inverse flow returns points") {
    const Points q0 = random_points(rng, 4, 6.0);
    const Points mu0 = random_normal(rng, 4, 1.2);
    const Points x0 = random_points(rng, 10, 8.0);
    const GeodesicTrajectory fwd = shoot_geodesic(q0, mu0, 6.0, 10);
    const Points x1 = flow_points(x0, fwd);
    const GeodesicTrajectory back =
        shoot_geodesic(fwd.q1(), Points(-fwd.node.back().mu), 6.0, 10);
    const Points x0_back = flow_points(x1, back);
    CHECK((x0_back - x0).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("flow vjp directional derivative matches finite differences") {
  Rng rng(41);
  const double lambda = 1.7;
  for (int trial = 0; trial < 6; ++trial) {
    const Points q0 = random_points(rng, 5, 3.0);
    const Points mu0 = random_normal(rng, 5, 0.7);
    const Points x0 = random_points(rng, 4, 3.0);

    const Points wq = random_normal(rng, 5, 1.0);
    const Points wmu = random_normal(rng, 5, 1.0);
    const Points wx = random_normal(rng, 4, 1.0);

    const Points dq = random_normal(rng, 5, 1.0);
    const Points dmu = random_normal(rng, 5, 1.0);
    const Points dx = random_normal(rng, 4, 1.0);

    const auto loss = [&](double eps) {
      const GeodesicTrajectory t =
          shoot_geodesic(q0 + eps * dq, mu0 + eps * dmu, lambda, 6, x0 + eps * dx);
      return dot_all(wq, t.q1()) + dot_all(wmu, t.node.back().mu) + dot_all(wx, t.x1());
    };

    const GeodesicTrajectory traj = shoot_geodesic(q0, mu0, lambda, 6, x0);
    const FlowState grad = flow_vjp(traj, wq, wmu, wx);
    const double analytic = dot_all(grad.q, dq) + dot_all(grad.mu, dmu) + dot_all(grad.x, dx);

    const double eps = 1e-6;
    const double fd = (loss(eps) - loss(-eps)) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
    CHECK(std::abs(fd - analytic) / denom < 1e-6);
  }
}

TEST_CASE("flow vjp matches finite differences") {
  Rng rng(43);
  const double lambda = 1.9;
  const int nq = 4, nx = 3, steps = 5;

  const Points q0 = random_points(rng, nq, 2.5);
  const Points mu0 = random_normal(rng, nq, 0.8);
  const Points x0 = random_points(rng, nx, 2.5);

  const Points wq = random_normal(rng, nq, 1.0);
  const Points wmu = random_normal(rng, nq, 1.0);
  const Points wx = random_normal(rng, nx, 1.0);

  const auto loss = [&](const Points& q, const Points& mu, const Points& x) {
    const GeodesicTrajectory t = shoot_geodesic(q, mu, lambda, steps, x);
    return dot_all(wq, t.q1()) + dot_all(wmu, t.node.back().mu) + dot_all(wx, t.x1());
  };

  const GeodesicTrajectory traj = shoot_geodesic(q0, mu0, lambda, steps, x0);
  const FlowState grad = flow_vjp(traj, wq, wmu, wx);

  const double eps = 1e-6;
  int checked = 0;
  for (const auto& [slot, row, col] : std::vector<std::tuple<int, int, int>>{
           {0, 0, 0}, {0, 2, 1}, {1, 0, 2}, {1, 3, 0}, {1, 1, 1}, {2, 0, 1}, {2, 2, 2}}) {
    Points qp = q0, qm = q0, mup = mu0, mum = mu0, xp = x0, xm = x0;
    double analytic = 0.0;
    if (slot == 0) {
      qp(row, col) += eps;
      qm(row, col) -= eps;
      analytic = grad.q(row, col);
    } else if (slot == 1) {
      mup(row, col) += eps;
      mum(row, col) -= eps;
      analytic = grad.mu(row, col);
    } else {
      xp(row, col) += eps;
      xm(row, col) -= eps;
      analytic = grad.x(row, col);
    }
    const double fd = (loss(qp, mup, xp) - loss(qm, mum, xm)) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
    CHECK(std::abs(fd - analytic) / denom < 1e-6);
    ++checked;
  }
  CHECK(checked == 7);
}

TEST_CASE("varifold distance properties") {
  const Mesh a = make_sphere_surface(10.0, 5);
  Mesh b = make_sphere_surface(10.0, 5);
  b.points *= 1.2;

  CHECK(std::abs(varifold_distance_sq(a.points, a.tris, a.points, a.tris, 6.0)) < 1e-8);

  const double ab = varifold_distance_sq(a.points, a.tris, b.points, b.tris, 6.0);
  const double ba = varifold_distance_sq(b.points, b.tris, a.points, a.tris, 6.0);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  CHECK(ab > 0.0);
}

TEST_CASE("varifold closed form for two parallel unit triangles") {
  // Right triangles with legs 2 and 1: area exactly 1.
  Points pa(3, 3), pb(3, 3);
  pa << 0, 0, 0, 2, 0, 0, 0, 1, 0;
  pb = pa;
  pb.col(2).array() += 6.0;
  TriCells tri(1, 3);
  tri << 0, 1, 2;
  const double d2 = varifold_distance_sq(pa, tri, pb, tri, 6.0);
  CHECK(d2 == doctest::Approx(2.0 - 2.0 * std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("degenerate triangles are rejected") {
  Points p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 2, 0, 0;  // collinear
  TriCells tri(1, 3);
  tri << 0, 1, 2;
  CHECK_THROWS_AS(varifold_rep(p, tri), std::runtime_error);
}

TEST_CASE("varifold mismatch gradient matches finite differences") {
  Rng rng(51);
  Points pa(5, 3), pb(4, 3);
  pa = random_points(rng, 5, 2.0);
  pb = random_points(rng, 4, 2.0);
  TriCells ta(3, 3), tb(2, 3);
  ta << 0, 1, 2, 1, 3, 2, 2, 3, 4;
  tb << 0, 1, 2, 1, 3, 2;
  const double lambda_w = 2.5;
  const VarifoldRep repb = varifold_rep(pb, tb);

  Points grad;
  varifold_mismatch(pa, ta, repb, lambda_w, &grad);

  const double eps = 1e-6;
  for (const auto& [row, col] : std::vector<std::pair<int, int>>{{0, 0}, {2, 1}, {4, 2}, {1, 0}}) {
    Points pp = pa, pm = pa;
    pp(row, col) += eps;
    pm(row, col) -= eps;
    const double fp = varifold_mismatch(pp, ta, repb, lambda_w);
    const double fm = varifold_mismatch(pm, ta, repb, lambda_w);
    const double fd = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(grad(row, col)), 1e-8});
    CHECK(std::abs(fd - grad(row, col)) / denom < 1e-6);
  }
}

TEST_CASE("registration gradient matches finite differences") {
  Rng rng(61);
  const Mesh tmpl = make_sphere_surface(6.0, 3);
  Mesh target = make_sphere_surface(6.0, 3);
  target.points.col(0) *= 1.15;

  const ControlGrid grid = make_control_grid(bounding_box(target.points), 8.0);
  RegistrationOptions opts;
  opts.lambda_v = 6.0;
  opts.lambda_w = 6.0;
  opts.sigma = 0.5;

  const MatX kq = gaussian_kernel(grid.points, grid.points, opts.lambda_v);
  const VarifoldRep rep = varifold_rep(target.points, target.tris);
  const double inv_s2 = 1.0 / (opts.sigma * opts.sigma);

  const auto cost = [&](const Points& mu) {
    const GeodesicTrajectory traj =
        shoot_geodesic(grid.points, mu, opts.lambda_v, opts.steps, tmpl.points);
    const double mism = varifold_mismatch(traj.x1(), tmpl.tris, rep, opts.lambda_w);
    return inv_s2 * mism + (mu.array() * (kq * mu).array()).sum();
  };
  const auto gradient = [&](const Points& mu) {
    const GeodesicTrajectory traj =
        shoot_geodesic(grid.points, mu, opts.lambda_v, opts.steps, tmpl.points);
    Points gs;
    varifold_mismatch(traj.x1(), tmpl.tris, rep, opts.lambda_w, &gs);
    const FlowState g = flow_vjp(traj, Points(0, 3), Points(0, 3), Points(inv_s2 * gs));
    return Points(g.mu + 2.0 * (kq * mu));
  };

  const Points mu = random_normal(rng, static_cast<int>(grid.points.rows()), 0.05);
  const Points g = gradient(mu);

  // Directional probes: along the gradient itself (catches scale and sign
  // errors with a large, noise-proof reference) and along random directions.
  std::vector<Points> dirs;
  dirs.push_back(Points(g / g.norm()));
  for (int i = 0; i < 2; ++i) {
    Points d = random_normal(rng, static_cast<int>(grid.points.rows()), 1.0);
    dirs.push_back(Points(d / d.norm()));
  }
  const double eps = 1e-4;
  for (const Points& d : dirs) {
    const double analytic = dot_all(g, d);
    const double fd = (cost(mu + eps * d) - cost(mu - eps * d)) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6 * g.norm()});
    CHECK(std::abs(fd - analytic) / denom < 1e-4);
  }
}

TEST_CASE("registering a surface onto itself stays at zero") {
  const Mesh sphere = make_sphere_surface(8.0, 4);
  const ControlGrid grid = make_control_grid(bounding_box(sphere.points), 6.0);
  const RegistrationResult r =
      register_target(sphere.points, sphere.tris, sphere.points, sphere.tris, grid);
  CHECK(r.converged);
  CHECK(r.momenta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(r.varifold_sq) < 1e-8);
  CHECK(r.kinetic == 0.0);
}

TEST_CASE("sphere to ellipsoid registration") {
  const Mesh tmpl = make_sphere_surface(10.0, 4);
  Mesh target = make_sphere_surface(10.0, 4);
  target.points.col(0) *= 1.3;

  Points all(tmpl.points.rows() + target.points.rows(), 3);
  all << tmpl.points, target.points;
  const ControlGrid grid = make_control_grid(bounding_box(all), 6.0);

  RegistrationOptions opts;
  opts.sigma = 0.3;
  opts.max_iterations = 80;
  opts.rel_tol = 1e-6;

  const double d0 = std::sqrt(
      varifold_distance_sq(tmpl.points, tmpl.tris, target.points, target.tris, opts.lambda_w));
  const RegistrationResult r =
      register_target(tmpl.points, tmpl.tris, target.points, target.tris, grid, opts);
  const double d1 = std::sqrt(std::max(0.0, r.varifold_sq));

  CHECK(d1 <= 0.1 * d0);
  for (std::size_t i = 1; i < r.cost_history.size(); ++i)
    CHECK(r.cost_history[i] < r.cost_history[i - 1]);

  SUBCASE("smaller sigma does not worsen the data term") {
    RegistrationOptions tight = opts;
    tight.sigma = opts.sigma / 10.0;
    const RegistrationResult r2 =
        register_target(tmpl.points, tmpl.tris, target.points, target.tris, grid, tight);
    CHECK(r2.varifold_sq <= r.varifold_sq + 1e-9);
  }
}

TEST_CASE("template estimation on an identical cohort") {
  const Mesh sphere = make_sphere_surface(7.0, 4);
  const std::vector<Points> cohort = {sphere.points, sphere.points, sphere.points};
  const std::vector<TriCells> tris = {sphere.tris, sphere.tris, sphere.tris};
  const ControlGrid grid = make_control_grid(bounding_box(sphere.points), 6.0);

  TemplateOptions opts;
  opts.max_outer = 5;
  const TemplateResult t =
      estimate_template(sphere.points, sphere.tris, cohort, tris, grid, opts);

  CHECK(t.converged);
  CHECK((t.points - sphere.points).cwiseAbs().maxCoeff() < 1e-12);
  for (const Points& mu : t.momenta) CHECK(mu.norm() < 1e-6);
}

TEST_CASE("template of two spheres lands between them") {
  Mesh small = make_sphere_surface(0.9, 4);
  Mesh large = make_sphere_surface(1.1, 4);

  Points all(small.points.rows() + large.points.rows(), 3);
  all << small.points, large.points;
  const double lambda = 0.6;
  const ControlGrid grid = make_control_grid(bounding_box(all), lambda);

  TemplateOptions opts;
  opts.reg.lambda_v = lambda;
  opts.reg.lambda_w = lambda;
  opts.max_outer = 24;
  opts.inner_iterations = 2;
  opts.rel_tol = 1e-7;

  const TemplateResult t = estimate_template(
      small.points, small.tris, {small.points, large.points}, {small.tris, large.tris}, grid, opts);

  const double mean_radius = t.points.rowwise().norm().mean();
  CHECK(mean_radius == doctest::Approx(1.0).epsilon(0.02));

  for (std::size_t i = 1; i < t.cost_history.size(); ++i)
    CHECK(t.cost_history[i] <= t.cost_history[i - 1] + 1e-9);
}

TEST_CASE("reconstruction error") {
  Rng rng(71);
  const Points a = random_points(rng, 50, 10.0);
  CHECK(reconstruction_error(a, a) == 0.0);

  Points b = a;
  b.col(0).array() += 1.0;
  CHECK(reconstruction_error(a, b) == doctest::Approx(1.0));

  const Points c = random_points(rng, 49, 10.0);
  CHECK_THROWS_AS(reconstruction_error(a, c), std::invalid_argument);
}
