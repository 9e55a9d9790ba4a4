#include "test_common.hpp"

#include <cmath>

#include "cfield/idealized.hpp"
#include "cfield/mesh.hpp"
#include "cfield/rng.hpp"
#include "cfield/warp.hpp"

using namespace cfield;

namespace {

Points random_points(int n, double radius, Rng& rng) {
  Points pts(n, 3);
  for (int i = 0; i < n; ++i)
    pts.row(i) << rng.uniform(-radius, radius), rng.uniform(-radius, radius),
        rng.uniform(-radius, radius);
  return pts;
}

}  // namespace

TEST_CASE("constant displacement is reproduced exactly everywhere") {
  Rng rng(3);
  const Points centers = random_points(40, 10.0, rng);
  MatX disp(40, 3);
  disp.rowwise() = Eigen::RowVector3d(1.5, -2.0, 0.25);
  const RbfWarp warp = fit_rbf_warp(centers, disp, 6.0);

  CHECK(warp.coefficients.cwiseAbs().maxCoeff() < 1e-9);
  CHECK((warp.constant - Vec3(1.5, -2.0, 0.25)).cwiseAbs().maxCoeff() < 1e-10);

  const Points far = random_points(20, 200.0, rng);
  const MatX out = rbf_displacement(warp, far);
  for (int i = 0; i < 20; ++i)
    CHECK((out.row(i) - disp.row(0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("zero displacement stays zero and interpolation honors the data") {
  Rng rng(11);
  const Points centers = random_points(60, 12.0, rng);

  const RbfWarp zero = fit_rbf_warp(centers, MatX::Zero(60, 3), 6.0);
  CHECK(rbf_displacement(zero, random_points(10, 30.0, rng)).cwiseAbs().maxCoeff() < 1e-12);

  MatX disp(60, 3);
  for (int i = 0; i < 60; ++i)
    disp.row(i) << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
  const RbfWarp warp = fit_rbf_warp(centers, disp, 6.0, 1e-8);
  const MatX at_centers = rbf_displacement(warp, centers);
  CHECK((at_centers - disp).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("smooth fields transfer from a surface into the volume") {
  const Mesh box = make_box_mesh(Vec3(0, 0, 0), Vec3(10, 10, 10), 2.0);
  const SurfaceMesh boundary = extract_surface(box, boundary_faces(box));

  auto field = [](const Vec3& p) {
    return Vec3(0.5 * std::sin(p.x() / 10.0), 0.5 * std::cos(p.y() / 10.0), p.z() / 20.0);
  };
  const Eigen::Index nb = boundary.points.rows();
  MatX disp(nb, 3);
  for (Eigen::Index i = 0; i < nb; ++i)
    disp.row(i) = field(boundary.points.row(i).transpose()).transpose();

  const RbfWarp warp = fit_rbf_warp(boundary.points, disp, 6.0);
  const Mesh warped = warp_mesh(box, warp);

  REQUIRE(warped.points.rows() == box.points.rows());
  CHECK((warped.tets.array() == box.tets.array()).all());
  CHECK((warped.tris.array() == box.tris.array()).all());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < box.points.rows(); ++i) {
    const Vec3 p = box.points.row(i).transpose();
    const Vec3 expected = p + field(p);
    worst = std::max(worst, (warped.points.row(i).transpose() - expected).norm());
  }
  CHECK(worst < 0.05);  // field amplitude 0.5 mm: interior error under 10%

  // Connectivity and tet orientation survive a smooth warp of this size.
  validate_mesh(warped);
}

TEST_CASE("biventricular template morphs without inverting elements") {
  BiventricularShape shape;
  const Mesh volume = make_biventricular_mesh(shape, 1.8);
  const Mesh surface = make_biventricular_surface(shape, 1.2, 2.4);

  // Gentle anisotropic inflation of the surface, as a stand-in for a
  // reconstructed cohort shape.
  const Eigen::Index ns = surface.points.rows();
  MatX disp(ns, 3);
  for (Eigen::Index i = 0; i < ns; ++i) {
    const Vec3 p = surface.points.row(i).transpose();
    disp.row(i) = Vec3(0.05 * p.x(), 0.03 * p.y(), 0.04 * p.z()).transpose();
  }
  const RbfWarp warp = fit_rbf_warp(surface.points, disp, 6.0);
  const Mesh morphed = warp_mesh(volume, warp);
  validate_mesh(morphed);

  for (Eigen::Index t = 0; t < morphed.tets.rows(); ++t) {
    const double vol = tet_signed_volume(morphed.points.row(morphed.tets(t, 0)).transpose(),
                                         morphed.points.row(morphed.tets(t, 1)).transpose(),
                                         morphed.points.row(morphed.tets(t, 2)).transpose(),
                                         morphed.points.row(morphed.tets(t, 3)).transpose());
    REQUIRE(vol > 0.0);
  }
}

TEST_CASE("warp input validation") {
  Rng rng(5);
  const Points centers = random_points(10, 5.0, rng);
  CHECK_THROWS_AS(fit_rbf_warp(Points(0, 3), MatX(0, 3), 6.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_rbf_warp(centers, MatX::Zero(9, 3), 6.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_rbf_warp(centers, MatX::Zero(10, 3), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_rbf_warp(centers, MatX::Zero(10, 3), 6.0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(rbf_displacement(RbfWarp{}, centers), std::invalid_argument);
}
