#include "cfield/warp.hpp"

#include <stdexcept>

#include <Eigen/LU>

#include "cfield/lddmm.hpp"

namespace cfield {

RbfWarp fit_rbf_warp(const Points& centers, const MatX& displacements, double width,
                     double ridge) {
  const Eigen::Index n = centers.rows();
  if (n < 1) throw std::invalid_argument("rbf warp: no centers");
  if (displacements.rows() != n || displacements.cols() != 3)
    throw std::invalid_argument("rbf warp: displacement matrix must be n x 3");
  if (!(width > 0.0)) throw std::invalid_argument("rbf warp: width must be positive");
  if (ridge < 0.0) throw std::invalid_argument("rbf warp: negative ridge");

  MatX system = MatX::Zero(n + 1, n + 1);
  system.topLeftCorner(n, n) = gaussian_kernel(centers, centers, width);
  system.topLeftCorner(n, n).diagonal().array() += ridge;
  system.topRightCorner(n, 1).setOnes();
  system.bottomLeftCorner(1, n).setOnes();

  MatX rhs = MatX::Zero(n + 1, 3);
  rhs.topRows(n) = displacements;
  const MatX solution = system.partialPivLu().solve(rhs);

  RbfWarp warp;
  warp.centers = centers;
  warp.coefficients = solution.topRows(n);
  warp.constant = solution.row(n).transpose();
  warp.width = width;
  return warp;
}

MatX rbf_displacement(const RbfWarp& warp, const Points& queries) {
  if (warp.centers.rows() < 1) throw std::invalid_argument("rbf warp: empty warp");
  MatX out = gaussian_kernel(queries, warp.centers, warp.width) * warp.coefficients;
  out.rowwise() += warp.constant.transpose();
  return out;
}

Mesh warp_mesh(const Mesh& mesh, const RbfWarp& warp) {
  Mesh out = mesh;
  out.points += rbf_displacement(warp, mesh.points);
  return out;
}

}  // namespace cfield
