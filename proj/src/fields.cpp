#include "cfield/fields.hpp"

#include <Eigen/Sparse>
#include <cmath>
#include <set>
#include <stdexcept>

namespace cfield {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Gradients of the four barycentric basis functions and the tet volume.
struct TetBasis {
  Eigen::Matrix<double, 4, 3> grad;
  double volume;
};

TetBasis tet_basis(const Mesh& mesh, Eigen::Index t) {
  const Vec3 p0 = mesh.points.row(mesh.tets(t, 0)).transpose();
  Mat3 edges;
  for (int a = 0; a < 3; ++a)
    edges.col(a) = mesh.points.row(mesh.tets(t, a + 1)).transpose() - p0;
  const double det = edges.determinant();
  if (det <= 0.0) throw std::runtime_error("fields: non-positive tet volume");
  const Mat3 inv = edges.inverse();
  TetBasis basis;
  for (int a = 0; a < 3; ++a) basis.grad.row(a + 1) = inv.row(a);
  basis.grad.row(0) = -(basis.grad.row(1) + basis.grad.row(2) + basis.grad.row(3));
  basis.volume = det / 6.0;
  return basis;
}

SpMat assemble_stiffness(const Mesh& mesh) {
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.tets.rows()) * 16);
  for (Eigen::Index t = 0; t < mesh.tets.rows(); ++t) {
    const TetBasis basis = tet_basis(mesh, t);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        triplets.emplace_back(mesh.tets(t, a), mesh.tets(t, b),
                              basis.volume * basis.grad.row(a).dot(basis.grad.row(b)));
  }
  SpMat k(mesh.n_points(), mesh.n_points());
  k.setFromTriplets(triplets.begin(), triplets.end());
  return k;
}

}  // namespace

ScalarField solve_laplace(const Mesh& mesh,
                          const std::vector<std::pair<std::string, double>>& dirichlet,
                          const std::string& name) {
  if (mesh.tets.rows() == 0) throw std::invalid_argument("solve_laplace: mesh has no tets");
  const int n = mesh.n_points();

  std::vector<char> fixed(n, 0);
  VecX values = VecX::Zero(n);
  for (const auto& [label, value] : dirichlet) {
    if (!mesh.has_label(label))
      throw std::invalid_argument("solve_laplace: unknown label '" + label + "'");
    const std::vector<int>& nodes = mesh.label(label);
    if (nodes.empty()) throw std::invalid_argument("solve_laplace: empty label '" + label + "'");
    for (int v : nodes) {
      if (fixed[v] && values(v) != value)
        throw std::invalid_argument("solve_laplace: conflicting Dirichlet values at node " +
                                    std::to_string(v));
      fixed[v] = 1;
      values(v) = value;
    }
  }
  if (dirichlet.empty()) throw std::invalid_argument("solve_laplace: no Dirichlet data");

  std::vector<int> free_index(n, -1);
  std::vector<int> free_nodes;
  for (int v = 0; v < n; ++v)
    if (!fixed[v]) {
      free_index[v] = static_cast<int>(free_nodes.size());
      free_nodes.push_back(v);
    }

  ScalarField field;
  field.name = name;
  field.dirichlet = dirichlet;

  if (free_nodes.empty()) {
    field.values = values;
    return field;
  }

  const SpMat full = assemble_stiffness(mesh);
  const Eigen::Index nf = static_cast<Eigen::Index>(free_nodes.size());
  std::vector<Triplet> triplets;
  VecX rhs = VecX::Zero(nf);
  for (int col = 0; col < full.outerSize(); ++col) {
    for (SpMat::InnerIterator it(full, col); it; ++it) {
      const int r = static_cast<int>(it.row());
      const int c = static_cast<int>(it.col());
      if (free_index[r] < 0) continue;
      if (free_index[c] >= 0)
        triplets.emplace_back(free_index[r], free_index[c], it.value());
      else
        rhs(free_index[r]) -= it.value() * values(c);
    }
  }
  SpMat reduced(nf, nf);
  reduced.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(1e-10);
  cg.setMaxIterations(8 * nf);
  cg.compute(reduced);
  const VecX solution = cg.solve(rhs);

  const double rhs_norm = rhs.norm();
  const double residual = (reduced * solution - rhs).norm();
  if (!(residual <= 1e-8 * std::max(rhs_norm, 1e-30)))
    throw std::runtime_error("solve_laplace: singular or ill-posed system (residual " +
                             std::to_string(residual) + ")");

  for (Eigen::Index i = 0; i < nf; ++i) values(free_nodes[i]) = solution(i);
  field.values = values;
  return field;
}

ScalarField apicobasal_coordinate(const Mesh& mesh) {
  return solve_laplace(mesh, {{"apex", 0.0}, {"base", 1.0}}, "phi_ab");
}

ScalarField transmural_coordinate(const Mesh& mesh) {
  std::vector<std::pair<std::string, double>> dirichlet;
  if (mesh.has_label("lv_endo") && !mesh.label("lv_endo").empty())
    dirichlet.push_back({"lv_endo", 0.0});
  if (mesh.has_label("rv_endo") && !mesh.label("rv_endo").empty())
    dirichlet.push_back({"rv_endo", 0.0});
  dirichlet.push_back({"epi", 1.0});
  return solve_laplace(mesh, dirichlet, "phi_tm");
}

Points nodal_gradient(const Mesh& mesh, const VecX& values) {
  if (values.size() != mesh.n_points())
    throw std::invalid_argument("nodal_gradient: value count mismatch");
  Points grad = Points::Zero(mesh.n_points(), 3);
  VecX weight = VecX::Zero(mesh.n_points());
  for (Eigen::Index t = 0; t < mesh.tets.rows(); ++t) {
    const TetBasis basis = tet_basis(mesh, t);
    Vec3 g = Vec3::Zero();
    for (int a = 0; a < 4; ++a) g += values(mesh.tets(t, a)) * basis.grad.row(a).transpose();
    for (int a = 0; a < 4; ++a) {
      grad.row(mesh.tets(t, a)) += basis.volume * g.transpose();
      weight(mesh.tets(t, a)) += basis.volume;
    }
  }
  for (int v = 0; v < mesh.n_points(); ++v) {
    if (weight(v) <= 0.0) throw std::runtime_error("nodal_gradient: isolated node");
    grad.row(v) /= weight(v);
  }
  return grad;
}

namespace {

// Replaces near-zero rows by the average of their good neighbors, a few
// rounds; returns indices that could not be repaired.
std::vector<int> repair_zero_rows(Points& rows, const std::vector<std::vector<int>>& adjacency,
                                  double tol) {
  std::vector<char> good(rows.rows(), 0);
  for (Eigen::Index v = 0; v < rows.rows(); ++v) good[v] = rows.row(v).norm() > tol ? 1 : 0;
  for (int round = 0; round < 10; ++round) {
    bool changed = false;
    for (Eigen::Index v = 0; v < rows.rows(); ++v) {
      if (good[v]) continue;
      Vec3 sum = Vec3::Zero();
      int count = 0;
      for (int u : adjacency[v])
        if (good[u]) {
          sum += rows.row(u).transpose();
          ++count;
        }
      if (count > 0 && sum.norm() > tol) {
        rows.row(v) = sum.transpose() / count;
        good[v] = 1;
        changed = true;
      }
    }
    if (!changed) break;
  }
  std::vector<int> bad;
  for (Eigen::Index v = 0; v < rows.rows(); ++v)
    if (!good[v]) bad.push_back(static_cast<int>(v));
  return bad;
}

}  // namespace

FiberField generate_fibers(const Mesh& mesh, const ScalarField& phi_ab,
                           const ScalarField& phi_tm, double alpha_epi_deg,
                           double alpha_endo_deg, double beta_epi_deg, double beta_endo_deg) {
  const int n = mesh.n_points();
  Points grad_tm = nodal_gradient(mesh, phi_tm.values);
  Points grad_ab = nodal_gradient(mesh, phi_ab.values);

  std::vector<std::vector<int>> adjacency(n);
  {
    std::set<std::pair<int, int>> seen;
    for (Eigen::Index t = 0; t < mesh.tets.rows(); ++t)
      for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b) {
          int u = mesh.tets(t, a), v = mesh.tets(t, b);
          if (u > v) std::swap(u, v);
          if (seen.insert({u, v}).second) {
            adjacency[u].push_back(v);
            adjacency[v].push_back(u);
          }
        }
  }

  const double tol_tm = 1e-6 * grad_tm.rowwise().norm().mean();
  std::vector<int> bad = repair_zero_rows(grad_tm, adjacency, tol_tm);
  if (!bad.empty())
    throw std::runtime_error("generate_fibers: unresolvable zero transmural gradient at node " +
                             std::to_string(bad.front()));

  // Longitudinal direction: apicobasal gradient with its transmural
  // component removed.  Projection can zero it out, so repair afterwards.
  Points longitudinal(n, 3);
  for (int v = 0; v < n; ++v) {
    const Vec3 et = grad_tm.row(v).normalized().transpose();
    const Vec3 ga = grad_ab.row(v).transpose();
    longitudinal.row(v) = (ga - ga.dot(et) * et).transpose();
  }
  const double tol_ab = 1e-6 * grad_ab.rowwise().norm().mean();
  bad = repair_zero_rows(longitudinal, adjacency, tol_ab);
  if (!bad.empty())
    throw std::runtime_error("generate_fibers: unresolvable zero longitudinal direction at node " +
                             std::to_string(bad.front()));

  const double deg = M_PI / 180.0;
  FiberField out;
  out.fiber = Points(n, 3);
  out.sheet = Points(n, 3);
  out.normal = Points(n, 3);
  for (int v = 0; v < n; ++v) {
    const Vec3 et = grad_tm.row(v).normalized().transpose();
    Vec3 el = longitudinal.row(v).transpose();
    el -= el.dot(et) * et;  // re-project: repair may have mixed directions in
    el.normalize();
    const Vec3 ec = el.cross(et);

    const double d = std::clamp(phi_tm.values(v), 0.0, 1.0);
    const double alpha = (alpha_endo_deg + (alpha_epi_deg - alpha_endo_deg) * d) * deg;
    const double beta = (beta_endo_deg + (beta_epi_deg - beta_endo_deg) * d) * deg;

    const Vec3 f0 = std::cos(alpha) * ec + std::sin(alpha) * el;
    const Vec3 s0 = std::cos(beta) * et + std::sin(beta) * f0.cross(et);
    out.fiber.row(v) = f0.transpose();
    out.sheet.row(v) = s0.transpose();
    out.normal.row(v) = f0.cross(s0).transpose();
  }
  return out;
}

FiberField generate_fibers(const Mesh& mesh, double alpha_epi_deg, double alpha_endo_deg,
                           double beta_epi_deg, double beta_endo_deg) {
  const ScalarField ab = apicobasal_coordinate(mesh);
  const ScalarField tm = transmural_coordinate(mesh);
  return generate_fibers(mesh, ab, tm, alpha_epi_deg, alpha_endo_deg, beta_epi_deg,
                         beta_endo_deg);
}

}  // namespace cfield
