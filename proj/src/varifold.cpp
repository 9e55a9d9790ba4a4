#include "cfield/varifold.hpp"

#include <cmath>
#include <stdexcept>

#include "cfield/geometry.hpp"

namespace cfield {

VarifoldRep varifold_rep(const Points& pts, const TriCells& tris) {
  VarifoldRep rep;
  rep.centroids.resize(tris.rows(), 3);
  rep.normals.resize(tris.rows(), 3);
  for (int t = 0; t < tris.rows(); ++t) {
    const Vec3 a = pts.row(tris(t, 0)).transpose();
    const Vec3 b = pts.row(tris(t, 1)).transpose();
    const Vec3 c = pts.row(tris(t, 2)).transpose();
    const Vec3 n = triangle_area_normal(a, b, c);
    if (n.norm() < 1e-14)
      throw std::runtime_error("varifold_rep: zero-area triangle " + std::to_string(t));
    rep.centroids.row(t) = triangle_centroid(a, b, c).transpose();
    rep.normals.row(t) = n.transpose();
  }
  return rep;
}

double varifold_product(const VarifoldRep& a, const VarifoldRep& b, double lambda_w) {
  if (lambda_w <= 0.0) throw std::invalid_argument("varifold_product: lambda_w must be positive");
  const double inv_l2 = 1.0 / (lambda_w * lambda_w);
  const VecX a_len = a.normals.rowwise().norm();
  const VecX b_len = b.normals.rowwise().norm();
  double sum = 0.0;
  for (int i = 0; i < a.centroids.rows(); ++i) {
    const VecX d2 = (b.centroids.rowwise() - a.centroids.row(i)).rowwise().squaredNorm();
    const VecX dot = b.normals * a.normals.row(i).transpose();
    sum += ((-d2 * inv_l2).array().exp() * dot.array().square() /
            (b_len.array() * a_len(i)))
               .sum();
  }
  return sum;
}

double varifold_distance_sq(const Points& a_pts, const TriCells& a_tris,
                            const Points& b_pts, const TriCells& b_tris, double lambda_w) {
  const VarifoldRep a = varifold_rep(a_pts, a_tris);
  const VarifoldRep b = varifold_rep(b_pts, b_tris);
  return varifold_product(a, a, lambda_w) + varifold_product(b, b, lambda_w) -
         2.0 * varifold_product(a, b, lambda_w);
}

namespace {

// Accumulates d(term)/d(centroid_i) and d(term)/d(normal_i) for every facet i
// of A against one fixed facet bank, scaled by `weight`, and returns the
// summed product.  For the symmetric ⟨A,A⟩ case the slot-j contributions
// equal the slot-i ones after relabeling, so weight 2 with bank = A yields
// the full gradient.
double accumulate_facet_gradient(const VarifoldRep& a, const VecX& a_len,
                                 const VarifoldRep& bank, const VecX& bank_len,
                                 double lambda_w, double weight,
                                 Points& grad_c, Points& grad_n) {
  const double inv_l2 = 1.0 / (lambda_w * lambda_w);
  double total = 0.0;
  for (int i = 0; i < a.centroids.rows(); ++i) {
    const Eigen::Matrix<double, Eigen::Dynamic, 3> dc =
        bank.centroids.rowwise() - a.centroids.row(i);
    const VecX d2 = dc.rowwise().squaredNorm();
    const VecX k = (-d2 * inv_l2).array().exp();
    const VecX u = bank.normals * a.normals.row(i).transpose();
    const double ai = a_len(i);
    const VecX m = u.array().square() / (bank_len.array() * ai);
    total += (k.array() * m.array()).sum();

    // d/dc_i of exp(−‖c_i−c_bank‖²/λ²) = +2/λ² k (c_bank − c_i) — times m.
    const VecX wc = 2.0 * inv_l2 * (k.array() * m.array());
    grad_c.row(i) += weight * (wc.transpose() * dc);

    // d/dn_i of u²/(‖n_i‖‖n_bank‖) = 2u n_bank/(‖n_i‖‖n_bank‖) − u² n_i/(‖n_i‖³‖n_bank‖).
    const VecX w1 = k.array() * 2.0 * u.array() / (bank_len.array() * ai);
    const double w2 = (k.array() * u.array().square() / bank_len.array()).sum() / (ai * ai * ai);
    grad_n.row(i) += weight * (w1.transpose() * bank.normals - w2 * a.normals.row(i));
  }
  return total;
}

}  // namespace

double varifold_mismatch(const Points& a_pts, const TriCells& a_tris, const VarifoldRep& b,
                         double lambda_w, Points* grad_pts) {
  const VarifoldRep a = varifold_rep(a_pts, a_tris);
  const VecX a_len = a.normals.rowwise().norm();
  const VecX b_len = b.normals.rowwise().norm();

  if (grad_pts == nullptr)
    return varifold_product(a, a, lambda_w) - 2.0 * varifold_product(a, b, lambda_w);

  Points grad_c = Points::Zero(a.centroids.rows(), 3);
  Points grad_n = Points::Zero(a.centroids.rows(), 3);

  const double aa =
      accumulate_facet_gradient(a, a_len, a, a_len, lambda_w, 2.0, grad_c, grad_n);
  const double ab =
      accumulate_facet_gradient(a, a_len, b, b_len, lambda_w, -2.0, grad_c, grad_n);

  // Chain facet gradients to vertices: c = (p0+p1+p2)/3 and
  // n = ½ (p1−p0)×(p2−p0).
  grad_pts->setZero(a_pts.rows(), 3);
  for (int t = 0; t < a_tris.rows(); ++t) {
    const Vec3 p0 = a_pts.row(a_tris(t, 0)).transpose();
    const Vec3 p1 = a_pts.row(a_tris(t, 1)).transpose();
    const Vec3 p2 = a_pts.row(a_tris(t, 2)).transpose();
    const Vec3 gc = grad_c.row(t).transpose() / 3.0;
    const Vec3 gn = grad_n.row(t).transpose();
    const Vec3 e1 = p1 - p0;
    const Vec3 e2 = p2 - p0;
    const Vec3 d1 = 0.5 * e2.cross(gn);  // ∂⟨gn,n⟩/∂p1
    const Vec3 d2 = 0.5 * gn.cross(e1);  // ∂⟨gn,n⟩/∂p2
    grad_pts->row(a_tris(t, 0)) += (gc - d1 - d2).transpose();
    grad_pts->row(a_tris(t, 1)) += (gc + d1).transpose();
    grad_pts->row(a_tris(t, 2)) += (gc + d2).transpose();
  }
  return aa - 2.0 * ab;
}

}  // namespace cfield
