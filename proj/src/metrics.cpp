#include "cfield/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "cfield/geometry.hpp"

namespace cfield {

namespace {

double surface_area(const Points& pts, const TriCells& tris) {
  double area = 0.0;
  for (int t = 0; t < tris.rows(); ++t)
    area += triangle_area_normal(pts.row(tris(t, 0)).transpose(),
                                 pts.row(tris(t, 1)).transpose(),
                                 pts.row(tris(t, 2)).transpose())
                .norm();
  return area;
}

// Distance from a point to a labelled surface: exact point-to-triangle when
// the label has triangles, nearest labelled vertex otherwise.
class LabelDistance {
 public:
  LabelDistance(const Mesh& mesh, const std::string& label) {
    const auto& ids = mesh.label(label);
    empty_ = ids.empty();
    if (empty_) return;
    const TriCells tris = label_triangles(mesh, label);
    if (tris.rows() > 0) {
      surface_ = TriangleSurface(mesh.points, tris);
      use_surface_ = true;
    } else {
      Points pts(static_cast<int>(ids.size()), 3);
      for (std::size_t i = 0; i < ids.size(); ++i)
        pts.row(static_cast<int>(i)) = mesh.points.row(ids[i]);
      locator_ = PointLocator(pts);
    }
  }

  bool empty() const { return empty_; }

  double distance(const Vec3& p) const {
    if (empty_) return std::numeric_limits<double>::infinity();
    if (use_surface_) return surface_.closest_point(p).distance;
    double d = 0.0;
    locator_.nearest(p, &d);
    return d;
  }

 private:
  bool empty_ = true;
  bool use_surface_ = false;
  TriangleSurface surface_;
  PointLocator locator_;
};

}  // namespace

int find_apex_vertex(const Mesh& mesh) {
  const auto& base = mesh.label("base");
  const auto& epi = mesh.label("epi");
  if (epi.empty()) throw std::runtime_error("compute_metrics: empty epi label");
  const Plane base_plane = fit_plane(mesh.points, base);
  int apex = -1;
  double best = -1.0;
  for (int i : epi) {
    const double d = std::abs(base_plane.signed_distance(mesh.points.row(i).transpose()));
    if (d > best) {
      best = d;
      apex = i;
    }
  }
  return apex;
}

GeometryMetrics compute_metrics(const Mesh& mesh) {
  if (mesh.tets.rows() == 0)
    throw std::runtime_error("compute_metrics: mesh has no tetrahedral cells");
  for (const char* name : {"lv_endo", "rv_endo", "epi", "base", "apex"}) mesh.label(name);

  GeometryMetrics m;

  double vol = 0.0;
  for (int t = 0; t < mesh.tets.rows(); ++t) {
    const double v = tet_signed_volume(mesh.points.row(mesh.tets(t, 0)).transpose(),
                                       mesh.points.row(mesh.tets(t, 1)).transpose(),
                                       mesh.points.row(mesh.tets(t, 2)).transpose(),
                                       mesh.points.row(mesh.tets(t, 3)).transpose());
    if (v <= 0.0)
      throw std::runtime_error("compute_metrics: non-positive tet volume at cell " +
                               std::to_string(t) + "; orient the mesh first");
    vol += v;
  }
  m.myocardial_volume_ml = vol / 1000.0;  // mm^3 -> mL

  m.lv_endo_area_cm2 = surface_area(mesh.points, label_triangles(mesh, "lv_endo")) / 100.0;
  m.rv_endo_area_cm2 = surface_area(mesh.points, label_triangles(mesh, "rv_endo")) / 100.0;

  const LabelDistance to_epi(mesh, "epi");
  const LabelDistance to_lv(mesh, "lv_endo");
  const LabelDistance to_rv(mesh, "rv_endo");
  double total = 0.0;
  int count = 0;
  for (int i : mesh.label("lv_endo")) {
    const Vec3 p = mesh.points.row(i).transpose();
    total += std::min(to_epi.distance(p), to_rv.distance(p));
    ++count;
  }
  for (int i : mesh.label("rv_endo")) {
    const Vec3 p = mesh.points.row(i).transpose();
    total += std::min(to_epi.distance(p), to_lv.distance(p));
    ++count;
  }
  if (count == 0) throw std::runtime_error("compute_metrics: no endocardial vertices");
  m.mean_wall_thickness_cm = total / count / 10.0;  // mm -> cm

  m.apex_vertex = find_apex_vertex(mesh);
  const Plane base_plane = fit_plane(mesh.points, mesh.label("base"));
  m.apicobasal_height_cm =
      std::abs(base_plane.signed_distance(mesh.points.row(m.apex_vertex).transpose())) / 10.0;
  return m;
}

}  // namespace cfield
