#include "cfield/idealized.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "cfield/geometry.hpp"
#include "cfield/metrics.hpp"

namespace cfield {

namespace {

// Six-tet (Freudenthal) decomposition of a cube; corner index is
// dx + 2*dy + 4*dz.  All six share the main diagonal 0-7, which makes the
// decomposition conforming across neighbouring cells.
constexpr int kCubeTets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
                                 {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};

struct Welder {
  std::map<std::array<long long, 3>, int> seen;
  std::vector<Vec3> points;

  int add(const Vec3& p) {
    const std::array<long long, 3> key = {std::llround(p.x() * 1048576.0),
                                          std::llround(p.y() * 1048576.0),
                                          std::llround(p.z() * 1048576.0)};
    auto it = seen.find(key);
    if (it != seen.end()) return it->second;
    const int id = static_cast<int>(points.size());
    seen.emplace(key, id);
    points.push_back(p);
    return id;
  }

  Points matrix() const {
    Points m(static_cast<int>(points.size()), 3);
    for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<int>(i)) = points[i].transpose();
    return m;
  }
};

// Unit directions of the cube-sphere grid: face-major, welded.
void cube_sphere_grid(int n, Welder& welder,
                      std::vector<std::array<int, 3>>& tris) {
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign = -1; sign <= 1; sign += 2) {
      const int ua = (axis + 1) % 3;
      const int va = (axis + 2) % 3;
      std::vector<int> grid((n + 1) * (n + 1));
      for (int j = 0; j <= n; ++j) {
        for (int i = 0; i <= n; ++i) {
          Vec3 p = Vec3::Zero();
          p[axis] = sign;
          p[ua] = 2.0 * i / n - 1.0;
          p[va] = 2.0 * j / n - 1.0;
          grid[static_cast<std::size_t>(j) * (n + 1) + i] = welder.add(p.normalized());
        }
      }
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
          const int p00 = grid[static_cast<std::size_t>(j) * (n + 1) + i];
          const int p10 = grid[static_cast<std::size_t>(j) * (n + 1) + i + 1];
          const int p01 = grid[static_cast<std::size_t>(j + 1) * (n + 1) + i];
          const int p11 = grid[static_cast<std::size_t>(j + 1) * (n + 1) + i + 1];
          if (sign > 0) {
            tris.push_back({p00, p10, p11});
            tris.push_back({p00, p11, p01});
          } else {
            tris.push_back({p00, p11, p10});
            tris.push_back({p00, p01, p11});
          }
        }
      }
    }
  }
}

double ellipsoid_value(const Vec3& p, const Vec3& center, const Vec3& axes) {
  const Vec3 q = (p - center).cwiseQuotient(axes);
  return q.squaredNorm() - 1.0;
}

Vec3 ellipsoid_gradient(const Vec3& p, const Vec3& center, const Vec3& axes) {
  return 2.0 * (p - center).cwiseQuotient(axes.cwiseProduct(axes));
}

double ellipsoid_distance(const Vec3& p, const Vec3& center, const Vec3& axes) {
  const double f = ellipsoid_value(p, center, axes);
  const double g = ellipsoid_gradient(p, center, axes).norm();
  return std::abs(f) / std::max(g, 1e-12);
}

Vec3 ellipsoid_project(Vec3 p, const Vec3& center, const Vec3& axes) {
  for (int it = 0; it < 6; ++it) {
    const double f = ellipsoid_value(p, center, axes);
    const Vec3 g = ellipsoid_gradient(p, center, axes);
    const double g2 = g.squaredNorm();
    if (g2 < 1e-18) break;
    p -= (f / g2) * g;
  }
  return p;
}

enum class SurfaceKind { LvEndo, RvEndo, Epi, Base };

SurfaceKind classify_boundary_vertex(const Vec3& p, const BiventricularShape& s) {
  const double d_epi = ellipsoid_distance(p, Vec3::Zero(), s.epi_axes);
  const double d_lv = ellipsoid_distance(p, s.lv.center, s.lv.axes);
  const double d_rv = ellipsoid_distance(p, s.rv.center, s.rv.axes);
  const double d_base = std::abs(p.z());
  const double best = std::min({d_epi, d_lv, d_rv, d_base});
  if (best == d_base) return SurfaceKind::Base;
  if (best == d_lv) return SurfaceKind::LvEndo;
  if (best == d_rv) return SurfaceKind::RvEndo;
  return SurfaceKind::Epi;
}

Vec3 project_to_surface(const Vec3& p, SurfaceKind kind, const BiventricularShape& s) {
  Vec3 out = p;
  switch (kind) {
    case SurfaceKind::Base:
      out.z() = 0.0;
      return out;
    case SurfaceKind::LvEndo:
      out = ellipsoid_project(p, s.lv.center, s.lv.axes);
      break;
    case SurfaceKind::RvEndo:
      out = ellipsoid_project(p, s.rv.center, s.rv.axes);
      break;
    case SurfaceKind::Epi:
      out = ellipsoid_project(p, Vec3::Zero(), s.epi_axes);
      break;
  }
  if (out.z() > 0.0) out.z() = 0.0;  // cropped at the base plane
  return out;
}

void assign_labels_and_project(Mesh& mesh, const std::vector<int>& boundary_vertices,
                               const BiventricularShape& shape, double max_move,
                               double vol_floor) {
  std::vector<SurfaceKind> kind(boundary_vertices.size());
  std::vector<Vec3> original(boundary_vertices.size());
  for (std::size_t k = 0; k < boundary_vertices.size(); ++k) {
    const int v = boundary_vertices[k];
    const Vec3 p = mesh.points.row(v).transpose();
    original[k] = p;
    kind[k] = classify_boundary_vertex(p, shape);
    const Vec3 snapped = project_to_surface(p, kind[k], shape);
    if ((snapped - p).norm() <= max_move) mesh.points.row(v) = snapped.transpose();
  }

  // Undo any projection that inverted or flattened an incident tetrahedron.
  // Tets are positively oriented before snapping, so the signed volume is
  // the right detector.
  if (mesh.tets.rows() > 0) {
    std::map<int, std::size_t> slot;
    for (std::size_t k = 0; k < boundary_vertices.size(); ++k) slot[boundary_vertices[k]] = k;
    for (int round = 0; round < 20; ++round) {
      bool reverted = false;
      for (int t = 0; t < mesh.tets.rows(); ++t) {
        const double v = tet_signed_volume(
            mesh.points.row(mesh.tets(t, 0)).transpose(), mesh.points.row(mesh.tets(t, 1)).transpose(),
            mesh.points.row(mesh.tets(t, 2)).transpose(), mesh.points.row(mesh.tets(t, 3)).transpose());
        if (v > vol_floor) continue;
        for (int c = 0; c < 4; ++c) {
          auto it = slot.find(mesh.tets(t, c));
          if (it == slot.end()) continue;
          mesh.points.row(it->first) = original[it->second].transpose();
          reverted = true;
        }
      }
      if (!reverted) break;
    }
  }

  std::vector<int> lv, rv, epi, base;
  for (std::size_t k = 0; k < boundary_vertices.size(); ++k) {
    switch (kind[k]) {
      case SurfaceKind::LvEndo: lv.push_back(boundary_vertices[k]); break;
      case SurfaceKind::RvEndo: rv.push_back(boundary_vertices[k]); break;
      case SurfaceKind::Epi: epi.push_back(boundary_vertices[k]); break;
      case SurfaceKind::Base: base.push_back(boundary_vertices[k]); break;
    }
  }
  mesh.labels["lv_endo"] = std::move(lv);
  mesh.labels["rv_endo"] = std::move(rv);
  mesh.labels["epi"] = std::move(epi);
  mesh.labels["base"] = std::move(base);
}

std::vector<int> unique_vertices(const TriCells& tris) {
  std::vector<int> v;
  for (int t = 0; t < tris.rows(); ++t)
    for (int c = 0; c < 3; ++c) v.push_back(tris(t, c));
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

Mesh make_sphere_surface(double radius, int n, const Vec3& center) {
  Welder welder;
  std::vector<std::array<int, 3>> tris;
  cube_sphere_grid(n, welder, tris);
  Mesh mesh;
  mesh.points = welder.matrix() * radius;
  mesh.points.rowwise() += center.transpose();
  mesh.tris.resize(static_cast<int>(tris.size()), 3);
  for (std::size_t i = 0; i < tris.size(); ++i)
    mesh.tris.row(static_cast<int>(i)) << tris[i][0], tris[i][1], tris[i][2];
  return mesh;
}

Mesh make_spherical_shell(double r_inner, double r_outer, int n, int n_layers) {
  Welder dirs;
  std::vector<std::array<int, 3>> face_tris;
  cube_sphere_grid(n, dirs, face_tris);
  const Points unit = dirs.matrix();
  const int n_dirs = static_cast<int>(unit.rows());

  Mesh mesh;
  mesh.points.resize(n_dirs * (n_layers + 1), 3);
  for (int layer = 0; layer <= n_layers; ++layer) {
    const double r = r_inner + (r_outer - r_inner) * layer / n_layers;
    mesh.points.middleRows(layer * n_dirs, n_dirs) = unit * r;
  }

  // Prisms between consecutive layers, built from the two triangles of each
  // quad would leave non-conforming diagonals; instead use the welded quad
  // structure implicitly via triangle pairs forming three tets each.
  std::vector<std::array<int, 4>> tets;
  for (int layer = 0; layer < n_layers; ++layer) {
    const int lo = layer * n_dirs;
    const int hi = (layer + 1) * n_dirs;
    for (const auto& tri : face_tris) {
      // Split the triangular prism (a,b,c)-(A,B,C) into three tets using the
      // global vertex order to keep shared quad faces consistent.
      std::array<int, 3> s = tri;
      std::sort(s.begin(), s.end());
      const int a = lo + s[0], b = lo + s[1], c = lo + s[2];
      const int A = hi + s[0], B = hi + s[1], C = hi + s[2];
      tets.push_back({a, b, c, A});
      tets.push_back({b, c, A, B});
      tets.push_back({c, A, B, C});
    }
  }
  mesh.tets.resize(static_cast<int>(tets.size()), 4);
  for (std::size_t i = 0; i < tets.size(); ++i)
    mesh.tets.row(static_cast<int>(i)) << tets[i][0], tets[i][1], tets[i][2], tets[i][3];
  orient_tets(mesh);

  std::vector<std::array<int, 3>> tris;
  for (const auto& tri : face_tris) {
    tris.push_back({tri[0], tri[2], tri[1]});  // inner surface, inward flipped
    const int off = n_layers * n_dirs;
    tris.push_back({off + tri[0], off + tri[1], off + tri[2]});
  }
  mesh.tris.resize(static_cast<int>(tris.size()), 3);
  for (std::size_t i = 0; i < tris.size(); ++i)
    mesh.tris.row(static_cast<int>(i)) << tris[i][0], tris[i][1], tris[i][2];

  std::vector<int> lv_endo, epi, base;
  // Base cap: outer vertices above 0.99 r, widened if needed so the plane
  // fit always has a handful of points at coarse resolutions.
  std::vector<double> outer_z(static_cast<std::size_t>(n_dirs));
  for (int i = 0; i < n_dirs; ++i) outer_z[static_cast<std::size_t>(i)] = mesh.points(n_layers * n_dirs + i, 2);
  std::nth_element(outer_z.begin(), outer_z.begin() + 8, outer_z.end(), std::greater<double>());
  const double cap_z = std::min(0.99 * r_outer, outer_z[8] - 1e-12);
  for (int i = 0; i < n_dirs; ++i) lv_endo.push_back(i);
  for (int i = 0; i < n_dirs; ++i) {
    const int v = n_layers * n_dirs + i;
    if (mesh.points(v, 2) > cap_z)
      base.push_back(v);
    else
      epi.push_back(v);
  }
  mesh.labels["lv_endo"] = std::move(lv_endo);
  mesh.labels["rv_endo"] = {};
  mesh.labels["epi"] = std::move(epi);
  mesh.labels["base"] = std::move(base);
  mesh.labels["apex"] = {find_apex_vertex(mesh)};
  validate_mesh(mesh);
  return mesh;
}

Mesh make_box_mesh(const Vec3& origin, const Vec3& size, double h) {
  int n[3];
  for (int d = 0; d < 3; ++d) n[d] = std::max(1, static_cast<int>(std::lround(size[d] / h)));
  const auto node = [&](int i, int j, int k) {
    return (k * (n[1] + 1) + j) * (n[0] + 1) + i;
  };
  Mesh mesh;
  mesh.points.resize((n[0] + 1) * (n[1] + 1) * (n[2] + 1), 3);
  for (int k = 0; k <= n[2]; ++k)
    for (int j = 0; j <= n[1]; ++j)
      for (int i = 0; i <= n[0]; ++i)
        mesh.points.row(node(i, j, k)) << origin.x() + size.x() * i / n[0],
            origin.y() + size.y() * j / n[1], origin.z() + size.z() * k / n[2];

  mesh.tets.resize(n[0] * n[1] * n[2] * 6, 4);
  int t = 0;
  for (int k = 0; k < n[2]; ++k) {
    for (int j = 0; j < n[1]; ++j) {
      for (int i = 0; i < n[0]; ++i) {
        int corner[8];
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              corner[dx + 2 * dy + 4 * dz] = node(i + dx, j + dy, k + dz);
        for (const auto& tet : kCubeTets) {
          mesh.tets.row(t++) << corner[tet[0]], corner[tet[1]], corner[tet[2]], corner[tet[3]];
        }
      }
    }
  }
  orient_tets(mesh);
  mesh.tris = boundary_faces(mesh);
  return mesh;
}

std::vector<int> select_vertices(const Mesh& mesh,
                                 const std::function<bool(const Vec3&)>& pred) {
  std::vector<int> out;
  for (int i = 0; i < mesh.n_points(); ++i)
    if (pred(mesh.points.row(i).transpose())) out.push_back(i);
  return out;
}

double BiventricularShape::inside(const Vec3& p) const {
  const double f_epi = ellipsoid_value(p, Vec3::Zero(), epi_axes);
  const double f_lv = -ellipsoid_value(p, lv.center, lv.axes);
  const double f_rv = -ellipsoid_value(p, rv.center, rv.axes);
  return std::max({f_epi, f_lv, f_rv, p.z()});
}

BiventricularShape sample_biventricular_shape(Rng& rng, double jitter) {
  const auto j = [&](double scale) { return 1.0 + scale * jitter * (2.0 * rng.uniform() - 1.0); };
  BiventricularShape s;
  const double a = 12.5 * j(1.0);
  const double b = 12.0 * j(1.0);
  const double c = 18.5 * j(1.0);
  s.epi_axes = Vec3(a, b, c);
  s.lv.center = Vec3(-0.36 * a, 0.0, 0.0);
  s.lv.axes = Vec3(0.33 * a * j(0.4), 0.55 * b * j(0.5), 0.62 * c * j(0.5));
  s.rv.center = Vec3(0.45 * a, 0.0, 0.0);
  s.rv.axes = Vec3(0.28 * a * j(0.4), 0.62 * b * j(0.5), 0.55 * c * j(0.5));
  return s;
}

Mesh make_biventricular_mesh(const BiventricularShape& shape, double h) {
  const double pad = 1.5 * h;
  const int nx = 2 * static_cast<int>(std::ceil((shape.epi_axes.x() + pad) / h));
  const int ny = 2 * static_cast<int>(std::ceil((shape.epi_axes.y() + pad) / h));
  const int nz = static_cast<int>(std::ceil((shape.epi_axes.z() + pad) / h));
  const Vec3 origin(-0.5 * nx * h, -0.5 * ny * h, -nz * h);

  const auto node_id = [&](int i, int j, int k) {
    return (k * (ny + 1) + j) * (nx + 1) + i;
  };
  const auto node_pos = [&](int i, int j, int k) {
    return Vec3(origin.x() + i * h, origin.y() + j * h, origin.z() + k * h);
  };

  // Keep individual lattice tets whose centroid is inside the solid.
  std::vector<std::array<int, 4>> kept;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        int corner[8];
        Vec3 pos[8];
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int ci = dx + 2 * dy + 4 * dz;
              corner[ci] = node_id(i + dx, j + dy, k + dz);
              pos[ci] = node_pos(i + dx, j + dy, k + dz);
            }
        for (const auto& tet : kCubeTets) {
          const Vec3 centroid =
              0.25 * (pos[tet[0]] + pos[tet[1]] + pos[tet[2]] + pos[tet[3]]);
          if (shape.inside(centroid) < 0.0)
            kept.push_back({corner[tet[0]], corner[tet[1]], corner[tet[2]], corner[tet[3]]});
        }
      }
    }
  }
  if (kept.empty()) throw std::runtime_error("make_biventricular_mesh: lattice too coarse");

  // Compact vertex numbering.
  std::map<int, int> remap;
  Mesh mesh;
  mesh.tets.resize(static_cast<int>(kept.size()), 4);
  std::vector<Vec3> pts;
  for (std::size_t t = 0; t < kept.size(); ++t) {
    for (int c = 0; c < 4; ++c) {
      const int global = kept[t][static_cast<std::size_t>(c)];
      auto it = remap.find(global);
      int local;
      if (it == remap.end()) {
        local = static_cast<int>(pts.size());
        remap.emplace(global, local);
        const int k = global / ((nx + 1) * (ny + 1));
        const int rem = global % ((nx + 1) * (ny + 1));
        pts.push_back(node_pos(rem % (nx + 1), rem / (nx + 1), k));
      } else {
        local = it->second;
      }
      mesh.tets(static_cast<int>(t), c) = local;
    }
  }
  mesh.points.resize(static_cast<int>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) mesh.points.row(static_cast<int>(i)) = pts[i].transpose();

  orient_tets(mesh);
  mesh.tris = boundary_faces(mesh);
  assign_labels_and_project(mesh, unique_vertices(mesh.tris), shape, 0.9 * h,
                            0.02 * h * h * h / 6.0);
  mesh.labels["apex"] = {find_apex_vertex(mesh)};
  validate_mesh(mesh);
  return mesh;
}

Mesh cluster_decimate(const Mesh& surface, double cell) {
  const int n = surface.n_points();
  std::map<std::array<long long, 3>, int> cluster_of_key;
  std::vector<int> cluster(n);
  std::vector<Vec3> sum;
  std::vector<int> count;
  for (int i = 0; i < n; ++i) {
    const Vec3 p = surface.points.row(i).transpose();
    const std::array<long long, 3> key = {static_cast<long long>(std::floor(p.x() / cell)),
                                          static_cast<long long>(std::floor(p.y() / cell)),
                                          static_cast<long long>(std::floor(p.z() / cell))};
    auto it = cluster_of_key.find(key);
    if (it == cluster_of_key.end()) {
      const int id = static_cast<int>(sum.size());
      cluster_of_key.emplace(key, id);
      sum.push_back(p);
      count.push_back(1);
      cluster[i] = id;
    } else {
      cluster[i] = it->second;
      sum[static_cast<std::size_t>(it->second)] += p;
      count[static_cast<std::size_t>(it->second)] += 1;
    }
  }

  Mesh out;
  out.points.resize(static_cast<int>(sum.size()), 3);
  for (std::size_t i = 0; i < sum.size(); ++i)
    out.points.row(static_cast<int>(i)) = (sum[i] / count[i]).transpose();

  std::vector<std::array<int, 3>> tris;
  std::set<std::array<int, 3>> seen;
  for (int t = 0; t < surface.tris.rows(); ++t) {
    std::array<int, 3> tri = {cluster[surface.tris(t, 0)], cluster[surface.tris(t, 1)],
                              cluster[surface.tris(t, 2)]};
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
    std::array<int, 3> key = tri;
    std::sort(key.begin(), key.end());
    if (!seen.insert(key).second) continue;
    tris.push_back(tri);
  }
  out.tris.resize(static_cast<int>(tris.size()), 3);
  for (std::size_t i = 0; i < tris.size(); ++i)
    out.tris.row(static_cast<int>(i)) << tris[i][0], tris[i][1], tris[i][2];

  for (const auto& [name, ids] : surface.labels) {
    std::map<int, int> votes;
    for (int i : ids) votes[cluster[i]] += 1;
    std::vector<int> mapped;
    for (const auto& [c, v] : votes)
      if (2 * v > count[static_cast<std::size_t>(c)]) mapped.push_back(c);
    std::sort(mapped.begin(), mapped.end());
    out.labels[name] = std::move(mapped);
  }
  return out;
}

Mesh make_biventricular_surface(const BiventricularShape& shape, double h, double cell) {
  const Mesh fine = make_biventricular_mesh(shape, h);
  Mesh surface;
  const SurfaceMesh extracted = extract_surface(fine, fine.tris);
  surface.points = extracted.points;
  surface.tris = extracted.tris;
  std::map<int, int> remap;
  for (std::size_t i = 0; i < extracted.vertex_map.size(); ++i)
    remap[extracted.vertex_map[i]] = static_cast<int>(i);
  for (const auto& [name, ids] : fine.labels) {
    std::vector<int> mapped;
    for (int i : ids) {
      auto it = remap.find(i);
      if (it != remap.end()) mapped.push_back(it->second);
    }
    std::sort(mapped.begin(), mapped.end());
    surface.labels[name] = std::move(mapped);
  }

  Mesh coarse = cluster_decimate(surface, cell);

  // Cluster means drift off the analytic surfaces; put them back.  The
  // target surface follows the inherited label where there is exactly one,
  // so representatives of thin-wall cells are not pulled across the wall;
  // every vertex ends up with at most one anatomical label, consistent with
  // where it actually sits.
  static const std::array<std::pair<const char*, SurfaceKind>, 4> kAnatomical = {
      {{"lv_endo", SurfaceKind::LvEndo},
       {"rv_endo", SurfaceKind::RvEndo},
       {"epi", SurfaceKind::Epi},
       {"base", SurfaceKind::Base}}};
  std::vector<std::set<SurfaceKind>> carried(static_cast<std::size_t>(coarse.n_points()));
  for (const auto& [name, kind] : kAnatomical)
    if (coarse.has_label(name))
      for (int i : coarse.label(name)) carried[static_cast<std::size_t>(i)].insert(kind);

  std::map<SurfaceKind, std::vector<int>> final_labels;
  for (const auto& [name, kind] : kAnatomical) final_labels[kind];
  for (int i = 0; i < coarse.n_points(); ++i) {
    const Vec3 p = coarse.points.row(i).transpose();
    const auto& options = carried[static_cast<std::size_t>(i)];
    SurfaceKind kind;
    if (options.size() == 1) {
      kind = *options.begin();
    } else {
      kind = classify_boundary_vertex(p, shape);
      if (!options.empty() && options.count(kind) == 0) kind = *options.begin();
    }
    const Vec3 snapped = project_to_surface(p, kind, shape);
    if ((snapped - p).norm() <= cell) coarse.points.row(i) = snapped.transpose();
    if (!options.empty()) final_labels[kind].push_back(i);
  }
  for (const auto& [name, kind] : kAnatomical) coarse.labels[name] = final_labels[kind];

  coarse.labels.erase("apex");
  if (!coarse.label("epi").empty() && !coarse.label("base").empty())
    coarse.labels["apex"] = {find_apex_vertex(coarse)};
  validate_mesh(coarse);
  return coarse;
}

}  // namespace cfield
