#include "cfield/mesh.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <stdexcept>

namespace cfield {

const std::vector<int>& Mesh::label(const std::string& name) const {
  auto it = labels.find(name);
  if (it == labels.end()) throw std::runtime_error("mesh: missing label set '" + name + "'");
  return it->second;
}

double tet_signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).cross(c - a).dot(d - a) / 6.0;
}

void orient_tets(Mesh& mesh) {
  for (int t = 0; t < mesh.tets.rows(); ++t) {
    const Vec3 a = mesh.points.row(mesh.tets(t, 0)).transpose();
    const Vec3 b = mesh.points.row(mesh.tets(t, 1)).transpose();
    const Vec3 c = mesh.points.row(mesh.tets(t, 2)).transpose();
    const Vec3 d = mesh.points.row(mesh.tets(t, 3)).transpose();
    const double v = tet_signed_volume(a, b, c, d);
    if (v == 0.0)
      throw std::runtime_error("mesh: degenerate tetrahedron at cell " + std::to_string(t));
    if (v < 0.0) std::swap(mesh.tets(t, 1), mesh.tets(t, 2));
  }
}

namespace {

void check_indices(const Eigen::Ref<const Eigen::MatrixXi>& cells, int n_points,
                   const char* kind) {
  for (int r = 0; r < cells.rows(); ++r)
    for (int c = 0; c < cells.cols(); ++c)
      if (cells(r, c) < 0 || cells(r, c) >= n_points)
        throw std::runtime_error(std::string("mesh: ") + kind + " cell " + std::to_string(r) +
                                 " references vertex " + std::to_string(cells(r, c)) +
                                 " outside [0, " + std::to_string(n_points) + ")");
}

}  // namespace

void validate_mesh(const Mesh& mesh) {
  const int n = mesh.n_points();
  check_indices(mesh.tets.cast<int>(), n, "tet");
  check_indices(mesh.tris.cast<int>(), n, "triangle");
  check_indices(mesh.lines.cast<int>(), n, "line");

  for (const auto& [name, ids] : mesh.labels) {
    if (!std::is_sorted(ids.begin(), ids.end()) ||
        std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw std::runtime_error("mesh: label '" + name + "' is not sorted and unique");
    for (int i : ids)
      if (i < 0 || i >= n)
        throw std::runtime_error("mesh: label '" + name + "' references vertex " +
                                 std::to_string(i) + " outside [0, " + std::to_string(n) + ")");
  }

  // Anatomical labels must not overlap, apart from apex within epi.
  const std::array<const char*, 4> exclusive = {"lv_endo", "rv_endo", "epi", "base"};
  for (std::size_t i = 0; i < exclusive.size(); ++i) {
    for (std::size_t j = i + 1; j < exclusive.size(); ++j) {
      auto a = mesh.labels.find(exclusive[i]);
      auto b = mesh.labels.find(exclusive[j]);
      if (a == mesh.labels.end() || b == mesh.labels.end()) continue;
      std::vector<int> overlap;
      std::set_intersection(a->second.begin(), a->second.end(), b->second.begin(),
                            b->second.end(), std::back_inserter(overlap));
      if (!overlap.empty())
        throw std::runtime_error("mesh: labels '" + a->first + "' and '" + b->first +
                                 "' overlap at vertex " + std::to_string(overlap.front()));
    }
  }
  if (mesh.has_label("apex") && mesh.has_label("epi")) {
    const auto& apex = mesh.label("apex");
    const auto& epi = mesh.label("epi");
    for (int i : apex)
      if (!std::binary_search(epi.begin(), epi.end(), i))
        throw std::runtime_error("mesh: apex vertex " + std::to_string(i) +
                                 " is not an epicardial vertex");
  }

  for (const auto& [name, data] : mesh.point_data) {
    if (data.rows() != n)
      throw std::runtime_error("mesh: point data '" + name + "' has " +
                               std::to_string(data.rows()) + " rows for " + std::to_string(n) +
                               " points");
    if (data.cols() != 1 && data.cols() != 3)
      throw std::runtime_error("mesh: point data '" + name + "' must have 1 or 3 components");
  }
}

BoundingBox bounding_box(const Points& pts) {
  BoundingBox box;
  if (pts.rows() == 0) return box;
  box.lo = pts.colwise().minCoeff().transpose();
  box.hi = pts.colwise().maxCoeff().transpose();
  return box;
}

TriCells boundary_faces(const Mesh& mesh) {
  // Local faces chosen so the outward normal of a positively oriented tet
  // points away from the remaining vertex.
  static const int kFace[4][3] = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
  std::map<std::array<int, 3>, std::pair<std::array<int, 3>, int>> count;
  for (int t = 0; t < mesh.tets.rows(); ++t) {
    for (const auto& f : kFace) {
      std::array<int, 3> tri = {mesh.tets(t, f[0]), mesh.tets(t, f[1]), mesh.tets(t, f[2])};
      std::array<int, 3> key = tri;
      std::sort(key.begin(), key.end());
      auto it = count.find(key);
      if (it == count.end())
        count.emplace(key, std::make_pair(tri, 1));
      else
        it->second.second += 1;
    }
  }
  std::vector<std::array<int, 3>> faces;
  for (const auto& [key, entry] : count)
    if (entry.second == 1) faces.push_back(entry.first);
  TriCells out(static_cast<int>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    out.row(static_cast<int>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return out;
}

TriCells label_triangles(const Mesh& mesh, const std::string& name) {
  const auto& ids = mesh.label(name);
  std::vector<int> rows;
  for (int t = 0; t < mesh.tris.rows(); ++t) {
    bool all = true;
    for (int c = 0; c < 3; ++c)
      if (!std::binary_search(ids.begin(), ids.end(), mesh.tris(t, c))) {
        all = false;
        break;
      }
    if (all) rows.push_back(t);
  }
  TriCells out(static_cast<int>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<int>(i)) = mesh.tris.row(rows[i]);
  return out;
}

SurfaceMesh extract_surface(const Mesh& mesh, const TriCells& tris) {
  std::vector<int> used;
  for (int t = 0; t < tris.rows(); ++t)
    for (int c = 0; c < 3; ++c) used.push_back(tris(t, c));
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());

  std::map<int, int> remap;
  SurfaceMesh out;
  out.vertex_map = used;
  out.points.resize(static_cast<int>(used.size()), 3);
  for (std::size_t i = 0; i < used.size(); ++i) {
    remap[used[i]] = static_cast<int>(i);
    out.points.row(static_cast<int>(i)) = mesh.points.row(used[i]);
  }
  out.tris.resize(tris.rows(), 3);
  for (int t = 0; t < tris.rows(); ++t)
    for (int c = 0; c < 3; ++c) out.tris(t, c) = remap.at(tris(t, c));
  return out;
}

double mean_edge_length(const Points& pts, const TriCells& tris) {
  if (tris.rows() == 0) return 0.0;
  double total = 0.0;
  for (int t = 0; t < tris.rows(); ++t) {
    const Vec3 a = pts.row(tris(t, 0)).transpose();
    const Vec3 b = pts.row(tris(t, 1)).transpose();
    const Vec3 c = pts.row(tris(t, 2)).transpose();
    total += (a - b).norm() + (b - c).norm() + (c - a).norm();
  }
  return total / (3.0 * static_cast<double>(tris.rows()));
}

}  // namespace cfield
