#include "cfield/purkinje.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "cfield/rng.hpp"

namespace cfield {

namespace {

void validate_params(const FractalTreeParams& p) {
  if (!(p.median_length > 0.0)) throw std::invalid_argument("fractal tree: median_length <= 0");
  if (!(p.length_std >= 0.0)) throw std::invalid_argument("fractal tree: negative length_std");
  if (p.generations < 0) throw std::invalid_argument("fractal tree: negative generations");
  if (!(p.initial_length > 0.0)) throw std::invalid_argument("fractal tree: initial_length <= 0");
  if (!(p.repulsion >= 0.0 && p.repulsion <= 1.0))
    throw std::invalid_argument("fractal tree: repulsion outside [0,1]");
}

class TreeBuilder {
 public:
  TreeBuilder(const TriangleSurface& surface, const FractalTreeParams& params)
      : surface_(surface), params_(params), rng_(params.rng_seed) {
    step_ = 0.25 * params_.median_length;
    collision_radius_ = 0.5 * params_.median_length;
  }

  PurkinjeTree run(const Vec3& seed, const Vec3& direction_point) {
    const SurfaceDistance at_seed = surface_.closest_point(seed);
    if (at_seed.distance > 0.1)
      throw std::invalid_argument("fractal tree: seed farther than 0.1 mm from the surface");

    const int root_branch = new_branch(-1, -1);
    const int root = add_node(at_seed.point, 0, root_branch);
    junctions_.push_back(root);

    Vec3 dir = direction_point - at_seed.point;
    if (dir.norm() < 1e-12)
      throw std::invalid_argument("fractal tree: direction point coincides with the seed");
    dir.normalize();

    struct Terminal {
      int end_node;
      Vec3 dir;
      int branch;
    };
    std::vector<Terminal> frontier;

    Vec3 end_dir;
    int end_node = -1;
    bool alive =
        grow_branch(root, dir, params_.initial_length, root_branch, 0, &end_node, &end_dir);
    if (alive && collides(nodes_[end_node], root_branch)) alive = false;
    if (end_node != root) junctions_.push_back(end_node);
    if (alive) frontier.push_back({end_node, end_dir, root_branch});

    for (int gen = 1; gen <= params_.generations && !frontier.empty(); ++gen) {
      std::vector<Terminal> next;
      for (const Terminal& t : frontier) {
        const Vec3 normal = normal_at(nodes_[t.end_node]);
        const int child_a = new_branch(t.branch, -1);
        const int child_b = new_branch(t.branch, child_a);
        branch_sibling_[child_a] = child_b;
        const int children[2] = {child_a, child_b};
        const double angles[2] = {params_.branch_angle, -params_.branch_angle};
        for (int c = 0; c < 2; ++c) {
          const double length =
              std::max(0.1 * params_.median_length,
                       rng_.normal(params_.median_length, params_.length_std));
          const Vec3 child_dir = Eigen::AngleAxisd(angles[c], normal) * t.dir;
          alive = grow_branch(t.end_node, child_dir, length, children[c], gen, &end_node, &end_dir);
          if (alive && collides(nodes_[end_node], children[c])) alive = false;
          if (end_node != t.end_node) junctions_.push_back(end_node);
          if (alive) next.push_back({end_node, end_dir, children[c]});
        }
      }
      frontier = std::move(next);
    }

    PurkinjeTree tree;
    tree.nodes.resize(static_cast<Eigen::Index>(nodes_.size()), 3);
    for (std::size_t i = 0; i < nodes_.size(); ++i) tree.nodes.row(i) = nodes_[i].transpose();
    tree.edges = std::move(edges_);
    tree.generation = std::move(node_generation_);
    tree.root = root;
    return tree;
  }

 private:
  int new_branch(int parent, int sibling) {
    branch_parent_.push_back(parent);
    branch_sibling_.push_back(sibling);
    return static_cast<int>(branch_parent_.size()) - 1;
  }

  int add_node(const Vec3& p, int gen, int branch) {
    nodes_.push_back(p);
    node_generation_.push_back(gen);
    node_branch_.push_back(branch);
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<int> ancestor_chain(int branch) const {
    std::vector<int> chain;
    for (int b = branch_parent_[branch]; b >= 0; b = branch_parent_[b]) chain.push_back(b);
    std::sort(chain.begin(), chain.end());
    return chain;
  }

  Vec3 normal_at(const Vec3& p) const {
    const SurfaceDistance sd = surface_.closest_point(p);
    const auto tri = surface_.triangles().row(sd.triangle);
    return triangle_area_normal(surface_.points().row(tri(0)).transpose(),
                                surface_.points().row(tri(1)).transpose(),
                                surface_.points().row(tri(2)).transpose())
        .normalized();
  }

  // Nearest stored node outside the growing branch and its ancestor chain.
  int nearest_repulsor(const Vec3& p, int branch, const std::vector<int>& ancestors) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const int b = node_branch_[i];
      if (b == branch || std::binary_search(ancestors.begin(), ancestors.end(), b)) continue;
      const double d2 = (nodes_[i] - p).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<int>(i);
      }
    }
    return best;
  }

  // Collision means crowding the tree's graph nodes (bifurcation points and
  // terminal tips), not the dense polyline samples in between: a finished
  // branch whose endpoint lands too close to a foreign junction becomes a
  // leaf instead of spawning children, which keeps junction spacing bounded
  // without walling off the corridors between existing branches.  The
  // exclusion covers the local bifurcation neighborhood (parent, sibling,
  // and the parent's sibling), whose junctions sit within a branch length by
  // construction rather than because of crowding.
  bool collides(const Vec3& p, int branch) const {
    const int parent = branch_parent_[branch];
    const int sibling = branch_sibling_[branch];
    const int uncle = parent >= 0 ? branch_sibling_[parent] : -1;
    const double r2 = collision_radius_ * collision_radius_;
    for (int j : junctions_) {
      const int b = node_branch_[j];
      if (b == branch || b == parent || b == sibling || b == uncle) continue;
      if ((nodes_[j] - p).squaredNorm() < r2) return true;
    }
    return false;
  }

  // Returns false when the branch stalled against the surface boundary;
  // nodes laid down before the stop are kept either way, and *end_node
  // reports the branch tip so it can be recorded as a junction.
  bool grow_branch(int start, Vec3 dir, double length, int branch, int gen, int* end_node,
                   Vec3* end_dir) {
    const int steps = std::max(1, static_cast<int>(std::lround(length / step_)));
    const double step = length / steps;
    const std::vector<int> ancestors = ancestor_chain(branch);
    Vec3 pos = nodes_[start];
    int prev = start;
    bool alive = true;
    for (int k = 0; k < steps && alive; ++k) {
      const int repulsor = nearest_repulsor(pos, branch, ancestors);
      if (repulsor >= 0) {
        const Vec3 away = pos - nodes_[repulsor];
        if (away.norm() > 1e-12)
          dir = ((1.0 - params_.repulsion) * dir + params_.repulsion * away.normalized())
                    .normalized();
      }
      const Vec3 normal = normal_at(pos);
      const Vec3 tangent = dir - dir.dot(normal) * normal;
      if (tangent.norm() < 1e-12) {
        alive = false;
        break;
      }
      dir = tangent.normalized();

      const SurfaceDistance sd = surface_.closest_point(pos + step * dir);
      const double progress = (sd.point - pos).norm();
      if (progress < 0.3 * step) {
        alive = false;  // stalled against the surface boundary
        break;
      }

      const int node = add_node(sd.point, gen, branch);
      edges_.push_back({prev, node});
      dir = (sd.point - pos) / progress;
      pos = sd.point;
      prev = node;
    }
    *end_node = prev;
    *end_dir = dir;
    return alive;
  }

  const TriangleSurface& surface_;
  FractalTreeParams params_;
  Rng rng_;
  double step_ = 0.0;
  double collision_radius_ = 0.0;

  std::vector<Vec3> nodes_;
  std::vector<int> node_generation_;
  std::vector<int> node_branch_;
  std::vector<std::array<int, 2>> edges_;
  std::vector<int> branch_parent_;
  std::vector<int> branch_sibling_;
  std::vector<int> junctions_;
};

}  // namespace

SeedSelection select_seed_points(const Mesh& mesh, const VecX& phi_ab, double tol) {
  if (phi_ab.size() != mesh.n_points())
    throw std::invalid_argument("select_seed_points: field size does not match the mesh");
  if (!(tol > 0.0)) throw std::invalid_argument("select_seed_points: tolerance must be positive");

  const auto band = [&](const char* ventricle, double level) {
    std::vector<int> hits;
    for (int v : mesh.label(ventricle))
      if (std::abs(phi_ab(v) - level) <= tol) hits.push_back(v);
    if (hits.empty())
      throw std::runtime_error(std::string("select_seed_points: no ") + ventricle +
                               " vertices within tolerance of phi_ab=" + std::to_string(level));
    return hits;
  };

  const std::vector<int> lv99 = band("lv_endo", 0.99);
  const std::vector<int> lv97 = band("lv_endo", 0.97);
  const std::vector<int> rv99 = band("rv_endo", 0.99);
  const std::vector<int> rv97 = band("rv_endo", 0.97);

  const auto centroid = [&](const std::vector<int>& set) {
    Vec3 c = Vec3::Zero();
    for (int v : set) c += mesh.points.row(v).transpose();
    return Vec3(c / static_cast<double>(set.size()));
  };
  const Vec3 c_lv = centroid(lv99);
  const Vec3 c_rv = centroid(rv99);

  Vec3 axis = c_rv - c_lv;
  const bool degenerate = axis.norm() < 1e-12;
  if (!degenerate) axis.normalize();
  const auto line_distance = [&](const Vec3& p) {
    const Vec3 rel = p - c_lv;
    if (degenerate) return rel.norm();
    return (rel - rel.dot(axis) * axis).norm();
  };

  const auto closest_to_line = [&](const std::vector<int>& set) {
    int best = set.front();
    double best_d = line_distance(mesh.points.row(best).transpose());
    for (int v : set) {
      const double d = line_distance(mesh.points.row(v).transpose());
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    return best;
  };
  const auto closest_to_point = [&](const std::vector<int>& set, const Vec3& p) {
    int best = set.front();
    double best_d = (mesh.points.row(best).transpose() - p).norm();
    for (int v : set) {
      const double d = (mesh.points.row(v).transpose() - p).norm();
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    return best;
  };

  SeedSelection out;
  out.lv_seed_vertex = closest_to_line(lv99);
  out.rv_seed_vertex = closest_to_line(rv99);
  out.lv_seed = mesh.points.row(out.lv_seed_vertex).transpose();
  out.rv_seed = mesh.points.row(out.rv_seed_vertex).transpose();
  out.lv_dir_vertex = closest_to_point(lv97, out.lv_seed);
  out.rv_dir_vertex = closest_to_point(rv97, out.rv_seed);
  out.lv_dir_pt = mesh.points.row(out.lv_dir_vertex).transpose();
  out.rv_dir_pt = mesh.points.row(out.rv_dir_vertex).transpose();
  return out;
}

PurkinjeTree grow_fractal_tree(const TriangleSurface& surface, const Vec3& seed,
                               const Vec3& direction_point, const FractalTreeParams& params) {
  validate_params(params);
  if (surface.triangles().rows() == 0)
    throw std::invalid_argument("fractal tree: surface has no triangles");
  TreeBuilder builder(surface, params);
  return builder.run(seed, direction_point);
}

double coverage_fraction(const PurkinjeTree& tree, const Points& targets, double radius) {
  if (tree.n_nodes() == 0) throw std::invalid_argument("coverage_fraction: empty tree");
  if (targets.rows() == 0) return 1.0;
  const PointLocator locator(tree.nodes);
  int covered = 0;
  for (Eigen::Index i = 0; i < targets.rows(); ++i)
    if (locator.any_within(targets.row(i).transpose(), radius)) ++covered;
  return static_cast<double>(covered) / static_cast<double>(targets.rows());
}

CoverageGrowth grow_until_coverage(const TriangleSurface& surface, const Vec3& seed,
                                   const Vec3& direction_point, const FractalTreeParams& params,
                                   double target, double radius) {
  if (!(target > 0.0 && target <= 1.0))
    throw std::invalid_argument("grow_until_coverage: target outside (0,1]");
  CoverageGrowth best;
  FractalTreeParams p = params;
  for (int attempt = 0; attempt <= 10; ++attempt) {
    p.generations = params.generations + 2 * attempt;
    p.initial_length = params.initial_length * std::pow(1.1, attempt);
    p.rng_seed = attempt == 0
                     ? params.rng_seed
                     : derive_seed(params.rng_seed, "regrow-" + std::to_string(attempt));
    PurkinjeTree tree = grow_fractal_tree(surface, seed, direction_point, p);
    const double coverage =
        tree.n_nodes() > 0 ? coverage_fraction(tree, surface.points(), radius) : 0.0;
    if (coverage > best.coverage || best.attempts == 0) {
      best.tree = std::move(tree);
      best.coverage = coverage;
    }
    best.attempts = attempt + 1;
    if (coverage >= target) {
      best.reached_target = true;
      return best;
    }
  }
  best.reached_target = false;
  return best;
}

}  // namespace cfield
