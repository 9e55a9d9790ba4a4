#include "test_common.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <string>

#include "cfield/fields.hpp"
#include "cfield/idealized.hpp"
#include "cfield/purkinje.hpp"

using namespace cfield;

namespace {

// Flat triangulated square on z=0 spanning [-half, half]^2.
TriangleSurface flat_patch(double half, int n) {
  Points pts((n + 1) * (n + 1), 3);
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      pts.row(j * (n + 1) + i) << -half + 2.0 * half * i / n, -half + 2.0 * half * j / n, 0.0;
  TriCells tris(2 * n * n, 3);
  int t = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const int a = j * (n + 1) + i;
      const int b = a + 1;
      const int c = a + n + 1;
      const int d = c + 1;
      tris.row(t++) << a, b, d;
      tris.row(t++) << a, d, c;
    }
  return TriangleSurface(pts, tris);
}

Mesh ellipsoid_surface(const Vec3& axes, int n) {
  Mesh mesh = make_sphere_surface(1.0, n);
  for (int d = 0; d < 3; ++d) mesh.points.col(d) *= axes(d);
  return mesh;
}

int nearest_vertex(const Points& pts, const Vec3& q) {
  int best = 0;
  double best_d = (pts.row(0).transpose() - q).norm();
  for (Eigen::Index i = 1; i < pts.rows(); ++i) {
    const double d = (pts.row(i).transpose() - q).norm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

void check_tree_structure(const PurkinjeTree& tree) {
  const int n = tree.n_nodes();
  REQUIRE(n > 0);
  REQUIRE(static_cast<int>(tree.edges.size()) == n - 1);
  REQUIRE(static_cast<int>(tree.generation.size()) == n);

  std::vector<int> indegree(n, 0);
  std::vector<std::vector<int>> children(n);
  for (const auto& e : tree.edges) {
    REQUIRE(e[0] >= 0);
    REQUIRE(e[0] < n);
    REQUIRE(e[1] >= 0);
    REQUIRE(e[1] < n);
    ++indegree[e[1]];
    children[e[0]].push_back(e[1]);
    CHECK((tree.generation[e[1]] == tree.generation[e[0]] ||
           tree.generation[e[1]] == tree.generation[e[0]] + 1));
  }
  CHECK(indegree[tree.root] == 0);
  for (int v = 0; v < n; ++v)
    if (v != tree.root) CHECK(indegree[v] == 1);

  // Parent links plus equal edge count make any full traversal a cycle-free
  // proof, so reaching every node from the root settles both invariants.
  std::vector<char> seen(n, 0);
  std::queue<int> queue;
  queue.push(tree.root);
  seen[tree.root] = 1;
  int reached = 0;
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop();
    ++reached;
    for (int c : children[v])
      if (!seen[c]) {
        seen[c] = 1;
        queue.push(c);
      }
  }
  CHECK(reached == n);
}

}  // namespace

TEST_CASE("fractal tree parameter validation") {
  const TriangleSurface surface = flat_patch(10.0, 8);
  FractalTreeParams params;
  params.median_length = 0.0;
  CHECK_THROWS_AS(grow_fractal_tree(surface, Vec3::Zero(), Vec3(1, 0, 0), params),
                  std::invalid_argument);
  params = {};
  params.length_std = -0.1;
  CHECK_THROWS_AS(grow_fractal_tree(surface, Vec3::Zero(), Vec3(1, 0, 0), params),
                  std::invalid_argument);
  params = {};
  params.generations = -1;
  CHECK_THROWS_AS(grow_fractal_tree(surface, Vec3::Zero(), Vec3(1, 0, 0), params),
                  std::invalid_argument);
  params = {};
  params.repulsion = 1.5;
  CHECK_THROWS_AS(grow_fractal_tree(surface, Vec3::Zero(), Vec3(1, 0, 0), params),
                  std::invalid_argument);

  params = {};
  CHECK_THROWS_AS(grow_fractal_tree(surface, Vec3(0, 0, 50), Vec3(1, 0, 50), params),
                  std::invalid_argument);
  CHECK_THROWS_AS(grow_fractal_tree(surface, Vec3::Zero(), Vec3::Zero(), params),
                  std::invalid_argument);
  CHECK_THROWS_AS(grow_fractal_tree(TriangleSurface(), Vec3::Zero(), Vec3(1, 0, 0), params),
                  std::invalid_argument);
}

TEST_CASE("zero generations yields the single first segment") {
  const TriangleSurface surface = flat_patch(10.0, 16);
  FractalTreeParams params;
  params.generations = 0;
  const PurkinjeTree tree = grow_fractal_tree(surface, Vec3::Zero(), Vec3(1, 0, 0), params);

  check_tree_structure(tree);
  CHECK(tree.root == 0);
  for (int v = 0; v < tree.n_nodes(); ++v) {
    CHECK(tree.generation[v] == 0);
    CHECK(std::abs(tree.nodes(v, 1)) < 1e-9);
    CHECK(std::abs(tree.nodes(v, 2)) < 1e-9);
  }
  double length = 0.0;
  for (const auto& e : tree.edges)
    length += (tree.nodes.row(e[1]) - tree.nodes.row(e[0])).norm();
  CHECK(std::abs(length - params.initial_length) < 1e-9);
  CHECK(std::abs(tree.nodes(tree.n_nodes() - 1, 0) - params.initial_length) < 1e-9);
}

TEST_CASE("same seed grows the same tree, different seed does not") {
  const Mesh shell = ellipsoid_surface(Vec3(4.2, 6.6, 11.5), 12);
  const TriangleSurface surface(shell.points, shell.tris);
  const Vec3 seed = shell.points.row(nearest_vertex(shell.points, Vec3(0, 0, -11.5))).transpose();
  const Vec3 dir_pt =
      shell.points.row(nearest_vertex(shell.points, Vec3(2.4, 0, -9.5))).transpose();

  FractalTreeParams params;
  params.generations = 6;
  params.rng_seed = 42;
  const PurkinjeTree a = grow_fractal_tree(surface, seed, dir_pt, params);
  const PurkinjeTree b = grow_fractal_tree(surface, seed, dir_pt, params);
  REQUIRE(a.n_nodes() == b.n_nodes());
  CHECK((a.nodes.array() == b.nodes.array()).all());
  CHECK(a.edges == b.edges);
  CHECK(a.generation == b.generation);

  params.rng_seed = 43;
  const PurkinjeTree c = grow_fractal_tree(surface, seed, dir_pt, params);
  CHECK((c.n_nodes() != a.n_nodes() || !(c.nodes.array() == a.nodes.array()).all()));
}

TEST_CASE("default parameters fill an ellipsoidal endocardium") {
  const Mesh shell = ellipsoid_surface(Vec3(4.2, 6.6, 11.5), 16);
  const TriangleSurface surface(shell.points, shell.tris);
  const Vec3 seed = shell.points.row(nearest_vertex(shell.points, Vec3(0, 0, -11.5))).transpose();
  const Vec3 dir_pt =
      shell.points.row(nearest_vertex(shell.points, Vec3(2.4, 0, -9.5))).transpose();

  const FractalTreeParams params;  // anatomy-scale defaults
  const PurkinjeTree tree = grow_fractal_tree(surface, seed, dir_pt, params);

  check_tree_structure(tree);
  CHECK(tree.n_nodes() > 100);
  for (int v = 0; v < tree.n_nodes(); ++v)
    CHECK(surface.closest_point(tree.nodes.row(v).transpose()).distance < 0.1);
}

TEST_CASE("coverage fraction matches brute force") {
  PurkinjeTree tree;
  tree.nodes.resize(3, 3);
  tree.nodes << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  tree.edges = {{0, 1}, {1, 2}};
  tree.generation = {0, 0, 0};

  Points targets(10, 3);
  for (int i = 0; i < 10; ++i) targets.row(i) << 0.31 * i, 0.17 * i - 0.8, 0.05 * i;

  for (const double radius : {0.25, 0.6, 1.1, 2.7}) {
    int expected = 0;
    for (int i = 0; i < 10; ++i) {
      double best = 1e300;
      for (int k = 0; k < 3; ++k)
        best = std::min(best, (targets.row(i) - tree.nodes.row(k)).norm());
      if (best <= radius) ++expected;
    }
    CHECK(coverage_fraction(tree, targets, radius) ==
          doctest::Approx(expected / 10.0).epsilon(1e-12));
  }

  CHECK(coverage_fraction(tree, targets, 1e9) == 1.0);
  CHECK(coverage_fraction(tree, tree.nodes, 1e-9) == 1.0);

  PurkinjeTree empty;
  CHECK_THROWS_AS(coverage_fraction(empty, targets, 1.0), std::invalid_argument);
}

TEST_CASE("coverage growth returns the first tree when it suffices") {
  const Mesh shell = ellipsoid_surface(Vec3(4.2, 6.6, 11.5), 12);
  const TriangleSurface surface(shell.points, shell.tris);
  const Vec3 seed = shell.points.row(nearest_vertex(shell.points, Vec3(0, 0, -11.5))).transpose();
  const Vec3 dir_pt =
      shell.points.row(nearest_vertex(shell.points, Vec3(2.4, 0, -9.5))).transpose();

  FractalTreeParams params;
  params.generations = 6;
  params.rng_seed = 7;
  const PurkinjeTree direct = grow_fractal_tree(surface, seed, dir_pt, params);
  const CoverageGrowth grown = grow_until_coverage(surface, seed, dir_pt, params, 0.01, 0.5);

  CHECK(grown.reached_target);
  CHECK(grown.attempts == 1);
  REQUIRE(grown.tree.n_nodes() == direct.n_nodes());
  CHECK((grown.tree.nodes.array() == direct.nodes.array()).all());
  CHECK(grown.coverage >= 0.01);

  CHECK_THROWS_AS(grow_until_coverage(surface, seed, dir_pt, params, 0.0, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(grow_until_coverage(surface, seed, dir_pt, params, 1.5, 0.5),
                  std::invalid_argument);
}

TEST_CASE("coverage growth flags an unreachable target") {
  // A patch too small to grow on, plus far-away orphan vertices that no tree
  // node can ever cover.
  Points pts(5, 3);
  pts << 0, 0, 0, 1e-3, 0, 0, 0, 1e-3, 0, 100, 100, 100, -100, 100, -100;
  TriCells tris(1, 3);
  tris << 0, 1, 2;
  const TriangleSurface surface(pts, tris);

  FractalTreeParams params;
  params.generations = 2;
  const CoverageGrowth grown =
      grow_until_coverage(surface, Vec3::Zero(), Vec3(1, 0, 0), params, 0.82, 0.5);

  CHECK_FALSE(grown.reached_target);
  CHECK(grown.attempts == 11);
  CHECK(grown.tree.n_nodes() >= 1);
  CHECK(grown.coverage == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("seed selection on a symmetric ventricle pair") {
  BiventricularShape shape;
  shape.epi_axes = Vec3(12.5, 12.0, 18.5);
  shape.lv.center = Vec3(-4.5, 0.0, 0.0);
  shape.lv.axes = Vec3(4.0, 6.0, 10.5);
  shape.rv.center = Vec3(4.5, 0.0, 0.0);
  shape.rv.axes = Vec3(4.0, 6.0, 10.5);
  const Mesh mesh = make_biventricular_mesh(shape, 1.7);
  const ScalarField ab = apicobasal_coordinate(mesh);

  const SeedSelection seeds = select_seed_points(mesh, ab.values);

  const auto& lv = mesh.label("lv_endo");
  const auto& rv = mesh.label("rv_endo");
  CHECK(std::binary_search(lv.begin(), lv.end(), seeds.lv_seed_vertex));
  CHECK(std::binary_search(rv.begin(), rv.end(), seeds.rv_seed_vertex));
  CHECK(std::binary_search(lv.begin(), lv.end(), seeds.lv_dir_vertex));
  CHECK(std::binary_search(rv.begin(), rv.end(), seeds.rv_dir_vertex));
  CHECK(std::abs(ab.values(seeds.lv_seed_vertex) - 0.99) <= 0.005);
  CHECK(std::abs(ab.values(seeds.rv_seed_vertex) - 0.99) <= 0.005);
  CHECK(std::abs(ab.values(seeds.lv_dir_vertex) - 0.97) <= 0.005);
  CHECK(std::abs(ab.values(seeds.rv_dir_vertex) - 0.97) <= 0.005);

  // Mirror symmetry about the septal plane x=0, up to the mesh resolution.
  CHECK(std::abs(seeds.lv_seed.x() + seeds.rv_seed.x()) < 2.5 * 1.7);
  CHECK(std::abs(seeds.lv_seed.y() - seeds.rv_seed.y()) < 2.5 * 1.7);
  CHECK(std::abs(seeds.lv_seed.z() - seeds.rv_seed.z()) < 2.5 * 1.7);

  // Direction points sit apex-ward of their seeds.
  CHECK(ab.values(seeds.lv_dir_vertex) < ab.values(seeds.lv_seed_vertex));
  CHECK(ab.values(seeds.rv_dir_vertex) < ab.values(seeds.rv_seed_vertex));

  SUBCASE("degenerate and singleton level sets") {
    VecX flat = VecX::Constant(mesh.n_points(), 0.5);
    try {
      select_seed_points(mesh, flat);
      FAIL("expected a throw");
    } catch (const std::runtime_error& err) {
      CHECK(std::string(err.what()).find("lv_endo") != std::string::npos);
    }

    VecX synthetic = VecX::Constant(mesh.n_points(), 0.5);
    synthetic(lv[0]) = 0.99;
    synthetic(lv[1]) = 0.97;
    synthetic(rv[2]) = 0.99;
    synthetic(rv[3]) = 0.97;
    const SeedSelection forced = select_seed_points(mesh, synthetic, 1e-6);
    CHECK(forced.lv_seed_vertex == lv[0]);
    CHECK(forced.lv_dir_vertex == lv[1]);
    CHECK(forced.rv_seed_vertex == rv[2]);
    CHECK(forced.rv_dir_vertex == rv[3]);

    CHECK_THROWS_AS(select_seed_points(mesh, ab.values, 0.0), std::invalid_argument);
    VecX short_field = VecX::Zero(3);
    CHECK_THROWS_AS(select_seed_points(mesh, short_field), std::invalid_argument);
  }
}
