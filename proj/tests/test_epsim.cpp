#include "test_common.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cfield/epsim.hpp"
#include "cfield/idealized.hpp"

using namespace cfield;

namespace {

std::vector<int> band_nodes(const Mesh& m, double x_max) {
  std::vector<int> out;
  for (int i = 0; i < m.n_points(); ++i)
    if (m.points(i, 0) <= x_max + 1e-9) out.push_back(i);
  return out;
}

double fit_cv(const Mesh& m, const ActivationMap& map, double lo, double hi) {
  double sx = 0, st = 0, sxx = 0, sxt = 0;
  int n = 0;
  for (int i = 0; i < m.n_points(); ++i) {
    const double x = m.points(i, 0);
    const double t = map.times(i);
    if (x < lo || x > hi || t < 0) continue;
    sx += x;
    st += t;
    sxx += x * x;
    sxt += x * t;
    ++n;
  }
  REQUIRE(n >= 4);
  const double slope = (n * sxt - sx * st) / (n * sxx - sx * sx);
  REQUIRE(slope > 0.0);
  return 1.0 / slope;
}

FiberField uniform_fibers(const Mesh& m, const Vec3& f, const Vec3& s) {
  FiberField field;
  field.fiber = Points::Zero(m.n_points(), 3);
  field.sheet = Points::Zero(m.n_points(), 3);
  field.normal = Points::Zero(m.n_points(), 3);
  const Vec3 n = f.cross(s);
  for (int i = 0; i < m.n_points(); ++i) {
    field.fiber.row(i) = f.transpose();
    field.sheet.row(i) = s.transpose();
    field.normal.row(i) = n.transpose();
  }
  return field;
}

double bar_cv(double d_iso, double d_ani, const Vec3& fiber_dir, double h, double dt,
              double length, double t_end) {
  Mesh bar = make_box_mesh(Vec3::Zero(), Vec3(length, h, h), h);
  FiberField fib = uniform_fibers(bar, fiber_dir, Vec3(0, 0, 1).cross(fiber_dir).normalized());
  ConductivityModel cond;
  cond.d_iso = d_iso;
  cond.d_ani = d_ani;
  cond.fibers = &fib;
  StimulusProtocol stim;
  stim.nodes = band_nodes(bar, 0.5);
  MonodomainOptions opt;
  opt.dt = dt;
  opt.t_end = t_end;
  const MonodomainResult r = run_monodomain(bar, cond, stim, opt);
  return fit_cv(bar, r.activation, 0.3 * length, 0.8 * length);
}

}  // namespace

TEST_CASE("resting cell stays at rest without stimulus") {
  const CellTrace tr = integrate_cell(TTP06Params{}, 1000.0, 0.02);
  CHECK(tr.clamp_events == 0);
  CHECK(tr.t(tr.t.size() - 1) == doctest::Approx(1000.0));

  double drift_100 = 0.0, drift_full = 0.0;
  for (Eigen::Index i = 0; i < tr.u.size(); ++i) {
    const double d = std::abs(tr.u(i) - ttp06_rest_u());
    drift_full = std::max(drift_full, d);
    if (tr.t(i) <= 100.0) drift_100 = std::max(drift_100, d);
  }
  CHECK(drift_100 < 0.5);
  CHECK(drift_full < 1.0);

  // concentrations stay positive and gates inside [0,1]
  for (int g = 0; g < kGateCount; ++g) {
    CHECK(tr.y_final(g) >= 0.0);
    CHECK(tr.y_final(g) <= 1.0);
  }
  for (int c = kGateCount; c < kIonicVarCount; ++c) CHECK(tr.y_final(c) > 0.0);
}

TEST_CASE("gate derivatives vanish at their steady values") {
  const TTP06Params params;
  for (double u : {-85.23, -60.0, -40.0, -39.999, -20.0, 0.0, 15.0, 20.0, 40.0}) {
    VecX y = ttp06_rest_y();
    VecX y_inf(kGateCount), tau(kGateCount);
    ttp06_gate_steady(u, y(kGateCount + 3), y_inf, tau);
    for (int g = 0; g < kGateCount; ++g) {
      CHECK(tau(g) > 0.0);
      CHECK(y_inf(g) >= 0.0);
      CHECK(y_inf(g) <= 1.0);
      y(g) = y_inf(g);
    }
    VecX dydt(kIonicVarCount);
    ionic_rhs(u, y, params, dydt);
    for (int g = 0; g < kGateCount; ++g) CHECK(std::abs(dydt(g)) < 1e-8);
  }
}

TEST_CASE("stimulated cell fires and repolarizes") {
  StimulusProtocol stim;
  stim.start = 5.0;
  stim.duration = 1.0;
  const CellTrace tr = integrate_cell(TTP06Params{}, 500.0, 0.02, stim);

  double peak = -1e9, t_peak = 0.0, t_cross = -1.0, t_repol = -1.0;
  for (Eigen::Index i = 0; i < tr.u.size(); ++i) {
    if (tr.u(i) > peak) {
      peak = tr.u(i);
      t_peak = tr.t(i);
    }
    if (t_cross < 0.0 && tr.u(i) > -10.0) t_cross = tr.t(i);
    if (t_cross >= 0.0 && t_repol < 0.0 && tr.t(i) > t_peak && tr.u(i) < -80.0)
      t_repol = tr.t(i);
  }
  CHECK(t_cross > 5.0);
  CHECK(t_cross < 10.0);
  CHECK(peak > 0.0);
  CHECK(peak < 60.0);
  CHECK(t_repol > t_peak);
  CHECK(t_repol < 500.0);

  SUBCASE("tissue-length pulse also captures") {
    StimulusProtocol tissue;  // -52 for 5 ms
    const CellTrace tr5 = integrate_cell(TTP06Params{}, 50.0, 0.02, tissue);
    CHECK(tr5.u.maxCoeff() > -10.0);
  }
  SUBCASE("subthreshold pulse does not capture") {
    StimulusProtocol weak;
    weak.amplitude = -1.0;
    weak.duration = 1.0;
    const CellTrace trw = integrate_cell(TTP06Params{}, 100.0, 0.02, weak);
    CHECK(trw.u.maxCoeff() < -60.0);
  }
}

TEST_CASE("ionic right-hand side validation and bookkeeping") {
  const TTP06Params params;
  VecX y = ttp06_rest_y();
  VecX dydt(kIonicVarCount);

  VecX small(4);
  CHECK_THROWS_AS(ionic_rhs(-85.0, small, params, dydt), std::invalid_argument);
  VecX bad = y;
  bad(3) = std::nan("");
  CHECK_THROWS_AS(ionic_rhs(-85.0, bad, params, dydt), std::invalid_argument);
  CHECK_THROWS_AS(ionic_rhs(std::nan(""), y, params, dydt), std::invalid_argument);

  // near-equilibrium total current at rest
  const double iion = ionic_rhs(ttp06_rest_u(), y, params, dydt);
  CHECK(std::abs(iion) < 0.05);

  // the applied current enters the potassium balance
  VecX d0(kIonicVarCount), d1(kIonicVarCount);
  ionic_rhs(ttp06_rest_u(), y, params, d0, 0.0);
  ionic_rhs(ttp06_rest_u(), y, params, d1, -52.0);
  const double expected = 52.0 * 0.185 / (0.016404 * 96485.3415);
  CHECK(d1(kGateCount + 1) - d0(kGateCount + 1) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("stimulus pulse windows") {
  StimulusProtocol stim;
  stim.start = 5.0;
  stim.duration = 2.0;
  stim.cycle_length = 10.0;
  CHECK(!stimulus_active(stim, 0.0));
  CHECK(!stimulus_active(stim, 4.999));
  CHECK(stimulus_active(stim, 5.0));
  CHECK(stimulus_active(stim, 6.9));
  CHECK(!stimulus_active(stim, 7.0));
  CHECK(stimulus_active(stim, 15.5));
  CHECK(!stimulus_active(stim, 17.5));

  stim.cycle_length = 0.0;  // one-shot
  CHECK(stimulus_active(stim, 6.0));
  CHECK(!stimulus_active(stim, 7.0));
  CHECK(!stimulus_active(stim, 95.0));
}

TEST_CASE("unstimulated tissue stays at rest") {
  const Mesh box = make_box_mesh(Vec3::Zero(), Vec3(4, 2, 2), 1.0);
  ConductivityModel cond;
  cond.d_ani = 0.0;
  StimulusProtocol stim;  // paper amplitude but no nodes selected
  const MonodomainResult r = run_monodomain(box, cond, stim);

  CHECK(r.activation.n_activated() == 0);
  CHECK((r.activation.times.array() == ActivationMap::kNever).all());
  CHECK((r.u.array() - ttp06_rest_u()).abs().maxCoeff() < 0.5);

  const DepolarizationCurve curve = depolarization_curve(r.activation, 0.1);
  CHECK(curve.percent.maxCoeff() == 0.0);
  CHECK(!curve.complete);
}

TEST_CASE("cable wave: monotone activation and convergent speed") {
  const double d_cable = 0.2;
  Mesh bar = make_box_mesh(Vec3::Zero(), Vec3(16, 0.25, 0.25), 0.25);
  ConductivityModel cond;
  cond.d_iso = d_cable;
  cond.d_ani = 0.0;
  StimulusProtocol stim;
  stim.nodes = band_nodes(bar, 0.5);
  MonodomainOptions opt;
  opt.t_end = 30.0;
  const MonodomainResult r = run_monodomain(bar, cond, stim, opt);

  // mean activation per cross-section, non-decreasing with distance
  std::vector<double> xs;
  for (int i = 0; i < bar.n_points(); ++i) xs.push_back(bar.points(i, 0));
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end(),
                       [](double a, double b) { return std::abs(a - b) < 1e-9; }),
           xs.end());
  double prev = -1.0;
  for (double x : xs) {
    double sum = 0.0;
    int n = 0;
    for (int i = 0; i < bar.n_points(); ++i)
      if (std::abs(bar.points(i, 0) - x) < 1e-9) {
        REQUIRE(r.activation.times(i) >= 0.0);
        sum += r.activation.times(i);
        ++n;
      }
    const double mean = sum / n;
    CHECK(mean >= prev - 1e-12);
    prev = mean;
  }

  const double cv = fit_cv(bar, r.activation, 4.8, 12.8);
  CHECK(cv > 0.0);

  SUBCASE("halving dt moves the speed by less than 5%") {
    const double cv_fine = bar_cv(d_cable, 0.0, Vec3(1, 0, 0), 0.25, 0.05, 16.0, 30.0);
    CHECK(std::abs(cv_fine - cv) / cv < 0.05);
  }
  SUBCASE("halving h moves the speed by less than 5%") {
    const double cv_fine = bar_cv(d_cable, 0.0, Vec3(1, 0, 0), 0.125, 0.1, 16.0, 30.0);
    CHECK(std::abs(cv_fine - cv) / cv < 0.05);
  }
}

TEST_CASE("anisotropy: wave along fibers is faster by the tensor ratio") {
  const double h = 0.0625, dt = 0.05;
  const double cv_par = bar_cv(0.0059, 0.0177, Vec3(1, 0, 0), h, dt, 12.0, 55.0);
  const double cv_perp = bar_cv(0.0059, 0.0177, Vec3(0, 1, 0), h, dt, 8.0, 70.0);
  CHECK(cv_par > cv_perp);
  const double expected = std::sqrt((0.0059 + 0.0177) / 0.0059);
  CHECK(std::abs(cv_par / cv_perp - expected) / expected < 0.10);
}

TEST_CASE("on-the-fly activation equals snapshot scan") {
  Mesh bar = make_box_mesh(Vec3::Zero(), Vec3(8, 0.5, 0.5), 0.5);
  ConductivityModel cond;
  cond.d_iso = 0.2;
  cond.d_ani = 0.0;
  StimulusProtocol stim;
  stim.nodes = band_nodes(bar, 0.5);
  MonodomainOptions opt;
  opt.t_end = 20.0;
  opt.snapshot_every = 1;
  const MonodomainResult r = run_monodomain(bar, cond, stim, opt);

  REQUIRE(r.snapshots.size() == 201);  // initial state plus one per step
  const ActivationMap scanned = extract_activation_map(r.snapshots, r.snapshot_times,
                                                       opt.threshold, opt.t_end);
  REQUIRE(scanned.times.size() == r.activation.times.size());
  for (Eigen::Index i = 0; i < scanned.times.size(); ++i)
    CHECK(scanned.times(i) == r.activation.times(i));

  const DepolarizationCurve curve = depolarization_curve(r.activation, opt.dt);
  for (Eigen::Index i = 1; i < curve.percent.size(); ++i)
    CHECK(curve.percent(i) >= curve.percent(i - 1));
  const double frac = 100.0 * r.activation.n_activated() / double(bar.n_points());
  CHECK(curve.percent(curve.percent.size() - 1) == doctest::Approx(frac));
}

TEST_CASE("purkinje line conducts ahead of the tissue") {
  Mesh bar = make_box_mesh(Vec3::Zero(), Vec3(16, 1, 1), 0.5);
  PurkinjeTree tree;
  const int k = 17;
  tree.nodes.resize(k, 3);
  for (int i = 0; i < k; ++i) tree.nodes.row(i) << double(i), 0.0, 0.0;
  for (int i = 0; i + 1 < k; ++i) tree.edges.push_back({i, i + 1});
  tree.generation.assign(k, 0);
  tree.root = 0;

  ConductivityModel cond;
  cond.d_ani = 0.0;  // tissue alone cannot carry the wave at this resolution
  MonodomainOptions opt;
  opt.t_end = 60.0;
  StimulusProtocol stim;
  stim.nodes = {0};

  const MonodomainResult with_tree = run_monodomain(bar, cond, stim, opt, &tree);
  const MonodomainResult without = run_monodomain(bar, cond, stim, opt);

  // snapping: tree nodes placed on mesh vertices map to those vertices
  REQUIRE(with_tree.tree_vertex.size() == std::size_t(k));
  for (int i = 0; i < k; ++i) {
    const Vec3 p = bar.points.row(with_tree.tree_vertex[std::size_t(i)]).transpose();
    CHECK((p - tree.nodes.row(i).transpose()).norm() < 1e-12);
  }

  // the stimulated root is the earliest activation of the coupled run
  const int root_vertex = with_tree.tree_vertex[0];
  double min_t = 1e30;
  for (Eigen::Index i = 0; i < with_tree.activation.times.size(); ++i)
    if (with_tree.activation.times(i) >= 0.0)
      min_t = std::min(min_t, with_tree.activation.times(i));
  CHECK(with_tree.activation.times(root_vertex) == doctest::Approx(min_t));

  // distal end reached only through the tree
  int far_vertex = -1;
  for (int i = 0; i < bar.n_points(); ++i)
    if ((bar.points.row(i) - Eigen::RowVector3d(16, 0, 0)).norm() < 1e-9) far_vertex = i;
  REQUIRE(far_vertex >= 0);
  CHECK(with_tree.activation.times(far_vertex) >= 0.0);
  CHECK(with_tree.activation.times(far_vertex) < 20.0);
  CHECK(without.activation.times(far_vertex) == ActivationMap::kNever);
}

TEST_CASE("snapshot scan rules") {
  // crossing at step 123 of a 0.1 ms grid reads 12.3 ms
  std::vector<VecX> snaps;
  std::vector<double> times;
  for (int k = 0; k <= 130; ++k) {
    VecX u(2);
    u << (k >= 123 ? 20.0 : -85.0), -85.0;
    snaps.push_back(u);
    times.push_back(k * 0.1);
  }
  const ActivationMap map = extract_activation_map(snaps, times, -10.0, 13.0);
  CHECK(map.times(0) == doctest::Approx(12.3));
  CHECK(map.times(1) == ActivationMap::kNever);
  CHECK(map.n_activated() == 1);

  // threshold comparison is strict
  std::vector<VecX> flat{VecX::Constant(1, -10.0)};
  const ActivationMap none = extract_activation_map(flat, {0.0}, -10.0, 1.0);
  CHECK(none.times(0) == ActivationMap::kNever);

  CHECK_THROWS_AS(extract_activation_map({}, {}, -10.0, 1.0), std::invalid_argument);
  std::vector<VecX> mixed{VecX::Zero(2), VecX::Zero(3)};
  CHECK_THROWS_AS(extract_activation_map(mixed, {0.0, 0.1}, -10.0, 1.0),
                  std::invalid_argument);
  std::vector<VecX> two{VecX::Zero(1), VecX::Zero(1)};
  CHECK_THROWS_AS(extract_activation_map(two, {0.2, 0.1}, -10.0, 1.0), std::invalid_argument);
}

TEST_CASE("depolarization curve definition") {
  ActivationMap map;
  map.times = VecX(4);
  map.times << 0.5, 1.0, 1.0, ActivationMap::kNever;
  map.horizon = 2.0;
  const DepolarizationCurve curve = depolarization_curve(map, 0.5);
  REQUIRE(curve.t.size() == 5);
  CHECK(curve.percent(0) == 0.0);
  CHECK(curve.percent(1) == 25.0);
  CHECK(curve.percent(2) == 75.0);
  CHECK(curve.percent(4) == 75.0);
  CHECK(!curve.complete);
  CHECK(curve.full_time == -1.0);

  map.times(3) = 1.5;
  const DepolarizationCurve full = depolarization_curve(map, 0.5);
  CHECK(full.complete);
  CHECK(full.full_time == doctest::Approx(1.5));
  CHECK(full.percent(full.percent.size() - 1) == 100.0);

  CHECK_THROWS_AS(depolarization_curve(map, 0.0), std::invalid_argument);
  ActivationMap empty;
  empty.times = VecX(0);
  CHECK_THROWS_AS(depolarization_curve(empty, 0.1), std::invalid_argument);
}

TEST_CASE("monodomain input validation") {
  Mesh box = make_box_mesh(Vec3::Zero(), Vec3(2, 1, 1), 1.0);
  ConductivityModel iso;
  iso.d_ani = 0.0;
  StimulusProtocol stim;

  Mesh no_tets = box;
  no_tets.tets.resize(0, 4);
  CHECK_THROWS_AS(run_monodomain(no_tets, iso, stim), std::invalid_argument);

  ConductivityModel no_fibers;  // d_ani > 0 without a fiber field
  CHECK_THROWS_AS(run_monodomain(box, no_fibers, stim), std::invalid_argument);

  FiberField short_field = uniform_fibers(box, Vec3(1, 0, 0), Vec3(0, 1, 0));
  short_field.fiber.conservativeResize(3, 3);
  ConductivityModel bad_fibers;
  bad_fibers.fibers = &short_field;
  CHECK_THROWS_AS(run_monodomain(box, bad_fibers, stim), std::invalid_argument);

  StimulusProtocol out_of_range;
  out_of_range.nodes = {box.n_points()};
  CHECK_THROWS_AS(run_monodomain(box, iso, out_of_range), std::invalid_argument);

  MonodomainOptions bad_dt;
  bad_dt.dt = 0.0;
  CHECK_THROWS_AS(run_monodomain(box, iso, stim, bad_dt), std::invalid_argument);

  MonodomainOptions bad_sub;
  bad_sub.gate_substeps = 0;
  CHECK_THROWS_AS(run_monodomain(box, iso, stim, bad_sub), std::invalid_argument);

  ConductivityModel negative;
  negative.d_ani = 0.0;
  negative.d_iso = -1.0;
  CHECK_THROWS_AS(run_monodomain(box, negative, stim), std::invalid_argument);
}
