#include "cfield/epsim.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfield/geometry.hpp"

namespace cfield {

namespace {

// Gate indices in the state layout.
enum Gate { gM = 0, gH, gJ, gD, gF, gF2, gFCass, gR, gS, gXr1, gXr2, gXs };
// Concentration-block indices.
enum Conc {
  cNai = kGateCount,
  cKi,
  cCai,
  cCass,
  cCasr,
  cRbar
};

// Published model constants (epicardial variant).
constexpr double Rgas = 8314.472;    // mJ mol^-1 K^-1
constexpr double Temp = 310.0;       // K
constexpr double Fara = 96485.3415;  // C mol^-1
constexpr double Cmem = 0.185;       // membrane capacitance scale for volume fluxes
constexpr double Ko = 5.4, Nao = 140.0, Cao = 2.0;              // mM
constexpr double Vc = 0.016404, Vsr = 0.001094, Vss = 5.468e-5; // volume ratios
constexpr double Bufc = 0.2, Kbufc = 0.001;
constexpr double Bufsr = 10.0, Kbufsr = 0.3;
constexpr double Bufss = 0.4, Kbufss = 0.00025;
constexpr double Vmaxup = 0.006375, Kup = 0.00025;
constexpr double Vrel = 0.102, k1p = 0.15, k2p = 0.045, k3 = 0.060, k4 = 0.005;
constexpr double EC = 1.5, maxsr = 2.5, minsr = 1.0;
constexpr double Vleak = 0.00036, Vxfer = 0.0038;
constexpr double GK1 = 5.405, Gto = 0.294, GKs = 0.392;
constexpr double GbNa = 0.00029, GbCa = 0.000592;
constexpr double GpCa = 0.1238, KpCa = 0.0005, GpK = 0.0146;
constexpr double knak = 2.724, KmK = 1.0, KmNa = 40.0;
constexpr double knaca = 1000.0, KmNai = 87.5, KmCa = 1.38, ksat = 0.1, gam = 0.35;
constexpr double pKNa = 0.03;

double sq(double x) { return x * x; }
double cube(double x) { return x * x * x; }

struct GateKinetics {
  double inf[kGateCount];
  double tau[kGateCount];
};

GateKinetics gate_kinetics(double V, double cass) {
  GateKinetics k;
  k.inf[gM] = 1.0 / sq(1.0 + std::exp((-56.86 - V) / 9.03));
  const double am = 1.0 / (1.0 + std::exp((-60.0 - V) / 5.0));
  const double bm =
      0.1 / (1.0 + std::exp((V + 35.0) / 5.0)) + 0.1 / (1.0 + std::exp((V - 50.0) / 200.0));
  k.tau[gM] = am * bm;

  k.inf[gH] = 1.0 / sq(1.0 + std::exp((V + 71.55) / 7.43));
  double ah, bh, aj, bj;
  if (V >= -40.0) {
    ah = 0.0;
    bh = 0.77 / (0.13 * (1.0 + std::exp(-(V + 10.66) / 11.1)));
    aj = 0.0;
    bj = 0.6 * std::exp(0.057 * V) / (1.0 + std::exp(-0.1 * (V + 32.0)));
  } else {
    ah = 0.057 * std::exp(-(V + 80.0) / 6.8);
    bh = 2.7 * std::exp(0.079 * V) + 3.1e5 * std::exp(0.3485 * V);
    aj = (-2.5428e4 * std::exp(0.2444 * V) - 6.948e-6 * std::exp(-0.04391 * V)) * (V + 37.78) /
         (1.0 + std::exp(0.311 * (V + 79.23)));
    bj = 0.02424 * std::exp(-0.01052 * V) / (1.0 + std::exp(-0.1378 * (V + 40.14)));
  }
  k.tau[gH] = 1.0 / (ah + bh);
  k.inf[gJ] = k.inf[gH];
  k.tau[gJ] = 1.0 / (aj + bj);

  k.inf[gD] = 1.0 / (1.0 + std::exp((-8.0 - V) / 7.5));
  const double ad = 1.4 / (1.0 + std::exp((-35.0 - V) / 13.0)) + 0.25;
  const double bd = 1.4 / (1.0 + std::exp((V + 5.0) / 5.0));
  const double cd = 1.0 / (1.0 + std::exp((50.0 - V) / 20.0));
  k.tau[gD] = ad * bd + cd;

  k.inf[gF] = 1.0 / (1.0 + std::exp((V + 20.0) / 7.0));
  k.tau[gF] = 1102.5 * std::exp(-sq(V + 27.0) / 225.0) +
              200.0 / (1.0 + std::exp((13.0 - V) / 10.0)) +
              180.0 / (1.0 + std::exp((V + 30.0) / 10.0)) + 20.0;

  k.inf[gF2] = 0.67 / (1.0 + std::exp((V + 35.0) / 7.0)) + 0.33;
  k.tau[gF2] = 562.0 * std::exp(-sq(V + 27.0) / 240.0) +
               31.0 / (1.0 + std::exp((25.0 - V) / 10.0)) +
               80.0 / (1.0 + std::exp((V + 30.0) / 10.0));

  const double css = sq(cass / 0.05);
  k.inf[gFCass] = 0.6 / (1.0 + css) + 0.4;
  k.tau[gFCass] = 80.0 / (1.0 + css) + 2.0;

  k.inf[gR] = 1.0 / (1.0 + std::exp((20.0 - V) / 6.0));
  k.tau[gR] = 9.5 * std::exp(-sq(V + 40.0) / 1800.0) + 0.8;
  k.inf[gS] = 1.0 / (1.0 + std::exp((V + 20.0) / 5.0));
  k.tau[gS] =
      85.0 * std::exp(-sq(V + 45.0) / 320.0) + 5.0 / (1.0 + std::exp((V - 20.0) / 5.0)) + 3.0;

  k.inf[gXr1] = 1.0 / (1.0 + std::exp((-26.0 - V) / 7.0));
  const double axr1 = 450.0 / (1.0 + std::exp((-45.0 - V) / 10.0));
  const double bxr1 = 6.0 / (1.0 + std::exp((V + 30.0) / 11.5));
  k.tau[gXr1] = axr1 * bxr1;
  k.inf[gXr2] = 1.0 / (1.0 + std::exp((V + 88.0) / 24.0));
  const double axr2 = 3.0 / (1.0 + std::exp((-60.0 - V) / 20.0));
  const double bxr2 = 1.12 / (1.0 + std::exp((V - 60.0) / 20.0));
  k.tau[gXr2] = axr2 * bxr2;

  k.inf[gXs] = 1.0 / (1.0 + std::exp((-5.0 - V) / 14.0));
  const double axs = 1400.0 / std::sqrt(1.0 + std::exp((5.0 - V) / 6.0));
  const double bxs = 1.0 / (1.0 + std::exp((V - 35.0) / 15.0));
  k.tau[gXs] = axs * bxs + 80.0;
  return k;
}

// Core right-hand side without the input validation of the public wrapper.
double ionic_rhs_raw(double u, const double* y, const TTP06Params& p, double* dydt,
                     double i_stim) {
  const double nai = y[cNai], ki = y[cKi];
  const double cai = y[cCai], cass = y[cCass], casr = y[cCasr], rbar = y[cRbar];

  const double rtof = Rgas * Temp / Fara;
  const double ena = rtof * std::log(Nao / nai);
  const double ek = rtof * std::log(Ko / ki);
  const double eks = rtof * std::log((Ko + pKNa * Nao) / (ki + pKNa * nai));
  const double eca = 0.5 * rtof * std::log(Cao / cai);
  const double vfrt = u / rtof;

  const double ina = p.g_na * cube(y[gM]) * y[gH] * y[gJ] * (u - ena);

  // The driving-force factor is written with z/expm1(z), finite at u = 15 mV.
  const double z = 2.0 * (u - 15.0) / rtof;
  const double zratio = std::abs(z) < 1e-10 ? 1.0 : z / std::expm1(z);
  const double ical = p.g_cal * y[gD] * y[gF] * y[gF2] * y[gFCass] * 2.0 * Fara * zratio *
                      (0.25 * cass * std::exp(z) - Cao);

  const double ito = Gto * y[gR] * y[gS] * (u - ek);
  const double ikr = p.g_kr * std::sqrt(Ko / 5.4) * y[gXr1] * y[gXr2] * (u - ek);
  const double iks = GKs * sq(y[gXs]) * (u - eks);

  const double ak1 = 0.1 / (1.0 + std::exp(0.06 * (u - ek - 200.0)));
  const double bk1 = (3.0 * std::exp(0.0002 * (u - ek + 100.0)) +
                      std::exp(0.1 * (u - ek - 10.0))) /
                     (1.0 + std::exp(-0.5 * (u - ek)));
  const double ik1 = GK1 * std::sqrt(Ko / 5.4) * ak1 / (ak1 + bk1) * (u - ek);

  const double inaca =
      knaca *
      (std::exp(gam * vfrt) * cube(nai) * Cao -
       std::exp((gam - 1.0) * vfrt) * cube(Nao) * cai * 2.5) /
      ((cube(KmNai) + cube(Nao)) * (KmCa + Cao) * (1.0 + ksat * std::exp((gam - 1.0) * vfrt)));

  const double inak =
      knak * Ko * nai /
      ((Ko + KmK) * (nai + KmNa) *
       (1.0 + 0.1245 * std::exp(-0.1 * vfrt) + 0.0353 * std::exp(-vfrt)));

  const double ipca = GpCa * cai / (KpCa + cai);
  const double ipk = GpK * (u - ek) / (1.0 + std::exp((25.0 - u) / 5.98));
  const double ibna = GbNa * (u - ena);
  const double ibca = GbCa * (u - eca);

  const GateKinetics kin = gate_kinetics(u, cass);
  for (int g = 0; g < kGateCount; ++g) dydt[g] = (kin.inf[g] - y[g]) / kin.tau[g];

  // Calcium release and uptake.
  const double kcasr = maxsr - (maxsr - minsr) / (1.0 + sq(EC / casr));
  const double k1 = k1p / kcasr;
  const double k2 = k2p * kcasr;
  const double o = k1 * sq(cass) * rbar / (k3 + k1 * sq(cass));
  const double irel = Vrel * o * (casr - cass);
  const double ileak = Vleak * (casr - cai);
  const double iup = Vmaxup / (1.0 + sq(Kup) / sq(cai));
  const double ixfer = Vxfer * (cass - cai);

  const double bufc = 1.0 / (1.0 + Bufc * Kbufc / sq(cai + Kbufc));
  const double bufsr = 1.0 / (1.0 + Bufsr * Kbufsr / sq(casr + Kbufsr));
  const double bufss = 1.0 / (1.0 + Bufss * Kbufss / sq(cass + Kbufss));

  dydt[cRbar] = -k2 * cass * rbar + k4 * (1.0 - rbar);
  dydt[cCai] = bufc * ((ileak - iup) * Vsr / Vc + ixfer -
                       (ibca + ipca - 2.0 * inaca) * Cmem / (2.0 * Vc * Fara));
  dydt[cCasr] = bufsr * (iup - irel - ileak);
  dydt[cCass] =
      bufss * (-ical * Cmem / (2.0 * Vss * Fara) + irel * Vsr / Vss - ixfer * Vc / Vss);
  dydt[cNai] = -(ina + ibna + 3.0 * inak + 3.0 * inaca) * Cmem / (Vc * Fara);
  dydt[cKi] = -(ik1 + ito + ikr + iks - 2.0 * inak + ipk + i_stim) * Cmem / (Vc * Fara);

  return ina + ik1 + ito + ikr + iks + ical + inaca + inak + ipca + ipk + ibca + ibna;
}

int clamp_gates(double* y) {
  int events = 0;
  for (int g = 0; g < kGateCount; ++g) {
    if (y[g] < 0.0) {
      y[g] = 0.0;
      ++events;
    } else if (y[g] > 1.0) {
      y[g] = 1.0;
      ++events;
    }
  }
  return events;
}

// One explicit ionic update at frozen potential: exponential relaxation of
// the gates toward their steady values (the fastest gate time constant is
// ~1 us near rest, far below any practical forward-Euler step) and forward
// Euler on the concentrations.  Returns the number of clamp events.
int ionic_substep(double u, double* y, const TTP06Params& p, double dt, double i_stim) {
  double dydt[kIonicVarCount];
  ionic_rhs_raw(u, y, p, dydt, i_stim);
  const GateKinetics kin = gate_kinetics(u, y[cCass]);
  for (int g = 0; g < kGateCount; ++g)
    y[g] = kin.inf[g] + (y[g] - kin.inf[g]) * std::exp(-dt / kin.tau[g]);
  for (int c = kGateCount; c < kIonicVarCount; ++c) y[c] += dt * dydt[c];
  return clamp_gates(y);
}

}  // namespace

double ttp06_rest_u() { return -85.23; }

VecX ttp06_rest_y() {
  VecX y(kIonicVarCount);
  y << 0.00172, 0.7444, 0.7045, 3.373e-5, 0.7888, 0.9755, 0.9953, 2.42e-8, 0.999998, 0.00621,
      0.4712, 0.0095,                                   // gates
      8.604, 136.89, 0.000126, 0.00036, 3.64, 0.9073;   // Na_i, K_i, Ca_i, Ca_ss, Ca_sr, Rbar
  return y;
}

void ttp06_gate_steady(double u, double ca_ss, Eigen::Ref<VecX> y_inf, Eigen::Ref<VecX> tau) {
  if (y_inf.size() != kGateCount || tau.size() != kGateCount)
    throw std::invalid_argument("ttp06_gate_steady: output size must be 12");
  const GateKinetics k = gate_kinetics(u, ca_ss);
  for (int g = 0; g < kGateCount; ++g) {
    y_inf(g) = k.inf[g];
    tau(g) = k.tau[g];
  }
}

double ionic_rhs(double u, const Eigen::Ref<const VecX>& y, const TTP06Params& params,
                 Eigen::Ref<VecX> dydt, double i_stim) {
  if (y.size() != kIonicVarCount || dydt.size() != kIonicVarCount)
    throw std::invalid_argument("ionic_rhs: state must have 18 variables");
  if (!std::isfinite(u) || !y.allFinite())
    throw std::invalid_argument("ionic_rhs: non-finite state");
  VecX yc = y;  // contiguous copy; callers may pass strided references
  VecX dc(kIonicVarCount);
  const double iion = ionic_rhs_raw(u, yc.data(), params, dc.data(), i_stim);
  dydt = dc;
  return iion;
}

bool stimulus_active(const StimulusProtocol& stim, double t) {
  if (t < stim.start) return false;
  if (stim.cycle_length <= 0.0) return t < stim.start + stim.duration;
  const double phase = std::fmod(t - stim.start, stim.cycle_length);
  return phase < stim.duration;
}

CellTrace integrate_cell(const TTP06Params& params, double t_end, double dt,
                         const StimulusProtocol& stim) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_cell: dt must be positive");
  if (!(t_end >= 0.0)) throw std::invalid_argument("integrate_cell: negative horizon");
  const int steps = static_cast<int>(std::ceil(t_end / dt - 1e-9));

  CellTrace trace;
  trace.t.resize(steps + 1);
  trace.u.resize(steps + 1);
  double u = ttp06_rest_u();
  VecX y = ttp06_rest_y();
  VecX dydt(kIonicVarCount);
  trace.t(0) = 0.0;
  trace.u(0) = u;
  for (int i = 0; i < steps; ++i) {
    const double t = i * dt;
    const double istim = stimulus_active(stim, t) ? stim.amplitude : 0.0;
    trace.clamp_events += ionic_substep(u, y.data(), params, dt, istim);
    const double iion = ionic_rhs_raw(u, y.data(), params, dydt.data(), istim);
    u += dt * (-(iion + istim));
    if (!std::isfinite(u))
      throw std::runtime_error("integrate_cell: non-finite potential at t = " +
                               std::to_string(t + dt) + " ms");
    trace.t(i + 1) = (i + 1) * dt;
    trace.u(i + 1) = u;
  }
  trace.y_final = y;
  return trace;
}

std::vector<int> snap_tree_nodes(const Mesh& mesh, const PurkinjeTree& tree) {
  if (mesh.n_points() == 0) throw std::invalid_argument("snap_tree_nodes: empty mesh");
  if (tree.n_nodes() == 0) throw std::invalid_argument("snap_tree_nodes: empty tree");

  std::vector<int> candidates;
  for (const char* name : {"lv_endo", "rv_endo"})
    if (mesh.has_label(name)) {
      const std::vector<int>& set = mesh.label(name);
      candidates.insert(candidates.end(), set.begin(), set.end());
    }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.empty()) {
    candidates.resize(mesh.n_points());
    for (int i = 0; i < mesh.n_points(); ++i) candidates[i] = i;
  }

  Points pts(static_cast<Eigen::Index>(candidates.size()), 3);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    pts.row(static_cast<Eigen::Index>(i)) = mesh.points.row(candidates[i]);
  const PointLocator locator(pts);

  std::vector<int> vertex(static_cast<std::size_t>(tree.n_nodes()));
  for (int i = 0; i < tree.n_nodes(); ++i)
    vertex[static_cast<std::size_t>(i)] = candidates[static_cast<std::size_t>(
        locator.nearest(tree.nodes.row(i).transpose()))];
  return vertex;
}

namespace {

struct AssembledSystem {
  Eigen::SparseMatrix<double> stiffness;
  VecX lumped_mass;
};

AssembledSystem assemble(const Mesh& mesh, const ConductivityModel& cond,
                         const PurkinjeTree* tree, const std::vector<int>& tree_vertex,
                         double purkinje_area) {
  const int n = mesh.n_points();
  AssembledSystem sys;
  sys.lumped_mass = VecX::Zero(n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(mesh.tets.rows()) * 16 +
                (tree ? tree->edges.size() * 4 : 0));

  for (Eigen::Index e = 0; e < mesh.tets.rows(); ++e) {
    const auto tet = mesh.tets.row(e);
    const Vec3 a = mesh.points.row(tet(0)).transpose();
    Eigen::Matrix3d edges;
    for (int c = 0; c < 3; ++c)
      edges.col(c) = mesh.points.row(tet(c + 1)).transpose() - a;
    const double det = edges.determinant();
    const double vol = std::abs(det) / 6.0;
    if (vol < 1e-14)
      throw std::invalid_argument("run_monodomain: degenerate tet " + std::to_string(e));

    // P1 shape gradients: rows of the inverse transposed edge matrix plus
    // the closing gradient of the first vertex.
    const Eigen::Matrix3d inv_t = edges.inverse().transpose();
    Eigen::Matrix<double, 3, 4> grad;
    grad.col(0) = -inv_t.rowwise().sum();
    grad.block<3, 3>(0, 1) = inv_t;

    Eigen::Matrix3d D = cond.d_iso * Eigen::Matrix3d::Identity();
    if (cond.d_ani > 0.0) {
      Vec3 f = Vec3::Zero();
      for (int v = 0; v < 4; ++v) f += cond.fibers->fiber.row(tet(v)).transpose();
      const double norm = f.norm();
      if (norm > 1e-9) {
        f /= norm;
        D += cond.d_ani * f * f.transpose();
      }
    }

    const Eigen::Matrix<double, 3, 4> flux = D * grad;
    for (int i = 0; i < 4; ++i) {
      sys.lumped_mass(tet(i)) += vol / 4.0;
      for (int j = 0; j < 4; ++j)
        trips.emplace_back(tet(i), tet(j), vol * grad.col(i).dot(flux.col(j)));
    }
  }

  if (tree) {
    for (const auto& edge : tree->edges) {
      const int a = tree_vertex[static_cast<std::size_t>(edge[0])];
      const int b = tree_vertex[static_cast<std::size_t>(edge[1])];
      if (a == b) continue;  // both endpoints snapped to the same vertex
      const double len = (mesh.points.row(a) - mesh.points.row(b)).norm();
      if (len < 1e-9) continue;
      const double k = purkinje_area * cond.d_purk / len;
      trips.emplace_back(a, a, k);
      trips.emplace_back(b, b, k);
      trips.emplace_back(a, b, -k);
      trips.emplace_back(b, a, -k);
      sys.lumped_mass(a) += purkinje_area * len / 2.0;
      sys.lumped_mass(b) += purkinje_area * len / 2.0;
    }
  }

  sys.stiffness.resize(n, n);
  sys.stiffness.setFromTriplets(trips.begin(), trips.end());
  return sys;
}

}  // namespace

MonodomainResult run_monodomain(const Mesh& mesh, const ConductivityModel& conductivity,
                                const StimulusProtocol& stimulus,
                                const MonodomainOptions& options, const PurkinjeTree* tree) {
  const int n = mesh.n_points();
  if (n == 0) throw std::invalid_argument("run_monodomain: empty mesh");
  if (mesh.tets.rows() == 0) throw std::invalid_argument("run_monodomain: mesh has no tets");
  if (!(options.dt > 0.0)) throw std::invalid_argument("run_monodomain: dt must be positive");
  if (!(options.t_end >= 0.0)) throw std::invalid_argument("run_monodomain: negative horizon");
  if (options.gate_substeps < 1)
    throw std::invalid_argument("run_monodomain: gate_substeps must be >= 1");
  if (conductivity.d_iso < 0.0 || conductivity.d_ani < 0.0 || conductivity.d_purk < 0.0)
    throw std::invalid_argument("run_monodomain: negative conductivity");
  if (conductivity.d_ani > 0.0) {
    if (conductivity.fibers == nullptr)
      throw std::invalid_argument("run_monodomain: anisotropic conductivity requires fibers");
    if (conductivity.fibers->fiber.rows() != n)
      throw std::invalid_argument("run_monodomain: fiber field size does not match the mesh");
  }
  for (int node : stimulus.nodes)
    if (node < 0 || node >= n)
      throw std::invalid_argument("run_monodomain: stimulus node out of range");

  MonodomainResult result;
  if (tree) result.tree_vertex = snap_tree_nodes(mesh, *tree);
  const AssembledSystem sys =
      assemble(mesh, conductivity, tree, result.tree_vertex, options.purkinje_area);

  const double dt = options.dt;
  const int steps = static_cast<int>(std::ceil(options.t_end / dt - 1e-9));

  Eigen::SparseMatrix<double> lhs = sys.stiffness;
  VecX mass_over_dt = sys.lumped_mass / dt;
  for (int i = 0; i < n; ++i) lhs.coeffRef(i, i) += mass_over_dt(i);
  lhs.makeCompressed();

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      solver;
  solver.setTolerance(options.cg_tol);
  solver.compute(lhs);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("run_monodomain: linear system factorization failed");

  VecX u = VecX::Constant(n, ttp06_rest_u());
  MatX y(kIonicVarCount, n);
  y.colwise() = ttp06_rest_y();

  std::vector<char> stimulated(static_cast<std::size_t>(n), 0);
  for (int node : stimulus.nodes) stimulated[static_cast<std::size_t>(node)] = 1;

  result.activation.times = VecX::Constant(n, ActivationMap::kNever);
  result.activation.threshold = options.threshold;
  result.activation.horizon = options.t_end;

  if (options.snapshot_every > 0) {
    result.snapshot_times.push_back(0.0);
    result.snapshots.push_back(u);
  }

  VecX iion(n);
  VecX dydt(kIonicVarCount);
  VecX rhs(n);
  const double sub_dt = dt / options.gate_substeps;

  for (int step = 0; step < steps; ++step) {
    const double t = step * dt;
    const double t_next = (step + 1) * dt;
    const bool pulse = stimulus_active(stimulus, t);

    for (int i = 0; i < n; ++i) {
      const double istim = (pulse && stimulated[static_cast<std::size_t>(i)])
                               ? stimulus.amplitude
                               : 0.0;
      double* yi = y.col(i).data();
      for (int s = 0; s < options.gate_substeps; ++s)
        result.clamp_events += ionic_substep(u(i), yi, options.cell, sub_dt, istim);
      iion(i) = ionic_rhs_raw(u(i), yi, options.cell, dydt.data(), istim);
      if (!std::isfinite(iion(i)))
        throw std::runtime_error("run_monodomain: non-finite ionic state at t = " +
                                 std::to_string(t_next) + " ms (node " + std::to_string(i) +
                                 ")");
    }

    for (int i = 0; i < n; ++i) {
      const double iapp =
          (pulse && stimulated[static_cast<std::size_t>(i)]) ? -stimulus.amplitude : 0.0;
      rhs(i) = sys.lumped_mass(i) * (u(i) / dt + iapp - iion(i));
    }

    u = solver.solveWithGuess(rhs, u);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("run_monodomain: conjugate gradients stalled at t = " +
                               std::to_string(t_next) + " ms (error " +
                               std::to_string(solver.error()) + ")");
    if (!u.allFinite()) {
      int bad = 0;
      for (int i = 0; i < n; ++i)
        if (!std::isfinite(u(i))) {
          bad = i;
          break;
        }
      throw std::runtime_error("run_monodomain: non-finite potential at t = " +
                               std::to_string(t_next) + " ms (node " + std::to_string(bad) +
                               ")");
    }

    for (int i = 0; i < n; ++i)
      if (result.activation.times(i) == ActivationMap::kNever && u(i) > options.threshold)
        result.activation.times(i) = t_next;

    if (options.snapshot_every > 0 && (step + 1) % options.snapshot_every == 0) {
      result.snapshot_times.push_back(t_next);
      result.snapshots.push_back(u);
    }
  }

  result.u = std::move(u);
  return result;
}

ActivationMap extract_activation_map(const std::vector<VecX>& snapshots,
                                     const std::vector<double>& times, double threshold,
                                     double horizon) {
  if (snapshots.empty()) throw std::invalid_argument("extract_activation_map: no snapshots");
  if (snapshots.size() != times.size())
    throw std::invalid_argument("extract_activation_map: snapshot/time count mismatch");

  const Eigen::Index n = snapshots.front().size();
  ActivationMap map;
  map.threshold = threshold;
  map.horizon = horizon;
  map.times = VecX::Constant(n, ActivationMap::kNever);
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    if (snapshots[k].size() != n)
      throw std::invalid_argument("extract_activation_map: inconsistent snapshot size");
    if (k > 0 && times[k] < times[k - 1])
      throw std::invalid_argument("extract_activation_map: times must be non-decreasing");
    for (Eigen::Index i = 0; i < n; ++i)
      if (map.times(i) == ActivationMap::kNever && snapshots[k](i) > threshold)
        map.times(i) = times[k];
  }
  return map;
}

DepolarizationCurve depolarization_curve(const ActivationMap& map, double dt) {
  if (map.times.size() == 0) throw std::invalid_argument("depolarization_curve: empty map");
  if (!(dt > 0.0)) throw std::invalid_argument("depolarization_curve: dt must be positive");

  const int steps = std::max(0, static_cast<int>(std::ceil(map.horizon / dt - 1e-9)));
  const double n = static_cast<double>(map.times.size());

  DepolarizationCurve curve;
  curve.t.resize(steps + 1);
  curve.percent.resize(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    const double t = i * dt;
    curve.t(i) = t;
    const int count =
        static_cast<int>(((map.times.array() >= 0.0) && (map.times.array() <= t)).count());
    curve.percent(i) = 100.0 * count / n;
  }
  curve.complete = map.n_activated() == static_cast<int>(map.times.size());
  curve.full_time = curve.complete ? map.times.maxCoeff() : -1.0;
  return curve;
}

}  // namespace cfield
