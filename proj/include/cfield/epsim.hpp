#pragma once

#include <vector>

#include "cfield/fields.hpp"
#include "cfield/mesh.hpp"
#include "cfield/purkinje.hpp"
#include "cfield/types.hpp"

namespace cfield {

inline constexpr int kGateCount = 12;
inline constexpr int kConcentrationCount = 6;
inline constexpr int kIonicVarCount = kGateCount + kConcentrationCount;

// ten Tusscher-Panfilov epicardial ventricular cell model.  The three
// maximal conductances below carry the tissue-level values; every other
// constant keeps its published value inside the implementation.  State
// layout: 12 gates {m, h, j, d, f, f2, fcass, r, s, xr1, xr2, xs} followed
// by 6 concentration-like variables {Na_i, K_i, Ca_i, Ca_ss, Ca_sr, Rbar}.
struct TTP06Params {
  double g_na = 13.19;     // nS/pF
  double g_cal = 7.91e-5;  // cm ms^-1 uF^-1
  double g_kr = 0.11;      // nS/pF
};

// Published resting state (potential in mV, variables in model units).
double ttp06_rest_u();
VecX ttp06_rest_y();

// Steady value and relaxation time of each gate at the given potential;
// the calcium-inactivation gate tracks subspace calcium instead.
void ttp06_gate_steady(double u, double ca_ss, Eigen::Ref<VecX> y_inf, Eigen::Ref<VecX> tau);

// Total ionic current (pA/pF, outward positive) and the time derivative of
// all 18 state variables.  i_stim enters the potassium balance the same way
// it enters the potential equation.  Throws on non-finite input.
double ionic_rhs(double u, const Eigen::Ref<const VecX>& y, const TTP06Params& params,
                 Eigen::Ref<VecX> dydt, double i_stim = 0.0);

// Periodic rectangular current pulse applied to a node set.  Amplitude is
// in uA/cm^2; with the model's unit membrane capacitance per area this is
// numerically a per-capacitance current (pA/pF), negative inward, so the
// pulse contributes -amplitude to du/dt.
struct StimulusProtocol {
  std::vector<int> nodes;
  double amplitude = -52.0;    // uA/cm^2
  double start = 0.0;          // ms
  double duration = 5.0;       // ms
  double cycle_length = 800.0; // ms
};

// True while the pulse is on at time t (start of each cycle window).
bool stimulus_active(const StimulusProtocol& stim, double t);

struct CellTrace {
  VecX t;
  VecX u;
  VecX y_final;
  int clamp_events = 0;
};

// Forward-Euler integration of the single-cell model; the trace records the
// potential at every step.  Gates are clamped to [0,1] with events counted.
// The default protocol applies no current.
CellTrace integrate_cell(const TTP06Params& params, double t_end, double dt,
                         const StimulusProtocol& stim = {{}, 0.0});

// Diffusion tensor data: D = d_iso I + d_ani f0 f0^T on tets, d_purk I on
// tree line elements.  Fibers are required whenever d_ani > 0.
struct ConductivityModel {
  double d_iso = 0.0059;  // mm^2/ms
  double d_ani = 0.0177;  // mm^2/ms
  double d_purk = 1.60;   // mm^2/ms
  const FiberField* fibers = nullptr;
};

struct ActivationMap {
  static constexpr double kNever = -1.0;
  VecX times;               // ms; kNever marks nodes that stayed below threshold
  double threshold = -10.0; // mV
  double horizon = 0.0;     // ms
  int n_activated() const { return static_cast<int>((times.array() >= 0.0).count()); }
};

struct MonodomainOptions {
  double dt = 0.1;            // ms
  double t_end = 100.0;       // ms
  int gate_substeps = 5;      // explicit ionic substeps per diffusion step
  int snapshot_every = 0;     // store the potential every k steps (0 = none)
  double cg_tol = 1e-8;
  double purkinje_area = 1.0; // mm^2, cross-section of the 1D tree elements
  double threshold = -10.0;   // mV, activation threshold
  TTP06Params cell;
};

struct MonodomainResult {
  ActivationMap activation;
  VecX u;  // potential at t_end
  int clamp_events = 0;
  std::vector<double> snapshot_times;
  std::vector<VecX> snapshots;
  std::vector<int> tree_vertex;  // tree node -> mesh vertex (empty without a tree)
};

// Tree nodes snap to their nearest endocardial mesh vertices (nearest vertex
// overall when the mesh carries no endocardial labels) and share degrees of
// freedom with the tissue; returns the per-node vertex index.
std::vector<int> snap_tree_nodes(const Mesh& mesh, const PurkinjeTree& tree);

// P1 lumped-mass monodomain with implicit diffusion and explicit ionic
// update (ionic variables first, then the potential; nodal reaction
// quadrature).  Homogeneous Neumann boundaries.  Records the first time
// each node exceeds the threshold at the end of a step.  Throws when the
// linear solver stalls or the state turns non-finite (time and node named).
MonodomainResult run_monodomain(const Mesh& mesh, const ConductivityModel& conductivity,
                                const StimulusProtocol& stimulus,
                                const MonodomainOptions& options = {},
                                const PurkinjeTree* tree = nullptr);

// Brute-force first-crossing scan over stored snapshots.
ActivationMap extract_activation_map(const std::vector<VecX>& snapshots,
                                     const std::vector<double>& times, double threshold,
                                     double horizon);

// Percentage of nodes activated by each sample time; a step curve on the
// grid {0, dt, 2 dt, ..., horizon}.
struct DepolarizationCurve {
  VecX t;        // ms
  VecX percent;  // [0, 100], non-decreasing
  double full_time = -1.0;  // time of 100% depolarization, -1 when incomplete
  bool complete = false;
};

DepolarizationCurve depolarization_curve(const ActivationMap& map, double dt);

}  // namespace cfield
