#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfield/rng.hpp"
#include "cfield/types.hpp"

namespace cfield {

// Branched partially-connected feedforward network.  Spatial coordinates and
// shape z-scores travel through separate branches for the first
// `disentanglement` hidden layers, then merge into a common trunk.  Tanh after
// every affine map, including the last one, so outputs live in (-1, 1).
// Output channel 0 carries the normalized activation time; the remaining
// channels are free latent variables with no direct supervision.
struct BlnmArchitecture {
  int layers = 16;          // total hidden layer count (branch depth + trunk depth)
  int neurons = 42;         // trunk width; each branch gets ceil(neurons/2)
  int n_states = 5;         // output dimension, >= 1
  int disentanglement = 2;  // branch depth before the merge, in [1, layers)
};

void validate_architecture(const BlnmArchitecture& arch);

int branch_width(const BlnmArchitecture& arch);

// Flat parameter count for inputs split as 3 coordinates + n_modes z-scores.
Eigen::Index blnm_parameter_count(const BlnmArchitecture& arch, int n_modes);

// Component-wise affine map [lo, hi] <-> [-1, 1].  A degenerate component
// (hi == lo) maps to 0 and back to lo, so round trips stay exact.
struct NormRange {
  VecX lo;
  VecX hi;

  Eigen::Index dim() const { return lo.size(); }
  VecX normalize(const VecX& v) const;
  VecX denormalize(const VecX& v) const;
};

// Component-wise min/max over rows-as-samples.
NormRange fit_range(const MatX& samples);

struct BlnmNormalization {
  NormRange x;       // 3 components, bounding box of the training nodes
  NormRange theta;   // one component per z-score mode
  NormRange output;  // 1 component, activation time (ms)
};

struct BlnmModel {
  BlnmArchitecture architecture;
  int n_modes = 0;
  VecX weights;  // flat, laid out branch-x, branch-theta, trunk, output head
  BlnmNormalization normalization;
  std::uint64_t seed = 0;

  Eigen::Index n_parameters() const { return weights.size(); }
};

// Uniform fan-based init (limit sqrt(6 / (fan_in + fan_out))), zero biases.
// Weight draws come from a stream derived from `seed`.
BlnmModel make_blnm_model(const BlnmArchitecture& arch, int n_modes,
                          const BlnmNormalization& normalization, std::uint64_t seed);

// Single normalized point -> n_states outputs.
VecX blnm_forward(const BlnmModel& model, const Vec3& x_n, const VecX& theta_n);

// Batched forward; columns are points.  x_n is 3 x B, theta_n is n_modes x B.
MatX blnm_forward_batch(const BlnmModel& model, const MatX& x_n, const MatX& theta_n);

// Raw nodes in, activation times in ms out: normalizes with the model ranges,
// runs the batched forward, denormalizes channel 0.
VecX predict_activation_ms(const BlnmModel& model, const Points& nodes, const VecX& theta);

// Post-Tanh activations of every hidden layer, for structural checks: entries
// of branch_x may depend only on x_n, entries of branch_theta only on theta_n.
struct BlnmTrace {
  std::vector<VecX> branch_x;      // disentanglement entries
  std::vector<VecX> branch_theta;  // disentanglement entries
  std::vector<VecX> trunk;         // layers - disentanglement entries
  VecX output;
};

BlnmTrace blnm_forward_trace(const BlnmModel& model, const Vec3& x_n, const VecX& theta_n);

// Mean squared error of output channel 0 against `targets`, plus its exact
// reverse-mode gradient with respect to the flat weights when `grad` is
// non-null.  Latent channels contribute nothing.
double blnm_mse_gradient(const BlnmModel& model, const MatX& x_n, const MatX& theta_n,
                         const VecX& targets, VecX* grad);

struct AdamState {
  VecX m;
  VecX v;
  long t = 0;

  explicit AdamState(Eigen::Index n) : m(VecX::Zero(n)), v(VecX::Zero(n)) {}
};

// One Adam update in place.  A zero gradient leaves the weights untouched.
void adam_step(VecX& weights, const VecX& grad, AdamState& state, double learning_rate,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// One geometry of the cohort: node coordinates in mm, its z-score vector, and
// the simulated activation time per node in ms.
struct CohortGeometry {
  std::string label;
  Points nodes;
  VecX theta;
  VecX activation;
  bool test = false;  // true: held out from training
};

struct CohortDataset {
  std::vector<CohortGeometry> geometries;

  int n_modes() const;
  Eigen::Index n_train_points() const;
  bool has_test() const;
};

// Consistent theta dimensions, matching node/activation counts, finite values.
void validate_dataset(const CohortDataset& dataset);

// Ranges fitted on the training split only.
BlnmNormalization fit_normalization(const CohortDataset& dataset);

// Same cohort with every theta truncated to its first `modes` entries.
CohortDataset truncate_modes(const CohortDataset& dataset, int modes);

struct TrainingConfig {
  double learning_rate = 5e-4;
  int epochs = 1000;
  int points_per_epoch = 1485;
  int eval_every = 10;
  std::uint64_t rng_seed = 0;
};

void validate_training_config(const TrainingConfig& config);

struct EvalRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;  // NaN when the dataset has no test split
};

struct TrainingResult {
  BlnmModel model;                 // weights of the best checkpoint
  std::vector<double> batch_loss;  // per-epoch sampled-batch MSE
  std::vector<EvalRecord> evals;
  int best_epoch = 0;
  double best_test_mse = 0.0;  // falls back to train MSE without a test split
  bool diverged = false;
};

// Per epoch: draw points_per_epoch (geometry, node) pairs uniformly with
// replacement from the training split and take one Adam step on their MSE.
// Full-split MSE is evaluated every eval_every epochs and at the last epoch;
// the checkpoint with the lowest test MSE wins.  A non-finite loss stops
// training and returns the history accumulated so far with diverged set.
TrainingResult train_blnm(const BlnmArchitecture& arch, const CohortDataset& dataset,
                          const TrainingConfig& config);

struct IntRange {
  int lo = 0;
  int hi = 0;  // inclusive
};

struct BlnmSearchSpace {
  IntRange layers{5, 500};
  IntRange neurons{5, 20};
  IntRange n_states{1, 5};
  IntRange disentanglement{1, 4};
  IntRange points_per_epoch{1500, 10000};
  double lr_lo = 1e-4;
  double lr_hi = 1e-3;

  // The two readings of the published ranges: depth-heavy with narrow layers
  // as printed, and the swapped interpretation with wide shallow networks.
  static BlnmSearchSpace deep_narrow();
  static BlnmSearchSpace shallow_wide();
};

void validate_search_space(const BlnmSearchSpace& space);

// One sampled point of the search space.  Learning rate is log-uniform in
// [lr_lo, lr_hi]; the disentanglement draw is clamped below the sampled layer
// count.  Shared by the tuner and the gradient-check sweeps.
struct CandidateDraw {
  BlnmArchitecture architecture;
  double learning_rate = 0.0;
  int points_per_epoch = 0;
};

CandidateDraw sample_candidate(const BlnmSearchSpace& space, Rng& rng);

struct TuningOptions {
  int budget = 100;  // sampled configurations
  int epochs = 1000;
  int eval_every = 10;
  std::uint64_t seed = 0;
};

struct TuningTrial {
  BlnmArchitecture architecture;
  TrainingConfig config;
  double test_mse = 0.0;  // best seen at the longest rung this trial reached
  int epochs_run = 0;
  bool pruned = false;
};

struct TuningResult {
  BlnmArchitecture architecture;
  TrainingConfig config;
  double best_test_mse = 0.0;
  std::vector<TuningTrial> trials;
};

// Seeded random search over `budget` sampled configurations, raced with
// successive halving: rungs double from eval_every epochs up to `epochs`,
// keeping the better half by test MSE at each rung.  Survivors of the last
// rung train to the full epoch count and the argmin wins.  Rungs restart from
// scratch; per-seed determinism makes the longer run an exact extension.
TuningResult tune_blnm(const BlnmSearchSpace& space, const CohortDataset& dataset,
                       const TuningOptions& options);

struct GeometryEvaluation {
  std::string label;
  bool test = false;
  double mse = 0.0;            // over normalized targets
  VecX abs_error_ms;           // per node, after denormalization
  std::vector<char> top_half;  // absolute error strictly above the median
  VecX curve_activation_ms;    // distinct simulated activation times, sorted
  VecX curve_mean_error_ms;    // mean absolute error of the nodes at each time
};

struct CohortEvaluation {
  std::vector<GeometryEvaluation> geometries;
  double train_mse = 0.0;  // mean of per-geometry MSE over the split
  double test_mse = 0.0;   // NaN when a split is empty
};

CohortEvaluation evaluate_cohort(const BlnmModel& model, const CohortDataset& dataset);

// Held-out error table, one "label,test_mse" row per test geometry.
std::string mse_table_csv(const CohortEvaluation& evaluation);

struct ModeSweepRow {
  int modes = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  double worst_geometry_mse = 0.0;  // over test geometries
  double best_geometry_mse = 0.0;
};

// Retrain the same architecture with theta truncated to 1..n_modes modes.
std::vector<ModeSweepRow> mode_sweep(const BlnmArchitecture& arch, const CohortDataset& dataset,
                                     const TrainingConfig& config);

std::string mode_sweep_csv(const std::vector<ModeSweepRow>& rows);

// Checkpoint: "BLNM1 <json_byte_len>\n", a JSON header carrying architecture,
// n_modes, seed, and normalization ranges, then the weights as a little-endian
// float64 blob.
void save_blnm(const BlnmModel& model, const std::string& path);
BlnmModel load_blnm(const std::string& path);

}  // namespace cfield
