#include "cfield/blnm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace cfield {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// tanh through the exp identity: Eigen vectorizes exp for doubles, plain
// std::tanh it does not.  Saturates cleanly to +-1 on overflow.
void tanh_inplace(MatX& a) { a.array() = 1.0 - 2.0 / ((2.0 * a.array()).exp() + 1.0); }

struct AffineSpec {
  Eigen::Index w_off = 0;
  Eigen::Index b_off = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

// Flat weight layout: branch-x layers, branch-theta layers, trunk layers,
// output head; within a layer the (column-major) matrix precedes the bias.
struct Plan {
  int bw = 0;
  std::vector<AffineSpec> bx;
  std::vector<AffineSpec> bt;
  std::vector<AffineSpec> trunk;
  AffineSpec out;
  Eigen::Index n_params = 0;
};

Plan make_plan(const BlnmArchitecture& arch, int n_modes) {
  validate_architecture(arch);
  if (n_modes < 1) throw std::invalid_argument("blnm: n_modes must be at least 1");
  Plan plan;
  plan.bw = branch_width(arch);
  Eigen::Index cur = 0;
  auto push = [&cur](Eigen::Index rows, Eigen::Index cols) {
    AffineSpec s;
    s.rows = rows;
    s.cols = cols;
    s.w_off = cur;
    cur += rows * cols;
    s.b_off = cur;
    cur += rows;
    return s;
  };
  const int d = arch.disentanglement;
  plan.bx.push_back(push(plan.bw, 3));
  for (int i = 1; i < d; ++i) plan.bx.push_back(push(plan.bw, plan.bw));
  plan.bt.push_back(push(plan.bw, n_modes));
  for (int i = 1; i < d; ++i) plan.bt.push_back(push(plan.bw, plan.bw));
  plan.trunk.push_back(push(arch.neurons, 2 * plan.bw));
  for (int i = 1; i < arch.layers - d; ++i) plan.trunk.push_back(push(arch.neurons, arch.neurons));
  plan.out = push(arch.n_states, arch.neurons);
  plan.n_params = cur;
  return plan;
}

MatX apply_layer(const AffineSpec& s, const VecX& w, const MatX& in) {
  Eigen::Map<const MatX> W(w.data() + s.w_off, s.rows, s.cols);
  Eigen::Map<const VecX> b(w.data() + s.b_off, s.rows);
  MatX out = (W * in).colwise() + b;
  tanh_inplace(out);
  return out;
}

struct ForwardPass {
  std::vector<MatX> ax;   // ax[0] = x input, then branch-x activations
  std::vector<MatX> at;   // theta branch
  std::vector<MatX> atr;  // atr[0] = merged features, then trunk activations
  MatX z;
};

ForwardPass run_forward(const Plan& plan, const VecX& w, const MatX& x, const MatX& theta) {
  ForwardPass fp;
  fp.ax.push_back(x);
  for (const AffineSpec& s : plan.bx) fp.ax.push_back(apply_layer(s, w, fp.ax.back()));
  fp.at.push_back(theta);
  for (const AffineSpec& s : plan.bt) fp.at.push_back(apply_layer(s, w, fp.at.back()));
  MatX merged(2 * plan.bw, x.cols());
  merged.topRows(plan.bw) = fp.ax.back();
  merged.bottomRows(plan.bw) = fp.at.back();
  fp.atr.push_back(std::move(merged));
  for (const AffineSpec& s : plan.trunk) fp.atr.push_back(apply_layer(s, w, fp.atr.back()));
  fp.z = apply_layer(plan.out, w, fp.atr.back());
  return fp;
}

void check_batch(const BlnmModel& model, const MatX& x, const MatX& theta) {
  if (x.rows() != 3) throw std::invalid_argument("blnm: x batch must have 3 rows");
  if (theta.rows() != model.n_modes)
    throw std::invalid_argument("blnm: theta batch row count does not match the model modes");
  if (x.cols() != theta.cols())
    throw std::invalid_argument("blnm: x and theta batches differ in point count");
}

// dL/d(a_out) comes in through g; dL/d(a_in) replaces it.  Weight and bias
// gradients land in their slots of the flat gradient vector.
void backward_layer(const AffineSpec& s, const VecX& w, const MatX& a_out, const MatX& a_in,
                    MatX& g, VecX& grad) {
  const MatX gpre = (g.array() * (1.0 - a_out.array().square())).matrix();
  Eigen::Map<MatX> dW(grad.data() + s.w_off, s.rows, s.cols);
  dW = gpre * a_in.transpose();
  Eigen::Map<VecX> db(grad.data() + s.b_off, s.rows);
  db = gpre.rowwise().sum();
  Eigen::Map<const MatX> W(w.data() + s.w_off, s.rows, s.cols);
  g = W.transpose() * gpre;
}

// Normalized copy of one geometry, theta broadcast across the node columns.
struct NormGeom {
  std::string label;
  MatX x;  // 3 x N
  MatX theta;
  VecX y;
  bool test = false;
};

std::vector<NormGeom> normalize_cohort(const CohortDataset& dataset,
                                       const BlnmNormalization& norm) {
  std::vector<NormGeom> out;
  out.reserve(dataset.geometries.size());
  for (const CohortGeometry& g : dataset.geometries) {
    NormGeom ng;
    ng.label = g.label;
    ng.test = g.test;
    const Eigen::Index n = g.nodes.rows();
    ng.x.resize(3, n);
    for (int a = 0; a < 3; ++a) {
      const double lo = norm.x.lo[a];
      const double span = norm.x.hi[a] - lo;
      if (span > 0.0) {
        ng.x.row(a) =
            ((2.0 / span) * (g.nodes.col(a).transpose().array() - lo) - 1.0).matrix();
      } else {
        ng.x.row(a).setZero();
      }
    }
    ng.theta = norm.theta.normalize(g.theta).replicate(1, n);
    ng.y.resize(n);
    const double lo = norm.output.lo[0];
    const double span = norm.output.hi[0] - lo;
    for (Eigen::Index i = 0; i < n; ++i)
      ng.y[i] = span > 0.0 ? 2.0 * (g.activation[i] - lo) / span - 1.0 : 0.0;
    out.push_back(std::move(ng));
  }
  return out;
}

// Mean of per-geometry MSE over one split; NaN when the split is empty.
double split_mse(const BlnmModel& model, const std::vector<NormGeom>& geoms, bool test) {
  double sum = 0.0;
  int count = 0;
  for (const NormGeom& g : geoms) {
    if (g.test != test) continue;
    sum += blnm_mse_gradient(model, g.x, g.theta, g.y, nullptr);
    ++count;
  }
  return count > 0 ? sum / count : kNan;
}

int draw_int(const IntRange& r, Rng& rng) {
  return r.lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(r.hi - r.lo) + 1));
}

void append_csv_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  out += buf;
}

}  // namespace

void validate_architecture(const BlnmArchitecture& arch) {
  if (arch.layers < 2) throw std::invalid_argument("blnm: need at least 2 hidden layers");
  if (arch.neurons < 1) throw std::invalid_argument("blnm: neurons must be positive");
  if (arch.n_states < 1) throw std::invalid_argument("blnm: n_states must be at least 1");
  if (arch.disentanglement < 1 || arch.disentanglement >= arch.layers)
    throw std::invalid_argument("blnm: disentanglement must lie in [1, layers)");
}

int branch_width(const BlnmArchitecture& arch) { return (arch.neurons + 1) / 2; }

Eigen::Index blnm_parameter_count(const BlnmArchitecture& arch, int n_modes) {
  return make_plan(arch, n_modes).n_params;
}

VecX NormRange::normalize(const VecX& v) const {
  if (v.size() != dim()) throw std::invalid_argument("normalization: dimension mismatch");
  VecX out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double span = hi[i] - lo[i];
    out[i] = span > 0.0 ? 2.0 * (v[i] - lo[i]) / span - 1.0 : 0.0;
  }
  return out;
}

VecX NormRange::denormalize(const VecX& v) const {
  if (v.size() != dim()) throw std::invalid_argument("normalization: dimension mismatch");
  VecX out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double span = hi[i] - lo[i];
    out[i] = span > 0.0 ? lo[i] + 0.5 * (v[i] + 1.0) * span : lo[i];
  }
  return out;
}

NormRange fit_range(const MatX& samples) {
  if (samples.rows() < 1) throw std::invalid_argument("fit_range: no samples");
  if (!samples.allFinite()) throw std::invalid_argument("fit_range: non-finite samples");
  NormRange r;
  r.lo = samples.colwise().minCoeff();
  r.hi = samples.colwise().maxCoeff();
  return r;
}

BlnmModel make_blnm_model(const BlnmArchitecture& arch, int n_modes,
                          const BlnmNormalization& normalization, std::uint64_t seed) {
  const Plan plan = make_plan(arch, n_modes);
  if (normalization.x.dim() != 3)
    throw std::invalid_argument("blnm: coordinate normalization must have 3 components");
  if (normalization.theta.dim() != n_modes)
    throw std::invalid_argument("blnm: theta normalization does not match n_modes");
  if (normalization.output.dim() != 1)
    throw std::invalid_argument("blnm: output normalization must have 1 component");
  BlnmModel model;
  model.architecture = arch;
  model.n_modes = n_modes;
  model.normalization = normalization;
  model.seed = seed;
  model.weights = VecX::Zero(plan.n_params);
  Rng rng(derive_seed(seed, "blnm-init"));
  auto fill = [&](const AffineSpec& s) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    for (Eigen::Index k = 0; k < s.rows * s.cols; ++k)
      model.weights[s.w_off + k] = rng.uniform(-limit, limit);
  };
  for (const AffineSpec& s : plan.bx) fill(s);
  for (const AffineSpec& s : plan.bt) fill(s);
  for (const AffineSpec& s : plan.trunk) fill(s);
  fill(plan.out);
  return model;
}

MatX blnm_forward_batch(const BlnmModel& model, const MatX& x_n, const MatX& theta_n) {
  check_batch(model, x_n, theta_n);
  const Plan plan = make_plan(model.architecture, model.n_modes);
  if (model.weights.size() != plan.n_params)
    throw std::invalid_argument("blnm: weight vector does not match the architecture");
  return run_forward(plan, model.weights, x_n, theta_n).z;
}

VecX blnm_forward(const BlnmModel& model, const Vec3& x_n, const VecX& theta_n) {
  return blnm_forward_batch(model, x_n, theta_n);
}

VecX predict_activation_ms(const BlnmModel& model, const Points& nodes, const VecX& theta) {
  if (theta.size() != model.n_modes)
    throw std::invalid_argument("blnm: theta dimension does not match the model");
  const Eigen::Index n = nodes.rows();
  MatX x(3, n);
  for (int a = 0; a < 3; ++a) {
    const double lo = model.normalization.x.lo[a];
    const double span = model.normalization.x.hi[a] - lo;
    if (span > 0.0) {
      x.row(a) = ((2.0 / span) * (nodes.col(a).transpose().array() - lo) - 1.0).matrix();
    } else {
      x.row(a).setZero();
    }
  }
  const MatX t = model.normalization.theta.normalize(theta).replicate(1, n);
  const MatX z = blnm_forward_batch(model, x, t);
  const double lo = model.normalization.output.lo[0];
  const double span = model.normalization.output.hi[0] - lo;
  VecX out(n);
  for (Eigen::Index i = 0; i < n; ++i)
    out[i] = span > 0.0 ? lo + 0.5 * (z(0, i) + 1.0) * span : lo;
  return out;
}

BlnmTrace blnm_forward_trace(const BlnmModel& model, const Vec3& x_n, const VecX& theta_n) {
  check_batch(model, x_n, theta_n);
  const Plan plan = make_plan(model.architecture, model.n_modes);
  if (model.weights.size() != plan.n_params)
    throw std::invalid_argument("blnm: weight vector does not match the architecture");
  const ForwardPass fp = run_forward(plan, model.weights, x_n, theta_n);
  BlnmTrace trace;
  for (std::size_t i = 1; i < fp.ax.size(); ++i) trace.branch_x.push_back(fp.ax[i].col(0));
  for (std::size_t i = 1; i < fp.at.size(); ++i) trace.branch_theta.push_back(fp.at[i].col(0));
  for (std::size_t i = 1; i < fp.atr.size(); ++i) trace.trunk.push_back(fp.atr[i].col(0));
  trace.output = fp.z.col(0);
  return trace;
}

double blnm_mse_gradient(const BlnmModel& model, const MatX& x_n, const MatX& theta_n,
                         const VecX& targets, VecX* grad) {
  check_batch(model, x_n, theta_n);
  const Eigen::Index batch = x_n.cols();
  if (batch == 0) throw std::invalid_argument("blnm: empty batch");
  if (targets.size() != batch)
    throw std::invalid_argument("blnm: target count does not match the batch");
  const Plan plan = make_plan(model.architecture, model.n_modes);
  if (model.weights.size() != plan.n_params)
    throw std::invalid_argument("blnm: weight vector does not match the architecture");
  const VecX& w = model.weights;
  const ForwardPass fp = run_forward(plan, w, x_n, theta_n);
  const VecX residual = fp.z.row(0).transpose() - targets;
  const double mse = residual.squaredNorm() / static_cast<double>(batch);
  if (grad == nullptr) return mse;

  grad->resize(plan.n_params);
  MatX g = MatX::Zero(model.architecture.n_states, batch);
  g.row(0) = (2.0 / static_cast<double>(batch)) * residual.transpose();
  backward_layer(plan.out, w, fp.z, fp.atr.back(), g, *grad);
  for (std::size_t j = plan.trunk.size(); j-- > 0;)
    backward_layer(plan.trunk[j], w, fp.atr[j + 1], fp.atr[j], g, *grad);
  MatX gx = g.topRows(plan.bw);
  MatX gt = g.bottomRows(plan.bw);
  for (std::size_t i = plan.bx.size(); i-- > 0;)
    backward_layer(plan.bx[i], w, fp.ax[i + 1], fp.ax[i], gx, *grad);
  for (std::size_t i = plan.bt.size(); i-- > 0;)
    backward_layer(plan.bt[i], w, fp.at[i + 1], fp.at[i], gt, *grad);
  return mse;
}

void adam_step(VecX& weights, const VecX& grad, AdamState& state, double learning_rate,
               double beta1, double beta2, double eps) {
  if (grad.size() != weights.size() || state.m.size() != weights.size())
    throw std::invalid_argument("adam_step: size mismatch");
  state.t += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  weights.array() -=
      learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

int CohortDataset::n_modes() const {
  return geometries.empty() ? 0 : static_cast<int>(geometries.front().theta.size());
}

Eigen::Index CohortDataset::n_train_points() const {
  Eigen::Index total = 0;
  for (const CohortGeometry& g : geometries)
    if (!g.test) total += g.nodes.rows();
  return total;
}

bool CohortDataset::has_test() const {
  for (const CohortGeometry& g : geometries)
    if (g.test) return true;
  return false;
}

void validate_dataset(const CohortDataset& dataset) {
  if (dataset.geometries.empty()) throw std::invalid_argument("cohort: no geometries");
  const Eigen::Index modes = dataset.geometries.front().theta.size();
  if (modes < 1) throw std::invalid_argument("cohort: empty z-score vectors");
  for (const CohortGeometry& g : dataset.geometries) {
    if (g.theta.size() != modes)
      throw std::invalid_argument("cohort: inconsistent z-score dimensions");
    if (g.nodes.rows() < 1) throw std::invalid_argument("cohort: geometry without nodes");
    if (g.activation.size() != g.nodes.rows())
      throw std::invalid_argument("cohort: activation map size does not match the nodes");
    if (!g.nodes.allFinite() || !g.theta.allFinite() || !g.activation.allFinite())
      throw std::invalid_argument("cohort: non-finite data");
  }
}

BlnmNormalization fit_normalization(const CohortDataset& dataset) {
  validate_dataset(dataset);
  Eigen::Index n_train_geoms = 0;
  Eigen::Index n_train_nodes = 0;
  for (const CohortGeometry& g : dataset.geometries) {
    if (g.test) continue;
    ++n_train_geoms;
    n_train_nodes += g.nodes.rows();
  }
  if (n_train_geoms == 0) throw std::invalid_argument("cohort: no training geometries");
  MatX coords(n_train_nodes, 3);
  MatX thetas(n_train_geoms, dataset.n_modes());
  MatX outputs(n_train_nodes, 1);
  Eigen::Index row = 0;
  Eigen::Index geom = 0;
  for (const CohortGeometry& g : dataset.geometries) {
    if (g.test) continue;
    coords.middleRows(row, g.nodes.rows()) = g.nodes;
    outputs.col(0).segment(row, g.nodes.rows()) = g.activation;
    thetas.row(geom) = g.theta.transpose();
    row += g.nodes.rows();
    ++geom;
  }
  BlnmNormalization norm;
  norm.x = fit_range(coords);
  norm.theta = fit_range(thetas);
  norm.output = fit_range(outputs);
  return norm;
}

CohortDataset truncate_modes(const CohortDataset& dataset, int modes) {
  validate_dataset(dataset);
  if (modes < 1 || modes > dataset.n_modes())
    throw std::invalid_argument("truncate_modes: mode count out of range");
  CohortDataset out = dataset;
  for (CohortGeometry& g : out.geometries) g.theta = g.theta.head(modes).eval();
  return out;
}

void validate_training_config(const TrainingConfig& config) {
  if (!(config.learning_rate > 0.0))
    throw std::invalid_argument("training: learning rate must be positive");
  if (config.epochs < 1 || config.points_per_epoch < 1 || config.eval_every < 1)
    throw std::invalid_argument("training: counts must be positive");
}

TrainingResult train_blnm(const BlnmArchitecture& arch, const CohortDataset& dataset,
                          const TrainingConfig& config) {
  validate_training_config(config);
  validate_dataset(dataset);
  const BlnmNormalization norm = fit_normalization(dataset);
  const std::vector<NormGeom> geoms = normalize_cohort(dataset, norm);
  const bool has_test = dataset.has_test();

  // Pooled index over training nodes for the per-epoch draws.
  std::vector<std::size_t> train_geoms;
  std::vector<Eigen::Index> offsets{0};
  for (std::size_t gi = 0; gi < geoms.size(); ++gi) {
    if (geoms[gi].test) continue;
    train_geoms.push_back(gi);
    offsets.push_back(offsets.back() + geoms[gi].y.size());
  }
  const Eigen::Index total = offsets.back();

  TrainingResult result;
  result.model = make_blnm_model(arch, dataset.n_modes(), norm, config.rng_seed);
  result.best_test_mse = kNan;
  VecX best_weights = result.model.weights;

  Rng rng(derive_seed(config.rng_seed, "blnm-batches"));
  AdamState adam(result.model.weights.size());
  VecX grad;
  const Eigen::Index batch = config.points_per_epoch;
  MatX xb(3, batch);
  MatX tb(dataset.n_modes(), batch);
  VecX yb(batch);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (Eigen::Index k = 0; k < batch; ++k) {
      const Eigen::Index r =
          static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(total)));
      const auto it = std::upper_bound(offsets.begin(), offsets.end(), r);
      const std::size_t slot = static_cast<std::size_t>(it - offsets.begin()) - 1;
      const NormGeom& g = geoms[train_geoms[slot]];
      const Eigen::Index node = r - offsets[slot];
      xb.col(k) = g.x.col(node);
      tb.col(k) = g.theta.col(node);
      yb[k] = g.y[node];
    }
    const double loss = blnm_mse_gradient(result.model, xb, tb, yb, &grad);
    result.batch_loss.push_back(loss);
    if (!std::isfinite(loss)) {
      result.diverged = true;
      break;
    }
    adam_step(result.model.weights, grad, adam, config.learning_rate);

    if (epoch % config.eval_every == 0 || epoch == config.epochs) {
      EvalRecord rec;
      rec.epoch = epoch;
      rec.train_mse = split_mse(result.model, geoms, false);
      rec.test_mse = split_mse(result.model, geoms, true);
      result.evals.push_back(rec);
      const double metric = has_test ? rec.test_mse : rec.train_mse;
      if (!std::isfinite(metric)) {
        result.diverged = true;
        break;
      }
      if (!(metric >= result.best_test_mse)) {  // first finite metric also lands here
        result.best_test_mse = metric;
        result.best_epoch = epoch;
        best_weights = result.model.weights;
      }
    }
  }
  result.model.weights = std::move(best_weights);
  return result;
}

BlnmSearchSpace BlnmSearchSpace::deep_narrow() { return BlnmSearchSpace{}; }

BlnmSearchSpace BlnmSearchSpace::shallow_wide() {
  BlnmSearchSpace space;
  space.layers = {5, 20};
  space.neurons = {20, 500};
  space.points_per_epoch = {1000, 10000};
  return space;
}

void validate_search_space(const BlnmSearchSpace& space) {
  auto ordered = [](const IntRange& r) { return r.hi >= r.lo; };
  if (!ordered(space.layers) || !ordered(space.neurons) || !ordered(space.n_states) ||
      !ordered(space.disentanglement) || !ordered(space.points_per_epoch))
    throw std::invalid_argument("search space: inverted range");
  if (space.layers.lo < 2) throw std::invalid_argument("search space: layers must start at 2");
  if (space.neurons.lo < 1 || space.n_states.lo < 1 || space.disentanglement.lo < 1 ||
      space.points_per_epoch.lo < 1)
    throw std::invalid_argument("search space: ranges must be positive");
  if (!(space.lr_lo > 0.0) || space.lr_hi < space.lr_lo)
    throw std::invalid_argument("search space: bad learning-rate interval");
}

CandidateDraw sample_candidate(const BlnmSearchSpace& space, Rng& rng) {
  validate_search_space(space);
  CandidateDraw draw;
  draw.architecture.layers = draw_int(space.layers, rng);
  draw.architecture.neurons = draw_int(space.neurons, rng);
  draw.architecture.n_states = draw_int(space.n_states, rng);
  IntRange dis = space.disentanglement;
  dis.hi = std::min(dis.hi, draw.architecture.layers - 1);
  dis.lo = std::min(dis.lo, dis.hi);
  draw.architecture.disentanglement = draw_int(dis, rng);
  draw.points_per_epoch = draw_int(space.points_per_epoch, rng);
  draw.learning_rate = space.lr_lo == space.lr_hi
                           ? space.lr_lo
                           : std::exp(rng.uniform(std::log(space.lr_lo), std::log(space.lr_hi)));
  return draw;
}

TuningResult tune_blnm(const BlnmSearchSpace& space, const CohortDataset& dataset,
                       const TuningOptions& options) {
  validate_search_space(space);
  if (options.budget < 1) throw std::invalid_argument("tune: budget must be at least 1");
  if (options.epochs < 1 || options.eval_every < 1)
    throw std::invalid_argument("tune: epochs and eval_every must be positive");

  TuningResult result;
  Rng rng(derive_seed(options.seed, "blnm-tune"));
  for (int i = 0; i < options.budget; ++i) {
    const CandidateDraw draw = sample_candidate(space, rng);
    TuningTrial trial;
    trial.architecture = draw.architecture;
    trial.config.learning_rate = draw.learning_rate;
    trial.config.points_per_epoch = draw.points_per_epoch;
    trial.config.epochs = options.epochs;
    trial.config.eval_every = options.eval_every;
    trial.config.rng_seed = derive_seed(options.seed, "trial-" + std::to_string(i));
    trial.test_mse = kNan;
    result.trials.push_back(trial);
  }

  auto run_trial = [&](TuningTrial& trial, int epochs) {
    TrainingConfig config = trial.config;
    config.epochs = epochs;
    const TrainingResult tr = train_blnm(trial.architecture, dataset, config);
    trial.test_mse = tr.best_test_mse;
    trial.epochs_run = epochs;
  };
  auto score = [&](std::size_t i) {
    const double mse = result.trials[i].test_mse;
    return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
  };

  std::vector<std::size_t> alive(result.trials.size());
  for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
  int rung = options.eval_every;
  while (true) {
    if (alive.size() == 1) {
      run_trial(result.trials[alive[0]], options.epochs);
      break;
    }
    const int target = std::min(rung, options.epochs);
    for (std::size_t i : alive) run_trial(result.trials[i], target);
    if (target == options.epochs) break;
    std::stable_sort(alive.begin(), alive.end(),
                     [&](std::size_t a, std::size_t b) { return score(a) < score(b); });
    const std::size_t keep = (alive.size() + 1) / 2;
    for (std::size_t k = keep; k < alive.size(); ++k) result.trials[alive[k]].pruned = true;
    alive.resize(keep);
    rung *= 2;
  }

  std::size_t best = alive[0];
  for (std::size_t i : alive)
    if (score(i) < score(best)) best = i;
  const TuningTrial& winner = result.trials[best];
  result.architecture = winner.architecture;
  result.config = winner.config;
  result.best_test_mse = winner.test_mse;
  return result;
}

CohortEvaluation evaluate_cohort(const BlnmModel& model, const CohortDataset& dataset) {
  validate_dataset(dataset);
  if (dataset.n_modes() != model.n_modes)
    throw std::invalid_argument("evaluate: cohort z-score dimension does not match the model");
  const std::vector<NormGeom> geoms = normalize_cohort(dataset, model.normalization);

  CohortEvaluation ev;
  double sums[2] = {0.0, 0.0};
  int counts[2] = {0, 0};
  for (std::size_t gi = 0; gi < geoms.size(); ++gi) {
    const NormGeom& ng = geoms[gi];
    const CohortGeometry& g = dataset.geometries[gi];
    GeometryEvaluation ge;
    ge.label = g.label;
    ge.test = g.test;

    const MatX z = blnm_forward_batch(model, ng.x, ng.theta);
    const VecX residual = z.row(0).transpose() - ng.y;
    const Eigen::Index n = residual.size();
    ge.mse = residual.squaredNorm() / static_cast<double>(n);

    const double lo = model.normalization.output.lo[0];
    const double span = model.normalization.output.hi[0] - lo;
    ge.abs_error_ms.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pred = span > 0.0 ? lo + 0.5 * (z(0, i) + 1.0) * span : lo;
      ge.abs_error_ms[i] = std::abs(pred - g.activation[i]);
    }

    std::vector<double> sorted(ge.abs_error_ms.data(), ge.abs_error_ms.data() + n);
    std::sort(sorted.begin(), sorted.end());
    const double median = n % 2 == 1 ? sorted[static_cast<std::size_t>(n / 2)]
                                     : 0.5 * (sorted[static_cast<std::size_t>(n / 2 - 1)] +
                                              sorted[static_cast<std::size_t>(n / 2)]);
    ge.top_half.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      ge.top_half[static_cast<std::size_t>(i)] = ge.abs_error_ms[i] > median ? 1 : 0;

    std::map<double, std::pair<double, Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& slot = groups[g.activation[i]];
      slot.first += ge.abs_error_ms[i];
      slot.second += 1;
    }
    ge.curve_activation_ms.resize(static_cast<Eigen::Index>(groups.size()));
    ge.curve_mean_error_ms.resize(static_cast<Eigen::Index>(groups.size()));
    Eigen::Index slot_row = 0;
    for (const auto& [time, slot] : groups) {
      ge.curve_activation_ms[slot_row] = time;
      ge.curve_mean_error_ms[slot_row] = slot.first / static_cast<double>(slot.second);
      ++slot_row;
    }

    sums[g.test ? 1 : 0] += ge.mse;
    counts[g.test ? 1 : 0] += 1;
    ev.geometries.push_back(std::move(ge));
  }
  ev.train_mse = counts[0] > 0 ? sums[0] / counts[0] : kNan;
  ev.test_mse = counts[1] > 0 ? sums[1] / counts[1] : kNan;
  return ev;
}

std::string mse_table_csv(const CohortEvaluation& evaluation) {
  std::string out = "label,test_mse\n";
  for (const GeometryEvaluation& g : evaluation.geometries) {
    if (!g.test) continue;
    out += g.label;
    out += ',';
    append_csv_number(out, g.mse);
    out += '\n';
  }
  return out;
}

std::vector<ModeSweepRow> mode_sweep(const BlnmArchitecture& arch, const CohortDataset& dataset,
                                     const TrainingConfig& config) {
  validate_dataset(dataset);
  std::vector<ModeSweepRow> rows;
  for (int m = 1; m <= dataset.n_modes(); ++m) {
    const CohortDataset truncated = truncate_modes(dataset, m);
    const TrainingResult tr = train_blnm(arch, truncated, config);
    const CohortEvaluation ev = evaluate_cohort(tr.model, truncated);
    ModeSweepRow row;
    row.modes = m;
    row.train_mse = ev.train_mse;
    row.test_mse = ev.test_mse;
    row.worst_geometry_mse = -std::numeric_limits<double>::infinity();
    row.best_geometry_mse = std::numeric_limits<double>::infinity();
    bool any_test = false;
    for (const GeometryEvaluation& g : ev.geometries) {
      if (!g.test) continue;
      any_test = true;
      row.worst_geometry_mse = std::max(row.worst_geometry_mse, g.mse);
      row.best_geometry_mse = std::min(row.best_geometry_mse, g.mse);
    }
    if (!any_test) {
      row.worst_geometry_mse = kNan;
      row.best_geometry_mse = kNan;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string mode_sweep_csv(const std::vector<ModeSweepRow>& rows) {
  std::string out = "modes,train_mse,test_mse,worst_geometry_mse,best_geometry_mse\n";
  for (const ModeSweepRow& r : rows) {
    out += std::to_string(r.modes);
    for (double v : {r.train_mse, r.test_mse, r.worst_geometry_mse, r.best_geometry_mse}) {
      out += ',';
      append_csv_number(out, v);
    }
    out += '\n';
  }
  return out;
}

namespace {

nlohmann::json range_to_json(const NormRange& r) {
  return {{"lo", std::vector<double>(r.lo.data(), r.lo.data() + r.lo.size())},
          {"hi", std::vector<double>(r.hi.data(), r.hi.data() + r.hi.size())}};
}

NormRange range_from_json(const nlohmann::json& j) {
  const auto lo = j.at("lo").get<std::vector<double>>();
  const auto hi = j.at("hi").get<std::vector<double>>();
  if (lo.size() != hi.size()) throw std::runtime_error("checkpoint: inconsistent range");
  NormRange r;
  r.lo = Eigen::Map<const VecX>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  r.hi = Eigen::Map<const VecX>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  return r;
}

}  // namespace

void save_blnm(const BlnmModel& model, const std::string& path) {
  const Plan plan = make_plan(model.architecture, model.n_modes);
  if (model.weights.size() != plan.n_params)
    throw std::invalid_argument("checkpoint: weight vector does not match the architecture");
  nlohmann::json j;
  j["architecture"] = {{"layers", model.architecture.layers},
                       {"neurons", model.architecture.neurons},
                       {"n_states", model.architecture.n_states},
                       {"disentanglement", model.architecture.disentanglement}};
  j["n_modes"] = model.n_modes;
  j["seed"] = model.seed;
  j["n_weights"] = model.weights.size();
  j["normalization"] = {{"x", range_to_json(model.normalization.x)},
                        {"theta", range_to_json(model.normalization.theta)},
                        {"output", range_to_json(model.normalization.output)}};
  const std::string header = j.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out << "BLNM1 " << header.size() << "\n" << header;
  // Raw little-endian doubles; every supported target is little-endian.
  out.write(reinterpret_cast<const char*>(model.weights.data()),
            static_cast<std::streamsize>(model.weights.size()) *
                static_cast<std::streamsize>(sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

BlnmModel load_blnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string magic;
  std::size_t header_len = 0;
  in >> magic >> header_len;
  if (!in || magic != "BLNM1") throw std::runtime_error("checkpoint: bad magic in " + path);
  in.get();  // the newline after the byte count
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("checkpoint: malformed header in " + path);
  }
  BlnmModel model;
  Eigen::Index stated = 0;
  try {
    const auto& a = j.at("architecture");
    model.architecture.layers = a.at("layers").get<int>();
    model.architecture.neurons = a.at("neurons").get<int>();
    model.architecture.n_states = a.at("n_states").get<int>();
    model.architecture.disentanglement = a.at("disentanglement").get<int>();
    model.n_modes = j.at("n_modes").get<int>();
    model.seed = j.at("seed").get<std::uint64_t>();
    model.normalization.x = range_from_json(j.at("normalization").at("x"));
    model.normalization.theta = range_from_json(j.at("normalization").at("theta"));
    model.normalization.output = range_from_json(j.at("normalization").at("output"));
    stated = j.at("n_weights").get<Eigen::Index>();
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("checkpoint: missing fields in " + path);
  }
  const Plan plan = make_plan(model.architecture, model.n_modes);
  if (stated != plan.n_params)
    throw std::runtime_error("checkpoint: weight count does not match the architecture");
  model.weights.resize(plan.n_params);
  in.read(reinterpret_cast<char*>(model.weights.data()),
          static_cast<std::streamsize>(plan.n_params) *
              static_cast<std::streamsize>(sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(plan.n_params) *
                                static_cast<std::streamsize>(sizeof(double)))
    throw std::runtime_error("checkpoint: truncated weights in " + path);
  return model;
}

}  // namespace cfield
