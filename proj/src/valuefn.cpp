#include "gtmpc/valuefn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "gtmpc/rng.hpp"

namespace gtmpc::valuefn {

using json = nlohmann::json;

void MlpParams::validate() const {
  if (layers < 1 || static_cast<int>(W.size()) != layers ||
      static_cast<int>(b.size()) != layers)
    throw ModelError("layer count does not match parameter arrays");
  int cols = n_in;
  for (int l = 0; l < layers; ++l) {
    const int rows = l + 1 == layers ? 1 : hidden;
    if (W[l].rows() != rows || W[l].cols() != cols)
      throw ModelError("weight shape mismatch at layer " + std::to_string(l));
    if (b[l].size() != rows) throw ModelError("bias shape mismatch at layer " + std::to_string(l));
    if (!W[l].allFinite() || !b[l].allFinite())
      throw ModelError("non-finite parameters at layer " + std::to_string(l));
    cols = rows;
  }
}

MlpParams init_params(int n_in, int hidden, int layers, std::uint64_t seed) {
  if (layers < 1) throw ModelError("need at least one layer");
  Rng rng(seed);
  MlpParams p;
  p.n_in = n_in;
  p.hidden = hidden;
  p.layers = layers;
  int cols = n_in;
  for (int l = 0; l < layers; ++l) {
    const int rows = l + 1 == layers ? 1 : hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    MatrixXd W(rows, cols);
    VectorXd b(rows);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) W(r, c) = rng.uniform(-bound, bound);
      b[r] = rng.uniform(-bound, bound);
    }
    p.W.push_back(std::move(W));
    p.b.push_back(std::move(b));
    cols = rows;
  }
  return p;
}

namespace {

// forward pass keeping activations; y[0] is the normalized input
std::vector<VectorXd> forward_pass(const MlpParams& p, const VectorXd& x_norm) {
  std::vector<VectorXd> y(p.layers + 1);
  y[0] = x_norm;
  for (int l = 0; l < p.layers; ++l)
    y[l + 1] = (p.W[l] * y[l] + p.b[l]).array().tanh().matrix();
  return y;
}

}  // namespace

double forward(const TrainedValueFn& vf, const VectorXd& x) {
  if (x.size() != vf.params.n_in) throw ModelError("feature dimension mismatch");
  const auto y = forward_pass(vf.params, vf.norm.normalize(x));
  return vf.norm.denormalize_target(y.back()[0]);
}

double forward_with_grad(const TrainedValueFn& vf, const VectorXd& x, VectorXd& grad) {
  if (x.size() != vf.params.n_in) throw ModelError("feature dimension mismatch");
  const auto& p = vf.params;
  const auto y = forward_pass(p, vf.norm.normalize(x));
  // reverse pass: d out / d y_l
  VectorXd d = VectorXd::Ones(1);
  for (int l = p.layers - 1; l >= 0; --l) {
    const VectorXd gate = (1.0 - y[l + 1].array().square()).matrix();
    d = p.W[l].transpose() * (d.cwiseProduct(gate));
  }
  grad = d.cwiseQuotient(vf.norm.std) / vf.norm.t_scale;
  return vf.norm.denormalize_target(y.back()[0]);
}

VectorXd grad_input(const TrainedValueFn& vf, const VectorXd& x) {
  VectorXd g;
  forward_with_grad(vf, x, g);
  return g;
}

AdamState AdamState::zeros_like(const MlpParams& p) {
  AdamState s;
  for (int l = 0; l < p.layers; ++l) {
    s.mW.push_back(MatrixXd::Zero(p.W[l].rows(), p.W[l].cols()));
    s.vW.push_back(MatrixXd::Zero(p.W[l].rows(), p.W[l].cols()));
    s.mb.push_back(VectorXd::Zero(p.b[l].size()));
    s.vb.push_back(VectorXd::Zero(p.b[l].size()));
  }
  return s;
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state,
               const TrainConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
  for (int l = 0; l < params.layers; ++l) {
    state.mW[l] = cfg.beta1 * state.mW[l] + (1.0 - cfg.beta1) * grads.dW[l];
    state.vW[l] =
        cfg.beta2 * state.vW[l] + (1.0 - cfg.beta2) * grads.dW[l].cwiseProduct(grads.dW[l]);
    const MatrixXd m_hat = state.mW[l] / bc1;
    const MatrixXd v_hat = state.vW[l] / bc2;
    params.W[l] -= cfg.learning_rate *
                   m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + cfg.epsilon).matrix());
    state.mb[l] = cfg.beta1 * state.mb[l] + (1.0 - cfg.beta1) * grads.db[l];
    state.vb[l] =
        cfg.beta2 * state.vb[l] + (1.0 - cfg.beta2) * grads.db[l].cwiseProduct(grads.db[l]);
    const VectorXd mb_hat = state.mb[l] / bc1;
    const VectorXd vb_hat = state.vb[l] / bc2;
    params.b[l] -= cfg.learning_rate *
                   mb_hat.cwiseQuotient((vb_hat.cwiseSqrt().array() + cfg.epsilon).matrix());
  }
}

namespace {

// accumulates MSE gradients for a batch; returns the batch loss
double batch_backprop(const MlpParams& p, const MatrixXd& X, const VectorXd& t,
                      const std::vector<int>& idx, int lo, int hi, MlpGrads& grads) {
  for (int l = 0; l < p.layers; ++l) {
    grads.dW[l].setZero();
    grads.db[l].setZero();
  }
  const int nb = hi - lo;
  double loss = 0.0;
  for (int ii = lo; ii < hi; ++ii) {
    const int i = idx[ii];
    const auto y = forward_pass(p, X.col(i));
    const double err = y.back()[0] - t[i];
    loss += err * err;
    VectorXd d = VectorXd::Constant(1, 2.0 * err / nb);
    for (int l = p.layers - 1; l >= 0; --l) {
      const VectorXd gate = (1.0 - y[l + 1].array().square()).matrix();
      const VectorXd delta = d.cwiseProduct(gate);
      grads.dW[l] += delta * y[l].transpose();
      grads.db[l] += delta;
      if (l > 0) d = p.W[l].transpose() * delta;
    }
  }
  return loss / nb;
}

double mse_over(const MlpParams& p, const MatrixXd& X, const VectorXd& t,
                const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  double loss = 0.0;
  for (int i : idx) {
    const auto y = forward_pass(p, X.col(i));
    const double err = y.back()[0] - t[i];
    loss += err * err;
  }
  return loss / static_cast<double>(idx.size());
}

}  // namespace

TrainedValueFn train(const dataset::Dataset& d, int hidden, int layers,
                     const TrainConfig& cfg) {
  if (d.samples.empty()) throw ModelError("dataset is empty");
  const int n_x = d.meta.n_x;
  const int n = static_cast<int>(d.samples.size());
  for (const auto& s : d.samples)
    if (static_cast<int>(s.features.size()) != n_x)
      throw ModelError("inconsistent feature dimension in dataset");

  MatrixXd X_raw(n_x, n);
  VectorXd targets(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n_x; ++j) X_raw(j, i) = d.samples[i].features[j];
    targets[i] = d.samples[i].target;
  }

  // deterministic split
  Rng rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  const int n_val = std::max(1, static_cast<int>(std::lround(cfg.val_split * n)));
  const int n_train = std::max(1, n - n_val);
  std::vector<int> train_idx(order.begin(), order.begin() + n_train);
  std::vector<int> val_idx(order.begin() + n_train, order.end());

  // normalizers from the training split only
  Normalizer norm;
  norm.mean = VectorXd::Zero(n_x);
  norm.std = VectorXd::Zero(n_x);
  for (int i : train_idx) norm.mean += X_raw.col(i);
  norm.mean /= static_cast<double>(n_train);
  for (int i : train_idx) {
    const VectorXd e = X_raw.col(i) - norm.mean;
    norm.std += e.cwiseProduct(e);
  }
  norm.std = (norm.std / static_cast<double>(n_train)).cwiseSqrt();
  for (int j = 0; j < n_x; ++j) {
    if (norm.std[j] < 1e-12) norm.std[j] = 1.0;  // zero-variance feature, clamped
  }
  double t_min = targets[train_idx[0]], t_max = t_min;
  for (int i : train_idx) {
    t_min = std::min(t_min, targets[i]);
    t_max = std::max(t_max, targets[i]);
  }
  if (t_max - t_min < 1e-12) {
    norm.t_scale = 1.0;
    norm.t_offset = -t_min;
  } else {
    norm.t_scale = 1.8 / (t_max - t_min);
    norm.t_offset = -0.9 - norm.t_scale * t_min;
  }

  MatrixXd X(n_x, n);
  VectorXd t_norm(n);
  for (int i = 0; i < n; ++i) {
    X.col(i) = norm.normalize(X_raw.col(i));
    t_norm[i] = norm.normalize_target(targets[i]);
  }

  MlpParams params = init_params(n_x, hidden, layers, cfg.seed);
  AdamState adam = AdamState::zeros_like(params);
  MlpGrads grads;
  for (int l = 0; l < params.layers; ++l) {
    grads.dW.push_back(MatrixXd::Zero(params.W[l].rows(), params.W[l].cols()));
    grads.db.push_back(VectorXd::Zero(params.b[l].size()));
  }

  MlpParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stall = 0;
  int epoch = 0;
  std::vector<int> batch_order = train_idx;
  for (; epoch < cfg.max_epochs; ++epoch) {
    for (int i = n_train - 1; i > 0; --i)
      std::swap(batch_order[i], batch_order[rng.uniform_int(0, i)]);
    for (int lo = 0; lo < n_train; lo += cfg.batch_size) {
      const int hi = std::min(n_train, lo + cfg.batch_size);
      batch_backprop(params, X, t_norm, batch_order, lo, hi, grads);
      adam_step(params, grads, adam, cfg);
    }
    const double val = mse_over(params, X, t_norm, val_idx);
    if (val < best_val - 1e-12) {
      best_val = val;
      best = params;
      best_epoch = epoch + 1;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      ++epoch;
      break;
    }
  }

  TrainedValueFn vf;
  vf.params = best;
  vf.norm = norm;
  vf.family = d.meta.family;
  vf.scenario = d.meta.scenario_m;
  vf.n_g = d.meta.n_g;
  vf.dt = d.meta.dt;
  vf.metrics.train_mse = mse_over(best, X, t_norm, train_idx);
  vf.metrics.val_mse = best_val;
  vf.metrics.epochs_run = epoch;
  vf.metrics.best_epoch = best_epoch;
  return vf;
}

void save_model(const TrainedValueFn& vf, const std::string& path) {
  vf.params.validate();
  json j;
  j["version"] = 1;
  j["family"] = vf.family;
  j["scenario"] = vf.scenario;
  j["n_g"] = vf.n_g;
  j["dt"] = vf.dt;
  j["n_x"] = vf.params.n_in;
  j["h"] = vf.params.hidden;
  j["L"] = vf.params.layers;
  json weights = json::array();
  json biases = json::array();
  for (int l = 0; l < vf.params.layers; ++l) {
    std::vector<double> w;  // row-major
    for (int r = 0; r < vf.params.W[l].rows(); ++r)
      for (int c = 0; c < vf.params.W[l].cols(); ++c) w.push_back(vf.params.W[l](r, c));
    weights.push_back(w);
    biases.push_back(std::vector<double>(vf.params.b[l].data(),
                                         vf.params.b[l].data() + vf.params.b[l].size()));
  }
  j["weights"] = weights;
  j["biases"] = biases;
  j["feature_mean"] = std::vector<double>(vf.norm.mean.data(),
                                          vf.norm.mean.data() + vf.norm.mean.size());
  j["feature_std"] =
      std::vector<double>(vf.norm.std.data(), vf.norm.std.data() + vf.norm.std.size());
  j["target_scale"] = vf.norm.t_scale;
  j["target_offset"] = vf.norm.t_offset;
  j["metrics"] = {{"train_mse", vf.metrics.train_mse},
                  {"val_mse", vf.metrics.val_mse},
                  {"epochs", vf.metrics.epochs_run},
                  {"best_epoch", vf.metrics.best_epoch}};
  std::ofstream os(path);
  if (!os) throw ModelError("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

TrainedValueFn load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ModelError("cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ModelError("model parse failure: " + std::string(e.what()));
  }
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw ModelError("unsupported model schema version");
  TrainedValueFn vf;
  vf.family = j.value("family", "");
  vf.scenario = j.value("scenario", 0);
  vf.n_g = j.value("n_g", 0);
  vf.dt = j.value("dt", 0.1);
  MlpParams& p = vf.params;
  p.n_in = j.at("n_x").get<int>();
  p.hidden = j.at("h").get<int>();
  p.layers = j.at("L").get<int>();
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (static_cast<int>(weights.size()) != p.layers ||
      static_cast<int>(biases.size()) != p.layers)
    throw ModelError("layer count mismatch in model file");
  int cols = p.n_in;
  for (int l = 0; l < p.layers; ++l) {
    const int rows = l + 1 == p.layers ? 1 : p.hidden;
    const auto w = weights[l].get<std::vector<double>>();
    if (static_cast<int>(w.size()) != rows * cols)
      throw ModelError("weight array length mismatch at layer " + std::to_string(l));
    MatrixXd W(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) W(r, c) = w[r * cols + c];
    const auto bv = biases[l].get<std::vector<double>>();
    if (static_cast<int>(bv.size()) != rows)
      throw ModelError("bias array length mismatch at layer " + std::to_string(l));
    p.W.push_back(std::move(W));
    p.b.push_back(Eigen::Map<const VectorXd>(bv.data(), rows));
    cols = rows;
  }
  const auto mean = j.at("feature_mean").get<std::vector<double>>();
  const auto stdv = j.at("feature_std").get<std::vector<double>>();
  if (static_cast<int>(mean.size()) != p.n_in || static_cast<int>(stdv.size()) != p.n_in)
    throw ModelError("normalizer dimension does not match n_x");
  vf.norm.mean = Eigen::Map<const VectorXd>(mean.data(), p.n_in);
  vf.norm.std = Eigen::Map<const VectorXd>(stdv.data(), p.n_in);
  vf.norm.t_scale = j.at("target_scale").get<double>();
  vf.norm.t_offset = j.at("target_offset").get<double>();
  if (j.contains("metrics")) {
    vf.metrics.train_mse = j["metrics"].value("train_mse", 0.0);
    vf.metrics.val_mse = j["metrics"].value("val_mse", 0.0);
    vf.metrics.epochs_run = j["metrics"].value("epochs", 0);
    vf.metrics.best_epoch = j["metrics"].value("best_epoch", 0);
  }
  p.validate();
  return vf;
}

}  // namespace gtmpc::valuefn
