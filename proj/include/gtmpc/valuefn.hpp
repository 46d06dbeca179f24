#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtmpc/dataset.hpp"

namespace gtmpc::valuefn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// y_l = tanh(W_l y_{l-1} + b_l), l = 1..L; the output layer is tanh as well,
// so targets are affinely mapped into [-0.9, 0.9] rather than z-scored.
struct MlpParams {
  int n_in = 0;
  int hidden = 0;
  int layers = 0;               // L = number of weight matrices
  std::vector<MatrixXd> W;      // W[0]: h x n_in, middle: h x h, W[L-1]: 1 x h
  std::vector<VectorXd> b;

  void validate() const;
};

struct Normalizer {
  VectorXd mean;
  VectorXd std;
  double t_scale = 1.0;   // y = t_scale * R + t_offset
  double t_offset = 0.0;

  VectorXd normalize(const VectorXd& x) const { return (x - mean).cwiseQuotient(std); }
  double normalize_target(double r) const { return t_scale * r + t_offset; }
  double denormalize_target(double y) const { return (y - t_offset) / t_scale; }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  int max_epochs = 2000;
  int patience = 50;          // epochs without validation improvement
  double val_split = 0.2;
  std::uint64_t seed = 0;
};

struct TrainMetrics {
  double train_mse = 0.0;  // normalized units
  double val_mse = 0.0;
  int epochs_run = 0;
  int best_epoch = 0;
};

struct TrainedValueFn {
  MlpParams params;
  Normalizer norm;
  std::string family;
  int scenario = 0;  // 0 for racing
  int n_g = 0;
  double dt = 0.1;
  TrainMetrics metrics;
};

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// normalize -> L tanh layers -> inverse target map
double forward(const TrainedValueFn& vf, const VectorXd& x);

// exact reverse-mode gradient of forward w.r.t. the raw input
VectorXd grad_input(const TrainedValueFn& vf, const VectorXd& x);

// value and gradient in one pass (MPC hot path)
double forward_with_grad(const TrainedValueFn& vf, const VectorXd& x, VectorXd& grad);

struct MlpGrads {
  std::vector<MatrixXd> dW;
  std::vector<VectorXd> db;
};

struct AdamState {
  std::vector<MatrixXd> mW, vW;
  std::vector<VectorXd> mb, vb;
  int t = 0;

  static AdamState zeros_like(const MlpParams& p);
};

// one bias-corrected Adam update; t is incremented internally
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state,
               const TrainConfig& cfg);

// Mini-batch MSE with Adam and early stopping on validation loss; restores the
// best-validation parameters. Normalizers are fit on the training split only.
TrainedValueFn train(const dataset::Dataset& d, int hidden, int layers,
                     const TrainConfig& cfg);

// JSON round trip; forward is bit-identical across save/load.
void save_model(const TrainedValueFn& vf, const std::string& path);
TrainedValueFn load_model(const std::string& path);

// uniform +-1/sqrt(fan_in) initialization with a fixed seed
MlpParams init_params(int n_in, int hidden, int layers, std::uint64_t seed);

}  // namespace gtmpc::valuefn
