#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gtmpc/rng.hpp"
#include "gtmpc/valuefn.hpp"

using namespace gtmpc;
using namespace gtmpc::valuefn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

TrainedValueFn identity_wrapped(MlpParams p) {
  TrainedValueFn vf;
  vf.norm.mean = VectorXd::Zero(p.n_in);
  vf.norm.std = VectorXd::Ones(p.n_in);
  vf.norm.t_scale = 1.0;
  vf.norm.t_offset = 0.0;
  vf.params = std::move(p);
  return vf;
}

TrainedValueFn random_net(int n_in, int hidden, int layers, std::uint64_t seed) {
  TrainedValueFn vf = identity_wrapped(init_params(n_in, hidden, layers, seed));
  Rng rng(seed + 1);
  for (int j = 0; j < n_in; ++j) {
    vf.norm.mean[j] = rng.uniform(-1.0, 1.0);
    vf.norm.std[j] = rng.uniform(0.5, 2.0);
  }
  vf.norm.t_scale = 0.18;
  vf.norm.t_offset = -0.3;
  return vf;
}

dataset::Dataset synthetic_dataset(int n, std::uint64_t seed) {
  // y = sin(x1) + 0.5 x2
  dataset::Dataset d;
  d.meta.family = "synthetic";
  d.meta.n_x = 2;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    dataset::Sample s;
    const double x1 = rng.uniform(-3.0, 3.0);
    const double x2 = rng.uniform(-2.0, 2.0);
    s.features = {x1, x2};
    s.target = std::sin(x1) + 0.5 * x2;
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST_CASE("zero network and hand-built single layer") {
  MlpParams p;
  p.n_in = 3;
  p.hidden = 4;
  p.layers = 2;
  p.W = {MatrixXd::Zero(4, 3), MatrixXd::Zero(1, 4)};
  p.b = {VectorXd::Zero(4), VectorXd::Zero(1)};
  TrainedValueFn vf = identity_wrapped(p);
  vf.norm.t_scale = 0.5;
  vf.norm.t_offset = 0.1;
  // output = inverse target map of tanh(0) = (0 - 0.1) / 0.5
  CHECK(forward(vf, VectorXd::Zero(3)) == doctest::Approx(-0.2));
  CHECK(grad_input(vf, VectorXd::Zero(3)).norm() == 0.0);

  MlpParams one;
  one.n_in = 1;
  one.hidden = 1;
  one.layers = 1;
  one.W = {MatrixXd::Constant(1, 1, 1.0)};
  one.b = {VectorXd::Zero(1)};
  const TrainedValueFn unit = identity_wrapped(one);
  VectorXd x(1);
  x << 0.5;
  CHECK(forward(unit, x) == doctest::Approx(std::tanh(0.5)).epsilon(1e-12));
  const double expected_grad = 1.0 - std::tanh(0.5) * std::tanh(0.5);
  CHECK(grad_input(unit, x)[0] == doctest::Approx(expected_grad).epsilon(1e-12));
}

TEST_CASE("pre-denormalization output stays inside the tanh range") {
  const TrainedValueFn vf = random_net(6, 32, 2, 17);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    VectorXd x(6);
    for (int j = 0; j < 6; ++j) x[j] = rng.uniform(-50.0, 50.0);
    const double y = vf.norm.normalize_target(forward(vf, x));
    CHECK(y > -1.0);
    CHECK(y < 1.0);
  }
}

TEST_CASE("gradients match central finite differences for both architectures") {
  for (const auto& [h, n_in] : {std::pair<int, int>{48, 8}, std::pair<int, int>{128, 6}}) {
    const TrainedValueFn vf = random_net(n_in, h, 2, 99 + h);
    Rng rng(5 + h);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      VectorXd x(n_in);
      for (int j = 0; j < n_in; ++j) x[j] = rng.uniform(-3.0, 3.0);
      const VectorXd g = grad_input(vf, x);
      const double step = 1e-5;
      for (int j = 0; j < n_in; ++j) {
        VectorXd xp = x, xm = x;
        xp[j] += step;
        xm[j] -= step;
        const double fd = (forward(vf, xp) - forward(vf, xm)) / (2.0 * step);
        const double rel = std::abs(g[j] - fd) / std::max(1e-6, std::abs(fd));
        worst = std::max(worst, rel);
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("adam steps follow the defining recursion") {
  MlpParams p;
  p.n_in = 1;
  p.hidden = 1;
  p.layers = 1;
  p.W = {MatrixXd::Constant(1, 1, 0.5)};
  p.b = {VectorXd::Zero(1)};
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  AdamState st = AdamState::zeros_like(p);
  MlpGrads g;
  g.dW = {MatrixXd::Constant(1, 1, 0.3)};
  g.db = {VectorXd::Zero(1)};

  // first step moves by ~ -lr * sign(g)
  adam_step(p, g, st, cfg);
  const double denom1 = 0.3 / std::sqrt(0.3 * 0.3) + 0.0;  // bias correction cancels
  CHECK(p.W[0](0, 0) ==
        doctest::Approx(0.5 - 0.1 * 0.3 / (std::sqrt(0.3 * 0.3) + cfg.epsilon * std::sqrt(1.0 - cfg.beta2)))
            .epsilon(1e-6));
  (void)denom1;

  // hand recursion for two constant-gradient steps
  MlpParams q;
  q.n_in = 1;
  q.hidden = 1;
  q.layers = 1;
  q.W = {MatrixXd::Constant(1, 1, 0.5)};
  q.b = {VectorXd::Zero(1)};
  AdamState st2 = AdamState::zeros_like(q);
  double w = 0.5, m = 0.0, v = 0.0;
  const double grad = 0.3;
  for (int t = 1; t <= 2; ++t) {
    adam_step(q, g, st2, cfg);
    m = cfg.beta1 * m + (1 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad;
    const double mh = m / (1 - std::pow(cfg.beta1, t));
    const double vh = v / (1 - std::pow(cfg.beta2, t));
    w -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    CHECK(q.W[0](0, 0) == doctest::Approx(w).epsilon(1e-12));
  }

  // zero gradient leaves parameters unchanged
  MlpParams r = q;
  MlpGrads zg;
  zg.dW = {MatrixXd::Zero(1, 1)};
  zg.db = {VectorXd::Zero(1)};
  AdamState st3 = AdamState::zeros_like(r);
  adam_step(r, zg, st3, cfg);
  CHECK(r.W[0](0, 0) == q.W[0](0, 0));
}

TEST_CASE("training fits the synthetic target and is seed-stable") {
  const auto d = synthetic_dataset(2000, 42);
  TrainConfig cfg;
  cfg.max_epochs = 500;
  cfg.seed = 7;
  const TrainedValueFn vf = train(d, 48, 2, cfg);
  CHECK(vf.metrics.val_mse < 0.01);

  const TrainedValueFn vf2 = train(d, 48, 2, cfg);
  for (int l = 0; l < vf.params.layers; ++l) {
    CHECK(vf.params.W[l] == vf2.params.W[l]);
    CHECK(vf.params.b[l] == vf2.params.b[l]);
  }
}

TEST_CASE("constant targets are learned to machine precision") {
  dataset::Dataset d;
  d.meta.n_x = 2;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    dataset::Sample s;
    s.features = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    s.target = 3.7;
    d.samples.push_back(std::move(s));
  }
  TrainConfig cfg;
  cfg.max_epochs = 3000;
  cfg.patience = 500;
  const TrainedValueFn vf = train(d, 8, 2, cfg);
  double mse = 0.0;
  for (const auto& s : d.samples) {
    const double err =
        forward(vf, Eigen::Map<const VectorXd>(s.features.data(), 2)) - s.target;
    mse += err * err;
  }
  CHECK(mse / d.samples.size() < 1e-6);
}

TEST_CASE("normalizers never read the validation targets") {
  auto d = synthetic_dataset(500, 8);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.seed = 21;
  const TrainedValueFn a = train(d, 16, 2, cfg);

  // permute the validation-split targets: normalizers must not move.
  // reproduce the deterministic split to find the validation indices
  Rng rng(cfg.seed);
  const int n = static_cast<int>(d.samples.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  const int n_val = static_cast<int>(std::lround(cfg.val_split * n));
  const int n_train = n - n_val;
  for (int i = 0; i < n_val / 2; ++i)
    std::swap(d.samples[order[n_train + i]].target,
              d.samples[order[n - 1 - i]].target);

  const TrainedValueFn b = train(d, 16, 2, cfg);
  CHECK(a.norm.mean == b.norm.mean);
  CHECK(a.norm.std == b.norm.std);
  CHECK(a.norm.t_scale == b.norm.t_scale);
  CHECK(a.norm.t_offset == b.norm.t_offset);
}

TEST_CASE("early stopping restores the best validation epoch") {
  const auto d = synthetic_dataset(400, 99);
  TrainConfig cfg;
  cfg.max_epochs = 120;
  cfg.patience = 15;
  const TrainedValueFn vf = train(d, 24, 2, cfg);
  CHECK(vf.metrics.best_epoch <= vf.metrics.epochs_run);
  CHECK(vf.metrics.val_mse > 0.0);

  // returned parameters achieve the recorded minimum: re-evaluate
  Rng rng(cfg.seed);
  const int n = static_cast<int>(d.samples.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  const int n_val = static_cast<int>(std::lround(cfg.val_split * n));
  const int n_train = n - n_val;
  double mse = 0.0;
  for (int i = n_train; i < n; ++i) {
    const auto& s = d.samples[order[i]];
    const double err = vf.norm.normalize_target(
        forward(vf, Eigen::Map<const VectorXd>(s.features.data(), 2))) -
                       vf.norm.normalize_target(s.target);
    mse += err * err;
  }
  mse /= n_val;
  CHECK(mse == doctest::Approx(vf.metrics.val_mse).epsilon(1e-9));
}

TEST_CASE("model save/load round trip") {
  const auto d = synthetic_dataset(300, 5);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  TrainedValueFn vf = train(d, 16, 2, cfg);
  vf.family = "racing";
  const std::string path = "/tmp/gtmpc_test_model.json";
  save_model(vf, path);
  const TrainedValueFn loaded = load_model(path);
  CHECK(loaded.family == "racing");
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    VectorXd x(2);
    x << rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0);
    CHECK(forward(vf, x) == forward(loaded, x));  // bitwise
  }

  // corrupt a weight array length
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = content.find("\"weights\"");
  REQUIRE(pos != std::string::npos);
  const auto bracket = content.find('[', content.find('[', pos) + 1);
  std::string corrupted = content.substr(0, bracket + 1) + "1.0," + content.substr(bracket + 1);
  const std::string bad_path = "/tmp/gtmpc_test_model_bad.json";
  std::ofstream out(bad_path);
  out << corrupted;
  out.close();
  CHECK_THROWS_AS(load_model(bad_path), ModelError);

  // wrong feature dimension at evaluation time
  CHECK_THROWS_AS(forward(loaded, VectorXd::Zero(5)), ModelError);
}

TEST_CASE("per-layer Lipschitz bound via power iteration") {
  const TrainedValueFn vf = random_net(6, 32, 2, 31);
  // spectral norms by power iteration
  double lip = 1.0;
  for (const auto& W : vf.params.W) {
    VectorXd v = VectorXd::Ones(W.cols()).normalized();
    double sigma = 0.0;
    for (int it = 0; it < 200; ++it) {
      v = (W.transpose() * (W * v)).normalized();
      sigma = (W * v).norm();
    }
    lip *= sigma;
  }
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    VectorXd x(6), dx(6);
    for (int j = 0; j < 6; ++j) {
      x[j] = rng.uniform(-2.0, 2.0);
      dx[j] = rng.uniform(-0.5, 0.5);
    }
    const VectorXd x2 = x + dx;
    const double dy = std::abs(vf.norm.normalize_target(forward(vf, x2)) -
                               vf.norm.normalize_target(forward(vf, x)));
    const double dxn = (vf.norm.normalize(x2) - vf.norm.normalize(x)).norm();
    CHECK(dy <= lip * dxn + 1e-12);
  }
}
