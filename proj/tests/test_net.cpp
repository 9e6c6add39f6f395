#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "mirrorsel/datagen.hpp"
#include "mirrorsel/errors.hpp"
#include "mirrorsel/linalg.hpp"
#include "mirrorsel/net.hpp"
#include "oracles.hpp"

using namespace mirrorsel;

namespace {

// f(x) = w'x on the positive orthant: W1 = I, one tail layer with weights w.
NetworkParams linear_net(const Vector& w) {
  NetworkParams p;
  p.W1 = Matrix::Identity(w.size(), w.size());
  p.tail.push_back({w, Vector::Zero(1)});
  return p;
}

double sample_variance(const Matrix& m) {
  const double mean = m.mean();
  return (m.array() - mean).square().sum() / static_cast<double>(m.size() - 1);
}

Dataset toy_dataset(std::size_t m, std::size_t n, std::uint64_t seed) {
  DesignSpec spec{DesignFamily::IidGaussian, m, n, 0.0, 2, DesignScale::UnitVariance, false};
  return gen_regression(sample_design(spec, seed), make_signal_regression(n, 2), seed);
}

}  // namespace

TEST_CASE("He init variance with fan-in 2") {
  NetworkSpec spec{2, 500000, {}, 1};
  const NetworkParams p = init_params(spec, 1);
  CHECK(std::abs(sample_variance(p.W1) - 1.0) < 0.01);
  CHECK(std::abs(p.W1.mean()) < 0.005);
}

TEST_CASE("Xavier init variance with fan-in = fan-out = 256") {
  NetworkSpec spec{256, 256, {}, 1};
  spec.init = InitScheme::XavierNormal;
  const NetworkParams p = init_params(spec, 2);
  CHECK(std::abs(sample_variance(p.W1) * 256.0 - 1.0) < 0.02);
}

TEST_CASE("init is deterministic and chains shapes") {
  NetworkSpec spec{10, 8, {6, 4}, 3};
  const NetworkParams a = init_params(spec, 5), b = init_params(spec, 5);
  CHECK(a == b);
  CHECK(!(a == init_params(spec, 6)));
  CHECK(a.W1.rows() == 10);
  CHECK(a.W1.cols() == 8);
  REQUIRE(a.tail.size() == 3);
  CHECK(a.tail[0].W.rows() == 8);
  CHECK(a.tail[0].W.cols() == 6);
  CHECK(a.tail[2].W.cols() == 3);
  CHECK(a.tail[1].b.isZero(0.0));
  CHECK(a.size() == static_cast<std::size_t>(a.flatten().size()));
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS((NetworkSpec{0, 4, {}, 1}.validate()), InvalidArgument);
  CHECK_THROWS_AS((NetworkSpec{3, 4, {0}, 1}.validate()), InvalidArgument);
  NetworkSpec bad{3, 4, {}, 1};
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("forward by hand") {
  Vector w(2);
  w << 1, 2;
  Vector x(2);
  x << 3, 4;
  CHECK(forward(linear_net(w), x, Mode::eval())(0) == 11.0);

  NetworkParams zero = init_params(NetworkSpec{5, 4, {3}, 2}, 1);
  for (auto& l : zero.tail) {
    l.W.setZero();
    l.b.setZero();
  }
  CHECK(forward(zero, Vector::Random(5), Mode::eval()).isZero(0.0));
}

TEST_CASE("forward agrees with the reference pass") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto c = oracle::random_case(s);
    const Vector f = forward(c.params, c.x, Mode::eval());
    CHECK((f - oracle::forward(c.params, c.x)).norm() <= 1e-12 * (1 + f.norm()));
    Matrix X(3, c.x.size());
    X.row(0) = c.x.transpose();
    X.row(1) = -c.x.transpose();
    X.row(2) = 2 * c.x.transpose();
    const Matrix F = forward_batch(c.params, X, Mode::eval());
    for (int r = 0; r < 3; ++r)
      CHECK((F.row(r).transpose() - oracle::forward(c.params, X.row(r).transpose())).norm() < 1e-10);
  }
}

TEST_CASE("non-finite activations raise overflow with layer index") {
  NetworkParams p = init_params(NetworkSpec{3, 4, {3}, 1}, 1);
  p.tail[0].W(0, 0) = std::numeric_limits<double>::infinity();
  Vector x = Vector::Ones(3);
  p.W1.setConstant(1.0);
  try {
    forward(p, x, Mode::eval());
    FAIL("expected overflow");
  } catch (const NumericOverflow& e) {
    CHECK(e.layer() >= 0);
  }
}

TEST_CASE("squared-loss input gradient of a linear map") {
  Vector w(2);
  w << 1, 2;
  Vector x(2);
  x << 3, 4;
  const Gradients g = backward(linear_net(w), x, 0.0, Loss::Squared, Mode::eval());
  CHECK(g.loss == 121.0);
  CHECK(g.input(0) == doctest::Approx(2 * 11 * 1));
  CHECK(g.input(1) == doctest::Approx(2 * 11 * 2));
}

TEST_CASE("gradients match central finite differences") {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto c = oracle::random_case(s);
    worst = std::max(worst, oracle::check_gradients(c.params, c.x, c.target, c.loss).max_rel_error);
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("input gradient lies in the column space of W1") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    NetworkSpec spec{20, 6, {8}, 1};
    const NetworkParams p = init_params(spec, s);
    Rng rng(s, 1);
    Vector x(20);
    for (auto& v : x) v = rng.normal();
    const Vector g = backward(p, x, 1.0, Loss::Squared, Mode::eval()).input;
    const Matrix q = orthonormal_basis(p.W1);
    const Vector resid = g - q * (q.transpose() * g);
    CHECK(resid.norm() <= 1e-10 * std::max(g.norm(), 1e-300));
  }
}

TEST_CASE("permuting features together with rows of W1 leaves the output unchanged") {
  NetworkSpec spec{12, 5, {7, 3}, 2};
  const NetworkParams p = init_params(spec, 3);
  Rng rng(3, 2);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  NetworkParams q = p;
  Vector x(12), xp(12);
  for (auto& v : x) v = rng.normal();
  for (int j = 0; j < 12; ++j) {
    q.W1.row(j) = p.W1.row(perm[j]);
    xp(j) = x(perm[j]);
  }
  // Same products in the same order, so the results agree bit for bit.
  const Vector a = oracle::forward(p, x), b = oracle::forward(q, xp);
  CHECK((forward(p, x, Mode::eval()) - forward(q, xp, Mode::eval())).norm() <= 1e-12);
  CHECK((a - b).norm() <= 1e-12);
}

TEST_CASE("cross-entropy gradients stay finite for extreme logits") {
  NetworkSpec spec{4, 3, {3}, 3};
  for (std::uint64_t s = 0; s < 50; ++s) {
    NetworkParams p = init_params(spec, s);
    p.tail.back().W *= 1e6;
    Rng rng(s, 3);
    Vector x(4);
    for (auto& v : x) v = 100 * rng.normal();
    const Gradients g = backward(p, x, static_cast<double>(s % 3), Loss::CrossEntropy, Mode::eval());
    CHECK(g.params.all_finite());
    CHECK(g.input.allFinite());
    CHECK(std::isfinite(g.loss));
  }
  NetworkSpec bin{4, 3, {3}, 1};
  NetworkParams p = init_params(bin, 1);
  p.tail.back().W *= 1e8;
  const Gradients g = backward(p, Vector::Ones(4), 1.0, Loss::CrossEntropy, Mode::eval());
  CHECK(g.input.allFinite());
}

TEST_CASE("inverted dropout preserves the expected output") {
  NetworkSpec spec{6, 40, {}, 1};
  NetworkParams p = init_params(spec, 1);
  const Vector x = Vector::Ones(6);
  const double eval = forward(p, x, Mode::eval())(0);
  Rng rng(9, 9);
  double sum = 0.0;
  const int reps = 40000;
  for (int i = 0; i < reps; ++i) sum += forward(p, x, Mode::train(0.5, rng))(0);
  CHECK(std::abs(sum / reps - eval) < 0.05 * std::max(1.0, std::abs(eval)));
}

TEST_CASE("sensitivity of a linear map is m times w") {
  Vector w(3);
  w << 0.5, -1, 2;
  const Matrix X = Matrix::Constant(7, 3, 1.0) + Matrix::Identity(7, 3);
  const Vector xi = input_sensitivity(linear_net(w), X);
  CHECK((xi - 7 * w).norm() < 1e-12);
}

TEST_CASE("sensitivity equals the summed per-row input gradients of the output") {
  NetworkSpec spec{5, 4, {6}, 3};
  const NetworkParams p = init_params(spec, 4);
  const Dataset ds = toy_dataset(9, 4, 1);
  Matrix X(9, 5);
  X.leftCols(4) = ds.X;
  X.col(4).setOnes();
  const Vector xi = input_sensitivity(p, X, OutputReduction::SumOutputs);
  const Vector xi1 = input_sensitivity(p, X, OutputReduction::SingleLogit, 1);
  Vector fd = Vector::Zero(5), fd1 = Vector::Zero(5);
  const double h = 1e-6;
  for (int r = 0; r < 9; ++r) {
    for (int j = 0; j < 5; ++j) {
      Vector up = X.row(r).transpose(), dn = up;
      up(j) += h;
      dn(j) -= h;
      const Vector d = (oracle::forward(p, up) - oracle::forward(p, dn)) / (2 * h);
      fd(j) += d.sum();
      fd1(j) += d(1);
    }
  }
  CHECK((xi - fd).norm() < 1e-6 * (1 + fd.norm()));
  CHECK((xi1 - fd1).norm() < 1e-6 * (1 + fd1.norm()));
  CHECK_THROWS_AS(input_sensitivity(p, X, OutputReduction::SingleLogit, 3), InvalidArgument);
}

TEST_CASE("zero iterations leave parameters unchanged") {
  const Dataset ds = toy_dataset(20, 4, 1);
  const NetworkParams p0 = init_params(NetworkSpec{4, 5, {3}, 1}, 1);
  TrainConfig cfg;
  cfg.batch_size = 5;
  cfg.iterations = 0;
  const TrainResult r = train(p0, ds, cfg);
  CHECK(r.params == p0);
  CHECK(r.loss_trajectory.empty());
}

TEST_CASE("one full-batch step matches the closed form") {
  Vector w(2);
  w << 1, 2;
  NetworkParams p0 = linear_net(w);
  Dataset ds;
  ds.X.resize(2, 2);
  ds.X << 1, 2, 3, 1;
  ds.y.resize(2);
  ds.y << 1, 2;
  ds.signal = SignalMatrix::from_matrix(Matrix::Identity(2, 1));
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.iterations = 1;
  cfg.learning_rate = 0.01;
  cfg.reduction = Reduction::Sum;
  const TrainResult r = train(p0, ds, cfg);
  // residuals: f = (5, 5), f - y = (4, 3)
  // d/dw = sum 2 (f - y) relu(x) ; d/dW1[i][k] = sum 2 (f - y) x_i w_k
  Vector gw = 2 * 4 * ds.X.row(0).transpose() + 2 * 3 * ds.X.row(1).transpose();
  Matrix gW1 = 2 * 4 * ds.X.row(0).transpose() * w.transpose() + 2 * 3 * ds.X.row(1).transpose() * w.transpose();
  CHECK((r.params.tail[0].W - (w - 0.01 * gw)).norm() < 1e-14);
  CHECK((r.params.W1 - (Matrix::Identity(2, 2) - 0.01 * gW1)).norm() < 1e-14);
  CHECK(r.params.tail[0].b(0) == doctest::Approx(-0.01 * 2 * (4 + 3)));
  REQUIRE(r.loss_trajectory.size() == 1);
  CHECK(r.loss_trajectory[0].loss == doctest::Approx(dataset_loss(r.params, ds.X, ds.y, Loss::Squared)));

  SUBCASE("mean reduction and weight decay") {
    cfg.reduction = Reduction::Mean;
    cfg.weight_decay = 0.5;
    const TrainResult rm = train(p0, ds, cfg);
    const Vector expect = (1 - 0.01 * 0.5) * w - 0.01 * gw / 2;
    CHECK((rm.params.tail[0].W - expect).norm() < 1e-14);
  }
}

TEST_CASE("training is bit-reproducible") {
  const Dataset ds = toy_dataset(64, 6, 2);
  NetworkSpec spec{6, 16, {8}, 1};
  spec.dropout_rate = 0.1;
  const NetworkParams p0 = init_params(spec, 1);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.iterations = 25;
  cfg.dropout_rate = 0.1;
  cfg.seed = 3;
  cfg.reduction = Reduction::Mean;
  const TrainResult a = train(p0, ds, cfg), b = train(p0, ds, cfg);
  CHECK(a.params == b.params);
  REQUIRE(a.loss_trajectory.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) CHECK(a.loss_trajectory[i].loss == b.loss_trajectory[i].loss);
  CHECK(a.loss_trajectory.back().loss < dataset_loss(p0, ds.X, ds.y, Loss::Squared));
}

TEST_CASE("checkpoints see the parameters after t updates") {
  const Dataset ds = toy_dataset(32, 4, 3);
  const NetworkParams p0 = init_params(NetworkSpec{4, 6, {}, 1}, 2);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.iterations = 6;
  cfg.reduction = Reduction::Mean;
  std::vector<NetworkParams> seen;
  train(p0, ds, cfg, {0, 3, 6}, [&](std::size_t, const NetworkParams& p) { seen.push_back(p); });
  REQUIRE(seen.size() == 3);
  CHECK(seen[0] == p0);
  cfg.iterations = 3;
  CHECK(seen[1] == train(p0, ds, cfg).params);
  cfg.iterations = 6;
  CHECK(seen[2] == train(p0, ds, cfg).params);
}

TEST_CASE("batch schedules depend only on config and sample size") {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.iterations = 10;
  cfg.seed = 8;
  const auto s = batch_schedule(cfg, 12);
  CHECK(s == batch_schedule(cfg, 12));
  // three batches per epoch cover every index exactly once
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (int b = 0; b < 3; ++b) seen.insert(s[epoch * 3 + b].begin(), s[epoch * 3 + b].end());
    CHECK(seen.size() == 12);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 12);
  }
  cfg.sampling = Sampling::WithReplacement;
  for (const auto& b : batch_schedule(cfg, 12)) {
    CHECK(b.size() == 4);
    for (auto i : b) CHECK(i < 12);
  }
  cfg.sampling = Sampling::WithoutReplacement;
  cfg.batch_size = 13;
  CHECK_THROWS_AS(batch_schedule(cfg, 12), InvalidArgument);
}

TEST_CASE("divergent training raises overflow with the iteration") {
  const Dataset ds = toy_dataset(32, 4, 3);
  const NetworkParams p0 = init_params(NetworkSpec{4, 64, {64, 64}, 1}, 2);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.iterations = 200;
  cfg.learning_rate = 10.0;
  try {
    train(p0, ds, cfg);
    FAIL("expected divergence");
  } catch (const NumericOverflow& e) {
    CHECK(e.iteration() >= 0);
  }
}

TEST_CASE("learning-rate schedules") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.lr_schedule = {0.5, 0.25};
  CHECK(cfg.rate_at(0) == 0.5);
  CHECK(cfg.rate_at(1) == 0.25);
  CHECK(cfg.rate_at(5) == 0.25);
}

TEST_CASE("flatten round-trips") {
  const NetworkParams p = init_params(NetworkSpec{4, 3, {5}, 2}, 7);
  NetworkParams q = p.zeros_like();
  q.unflatten(p.flatten());
  CHECK(q == p);
}
