// Independent reference computations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mirrorsel/net.hpp"
#include "mirrorsel/rng.hpp"
#include "mirrorsel/select.hpp"

namespace oracle {

using mirrorsel::Matrix;
using mirrorsel::Vector;

// Plain forward pass: z0 = W1'x, then relu -> affine per tail layer.
// Collects every pre-activation that feeds a ReLU.
inline Vector forward(const mirrorsel::NetworkParams& p, const Vector& x,
                      std::vector<double>* relu_inputs = nullptr) {
  Vector z = p.W1.transpose() * x;
  for (const auto& layer : p.tail) {
    if (relu_inputs) relu_inputs->insert(relu_inputs->end(), z.data(), z.data() + z.size());
    const Vector h = z.cwiseMax(0.0);
    z = layer.W.transpose() * h + layer.b;
  }
  return z;
}

inline double loss(mirrorsel::Loss kind, const Vector& out, double target) {
  if (kind == mirrorsel::Loss::Squared) return (target - out(0)) * (target - out(0));
  if (out.size() == 1) {
    // binary logistic with label in {0,1}
    const double s = out(0);
    const double log1pexp = s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    return log1pexp - target * s;
  }
  const double mx = out.maxCoeff();
  const double lse = mx + std::log((out.array() - mx).exp().sum());
  return lse - out(static_cast<Eigen::Index>(target));
}

inline double min_abs_relu_input(const mirrorsel::NetworkParams& p, const Vector& x) {
  std::vector<double> pre;
  forward(p, x, &pre);
  double m = std::numeric_limits<double>::infinity();
  for (double v : pre) m = std::min(m, std::abs(v));
  return m;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

// Extended-precision copy of a network, so that central differences are not
// swamped by double rounding in the loss.
using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

struct LNet {
  std::vector<LMatrix> mats;  // W1, then W and b (as a column) per tail layer

  explicit LNet(const mirrorsel::NetworkParams& p) {
    mats.push_back(p.W1.cast<long double>());
    for (const auto& l : p.tail) {
      mats.push_back(l.W.cast<long double>());
      mats.push_back(l.b.cast<long double>());
    }
  }

  LVector forward(const LVector& x) const {
    LVector z = mats[0].transpose() * x;
    for (std::size_t k = 1; k < mats.size(); k += 2) {
      const LVector h = z.cwiseMax(0.0L);
      z = mats[k].transpose() * h + mats[k + 1].col(0);
    }
    return z;
  }
};

inline long double loss_ld(mirrorsel::Loss kind, const LVector& out, long double target) {
  if (kind == mirrorsel::Loss::Squared) return (target - out(0)) * (target - out(0));
  if (out.size() == 1) {
    const long double s = out(0);
    const long double l1p = s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    return l1p - target * s;
  }
  const long double mx = out.maxCoeff();
  const long double lse = mx + std::log((out.array() - mx).exp().sum());
  return lse - out(static_cast<Eigen::Index>(target));
}

// Central differences over every parameter and input coordinate.
inline GradCheck check_gradients(const mirrorsel::NetworkParams& params, const Vector& x, double target,
                                 mirrorsel::Loss kind, long double h = 1e-5L) {
  using namespace mirrorsel;
  const Gradients g = backward(params, x, target, kind, Mode::eval());
  GradCheck out;
  LNet net(params);
  const LVector lx = x.cast<long double>();
  // Analytic gradients laid out like LNet::mats.
  std::vector<Matrix> grads{g.params.W1};
  for (const auto& l : g.params.tail) {
    grads.push_back(l.W);
    grads.push_back(l.b);
  }
  for (std::size_t k = 0; k < net.mats.size(); ++k) {
    LMatrix& m = net.mats[k];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const long double keep = m.data()[i];
      m.data()[i] = keep + h;
      const long double up = loss_ld(kind, net.forward(lx), target);
      m.data()[i] = keep - h;
      const long double down = loss_ld(kind, net.forward(lx), target);
      m.data()[i] = keep;
      const double fd = static_cast<double>((up - down) / (2 * h));
      out.max_rel_error = std::max(out.max_rel_error, rel_error(grads[k].data()[i], fd));
      ++out.coordinates;
    }
  }
  LVector xp = lx;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = lx(i) + h;
    const long double up = loss_ld(kind, net.forward(xp), target);
    xp(i) = lx(i) - h;
    const long double down = loss_ld(kind, net.forward(xp), target);
    xp(i) = lx(i);
    const double fd = static_cast<double>((up - down) / (2 * h));
    out.max_rel_error = std::max(out.max_rel_error, rel_error(g.input(i), fd));
    ++out.coordinates;
  }
  return out;
}

// Random small network with 2-4 tail layers, widths <= 64, and an input
// whose ReLU inputs all sit at least `margin` away from zero.
struct Case {
  mirrorsel::NetworkParams params;
  Vector x;
  double target;
  mirrorsel::Loss loss;
};

inline Case random_case(std::uint64_t seed, double margin = 1e-3) {
  using namespace mirrorsel;
  Rng rng(seed, 77);
  NetworkSpec spec;
  spec.n_in = 2 + rng.below(15);
  spec.first_width = 2 + rng.below(63);
  const std::size_t hidden = 1 + rng.below(3);
  for (std::size_t k = 0; k < hidden; ++k) spec.tail_widths.push_back(2 + rng.below(63));
  const bool classify = rng.below(2) == 1;
  spec.out_width = classify ? 1 + 2 * rng.below(2) : 1;
  const NetworkParams p0 = init_params(spec, seed);
  Case c{p0, Vector(spec.n_in), 0.0, classify ? Loss::CrossEntropy : Loss::Squared};
  for (auto& layer : c.params.tail)
    for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b(i) = 0.1 * rng.normal();
  for (int attempt = 0;; ++attempt) {
    for (Eigen::Index i = 0; i < c.x.size(); ++i) c.x(i) = rng.normal();
    if (min_abs_relu_input(c.params, c.x) > margin) break;
    if (attempt > 50) {
      // Shrink the first layer so fewer units sit near a kink.
      spec.first_width = 2;
      c.params = init_params(spec, seed + attempt);
    }
  }
  c.target = classify ? static_cast<double>(rng.below(spec.out_width == 1 ? 2 : spec.out_width))
                      : rng.normal();
  return c;
}

// FDP-hat scan over every candidate threshold, written independently of cutoff().
inline double brute_force_cutoff(const Vector& M, double alpha) {
  if ((M.array() > 0).count() == 0) return std::numeric_limits<double>::infinity();
  std::vector<double> candidates;
  for (Eigen::Index j = 0; j < M.size(); ++j)
    if (M(j) != 0) candidates.push_back(std::abs(M(j)));
  std::sort(candidates.begin(), candidates.end());
  for (double u : candidates) {
    double neg = 0, pos = 0;
    for (Eigen::Index j = 0; j < M.size(); ++j) {
      if (M(j) < -u) ++neg;
      if (M(j) > u) ++pos;
    }
    if (neg / std::max(pos, 1.0) <= alpha) return u;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace oracle
