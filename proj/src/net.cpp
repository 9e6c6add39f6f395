#include "mirrorsel/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mirrorsel/errors.hpp"

namespace mirrorsel {
namespace {

// Activations recorded by a batched forward pass.
struct Tape {
  std::vector<Matrix> pre;   // pre[l]: input to the ReLU of tail layer l (pre[0] = X W1)
  std::vector<Matrix> mask;  // dropout scale per element; empty when no dropout
  std::vector<Matrix> post;  // post[l]: ReLU(pre[l]) * mask[l]
  Matrix out;
};

void require_finite(const Matrix& m, long layer) {
  if (!m.allFinite())
    throw NumericOverflow("non-finite activation at layer " + std::to_string(layer), layer);
}

Tape run_forward(const NetworkParams& p, const Eigen::Ref<const Matrix>& X, Mode mode) {
  if (X.cols() != p.W1.rows())
    throw InvalidArgument("forward: input width " + std::to_string(X.cols()) + " != n_in " +
                          std::to_string(p.W1.rows()));
  Tape tape;
  const std::size_t depth = p.tail.size();
  tape.pre.reserve(depth);
  tape.mask.resize(depth);
  tape.post.reserve(depth);
  tape.pre.push_back(X * p.W1);
  require_finite(tape.pre.back(), 0);
  const bool dropout = mode.is_train() && mode.dropout_rate() > 0.0;
  const double keep_scale = dropout ? 1.0 / (1.0 - mode.dropout_rate()) : 1.0;
  for (std::size_t l = 0; l < depth; ++l) {
    Matrix h = tape.pre[l].cwiseMax(0.0);
    if (dropout) {
      Matrix& mask = tape.mask[l];
      mask.resize(h.rows(), h.cols());
      Rng& rng = *mode.rng();
      for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index j = 0; j < h.cols(); ++j)
          mask(i, j) = rng.uniform() < mode.dropout_rate() ? 0.0 : keep_scale;
      h.array() *= mask.array();
    }
    Matrix z = h * p.tail[l].W;
    z.rowwise() += p.tail[l].b.transpose();
    require_finite(z, static_cast<long>(l + 1));
    tape.post.push_back(std::move(h));
    if (l + 1 < depth)
      tape.pre.push_back(std::move(z));
    else
      tape.out = std::move(z);
  }
  return tape;
}

// dLoss/dOutput for every row; returns the summed loss.
double output_gradient(Loss loss, const Matrix& out, const Eigen::Ref<const Vector>& y,
                       Matrix& grad) {
  grad.resize(out.rows(), out.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Vector f = out.row(i).transpose();
    total += loss_value(loss, f, y(i));
    if (loss == Loss::Squared) {
      grad(i, 0) = 2.0 * (f(0) - y(i));
    } else if (out.cols() == 1) {
      grad(i, 0) = 1.0 / (1.0 + std::exp(-f(0))) - y(i);
    } else {
      const double top = f.maxCoeff();
      Vector e = (f.array() - top).exp();
      e /= e.sum();
      e(static_cast<Eigen::Index>(y(i))) -= 1.0;
      grad.row(i) = e.transpose();
    }
  }
  return total;
}

// Backpropagates dL/dOutput through the tail. Fills param grads when
// `grads` is non-null and returns dL/d(X W1).
Matrix run_backward(const NetworkParams& p, const Tape& tape, Matrix g, NetworkParams* grads) {
  for (std::size_t l = p.tail.size(); l-- > 0;) {
    if (grads) {
      grads->tail[l].W.noalias() = tape.post[l].transpose() * g;
      grads->tail[l].b = g.colwise().sum().transpose();
    }
    Matrix gh = g * p.tail[l].W.transpose();
    if (tape.mask[l].size() != 0) gh.array() *= tape.mask[l].array();
    g = (tape.pre[l].array() > 0.0).select(gh, 0.0);
  }
  return g;
}

void validate_target(Loss loss, std::size_t out_width, double y) {
  if (loss == Loss::Squared) {
    if (out_width != 1) throw InvalidArgument("squared loss needs out_width = 1");
    return;
  }
  const double k = out_width == 1 ? 2.0 : static_cast<double>(out_width);
  if (!(y >= 0.0 && y < k) || y != std::floor(y))
    throw InvalidArgument("cross-entropy target must be a class label in [0, K)");
}

class BatchSampler {
 public:
  BatchSampler(const TrainConfig& cfg, std::size_t m) : cfg_(cfg), m_(m) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> batch;
    const std::size_t bs = cfg_.batch_size;
    if (cfg_.sampling == Sampling::WithReplacement) {
      Rng rng = Rng(cfg_.seed, streams::kSchedule).substream(step_++);
      batch.resize(bs);
      for (auto& i : batch) i = rng.below(m_);
      return batch;
    }
    if (cursor_ >= perm_.size()) {
      perm_.resize(m_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng = Rng(cfg_.seed, streams::kSchedule).substream(epoch_++);
      for (std::size_t i = m_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
      cursor_ = 0;
    }
    const std::size_t end = std::min(cursor_ + bs, perm_.size());
    batch.assign(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                 perm_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return batch;
  }

 private:
  const TrainConfig& cfg_;
  std::size_t m_;
  std::uint64_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

}  // namespace

void NetworkSpec::validate() const {
  if (n_in == 0 || first_width == 0 || out_width == 0)
    throw InvalidArgument("NetworkSpec: widths must be >= 1");
  for (auto w : tail_widths)
    if (w == 0) throw InvalidArgument("NetworkSpec: tail widths must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw InvalidArgument("NetworkSpec: dropout_rate must lie in [0, 1)");
}

NetworkParams NetworkParams::zeros_like() const {
  NetworkParams z;
  z.W1 = Matrix::Zero(W1.rows(), W1.cols());
  for (const auto& layer : tail)
    z.tail.push_back({Matrix::Zero(layer.W.rows(), layer.W.cols()), Vector::Zero(layer.b.size())});
  return z;
}

bool NetworkParams::same_shape(const NetworkParams& o) const {
  if (W1.rows() != o.W1.rows() || W1.cols() != o.W1.cols() || tail.size() != o.tail.size())
    return false;
  for (std::size_t l = 0; l < tail.size(); ++l) {
    if (tail[l].W.rows() != o.tail[l].W.rows() || tail[l].W.cols() != o.tail[l].W.cols() ||
        tail[l].b.size() != o.tail[l].b.size())
      return false;
  }
  return true;
}

bool NetworkParams::all_finite() const {
  if (!W1.allFinite()) return false;
  return std::all_of(tail.begin(), tail.end(),
                     [](const DenseLayer& l) { return l.W.allFinite() && l.b.allFinite(); });
}

std::size_t NetworkParams::size() const {
  auto total = static_cast<std::size_t>(W1.size());
  for (const auto& l : tail) total += static_cast<std::size_t>(l.W.size() + l.b.size());
  return total;
}

void NetworkParams::add_scaled(const NetworkParams& o, double scale) {
  W1 += scale * o.W1;
  for (std::size_t l = 0; l < tail.size(); ++l) {
    tail[l].W += scale * o.tail[l].W;
    tail[l].b += scale * o.tail[l].b;
  }
}

void NetworkParams::scale_by(double factor) {
  W1 *= factor;
  for (auto& l : tail) {
    l.W *= factor;
    l.b *= factor;
  }
}

Vector NetworkParams::flatten() const {
  Vector flat(static_cast<Eigen::Index>(size()));
  Eigen::Index at = 0;
  auto put = [&](const auto& m) {
    flat.segment(at, m.size()) = m.reshaped();
    at += m.size();
  };
  put(W1);
  for (const auto& l : tail) {
    put(l.W);
    put(l.b);
  }
  return flat;
}

void NetworkParams::unflatten(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(size()))
    throw InvalidArgument("unflatten: size mismatch");
  Eigen::Index at = 0;
  auto get = [&](auto& m) {
    m.reshaped() = flat.segment(at, m.size());
    at += m.size();
  };
  get(W1);
  for (auto& l : tail) {
    get(l.W);
    get(l.b);
  }
}

bool NetworkParams::operator==(const NetworkParams& o) const {
  if (!same_shape(o) || W1 != o.W1) return false;
  for (std::size_t l = 0; l < tail.size(); ++l)
    if (tail[l].W != o.tail[l].W || tail[l].b != o.tail[l].b) return false;
  return true;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed, streams::kInit);
  auto draw = [&](std::size_t fan_in, std::size_t fan_out) {
    const double var = spec.init == InitScheme::HeNormal
                           ? 2.0 / static_cast<double>(fan_in)
                           : 2.0 / static_cast<double>(fan_in + fan_out);
    const double sd = std::sqrt(var);
    Matrix w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = sd * rng.normal();
    return w;
  };
  NetworkParams p;
  p.W1 = draw(spec.n_in, spec.first_width);
  std::size_t in = spec.first_width;
  for (std::size_t l = 0; l < spec.tail_depth(); ++l) {
    const std::size_t out = l < spec.tail_widths.size() ? spec.tail_widths[l] : spec.out_width;
    p.tail.push_back({draw(in, out), Vector::Zero(static_cast<Eigen::Index>(out))});
    in = out;
  }
  return p;
}

Vector forward(const NetworkParams& params, const Eigen::Ref<const Vector>& x, Mode mode) {
  return forward_batch(params, x.transpose(), mode).row(0).transpose();
}

Matrix forward_batch(const NetworkParams& params, const Eigen::Ref<const Matrix>& X, Mode mode) {
  return run_forward(params, X, mode).out;
}

double loss_value(Loss loss, const Eigen::Ref<const Vector>& f, double y) {
  if (loss == Loss::Squared) {
    const double d = y - f(0);
    return d * d;
  }
  if (f.size() == 1) {
    // log(1 + e^v) - u v, written to avoid overflow for large |v|.
    const double v = f(0);
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - y * v;
  }
  const double top = f.maxCoeff();
  const double lse = top + std::log((f.array() - top).exp().sum());
  return lse - f(static_cast<Eigen::Index>(y));
}

Gradients backward(const NetworkParams& params, const Eigen::Ref<const Vector>& x, double target,
                   Loss loss, Mode mode) {
  validate_target(loss, static_cast<std::size_t>(params.tail.back().W.cols()), target);
  const Tape tape = run_forward(params, x.transpose(), mode);
  Matrix g;
  Vector y(1);
  y(0) = target;
  Gradients out;
  out.loss = output_gradient(loss, tape.out, y, g);
  out.params = params.zeros_like();
  const Matrix g0 = run_backward(params, tape, std::move(g), &out.params);
  out.params.W1.noalias() = x * g0;
  out.input = params.W1 * g0.transpose();
  return out;
}

Gradients batch_gradients(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                          const Eigen::Ref<const Vector>& y, Loss loss, Mode mode) {
  if (X.rows() != y.size()) throw InvalidArgument("batch_gradients: X/y row mismatch");
  const auto out_width = static_cast<std::size_t>(params.tail.back().W.cols());
  for (Eigen::Index i = 0; i < y.size(); ++i) validate_target(loss, out_width, y(i));
  const Tape tape = run_forward(params, X, mode);
  Matrix g;
  Gradients out;
  out.loss = output_gradient(loss, tape.out, y, g);
  out.params = params.zeros_like();
  const Matrix g0 = run_backward(params, tape, std::move(g), &out.params);
  out.params.W1.noalias() = X.transpose() * g0;
  return out;
}

Vector input_sensitivity(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                         OutputReduction reduction, std::size_t logit) {
  const auto out_width = params.tail.back().W.cols();
  if (reduction == OutputReduction::SingleLogit && static_cast<Eigen::Index>(logit) >= out_width)
    throw InvalidArgument("input_sensitivity: logit index out of range");
  constexpr Eigen::Index kChunk = 512;
  Vector first_layer = Vector::Zero(params.W1.cols());
  for (Eigen::Index start = 0; start < X.rows(); start += kChunk) {
    const Eigen::Index rows = std::min(kChunk, X.rows() - start);
    const Tape tape = run_forward(params, X.middleRows(start, rows), Mode::eval());
    Matrix seed = Matrix::Zero(rows, out_width);
    if (reduction == OutputReduction::SumOutputs)
      seed.setOnes();
    else
      seed.col(static_cast<Eigen::Index>(logit)).setOnes();
    first_layer += run_backward(params, tape, std::move(seed), nullptr).colwise().sum().transpose();
  }
  return params.W1 * first_layer;
}

double dataset_loss(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                    const Eigen::Ref<const Vector>& y, Loss loss) {
  if (X.rows() == 0) return 0.0;
  constexpr Eigen::Index kChunk = 512;
  double total = 0.0;
  for (Eigen::Index start = 0; start < X.rows(); start += kChunk) {
    const Eigen::Index rows = std::min(kChunk, X.rows() - start);
    const Matrix out = forward_batch(params, X.middleRows(start, rows), Mode::eval());
    for (Eigen::Index i = 0; i < rows; ++i)
      total += loss_value(loss, out.row(i).transpose(), y(start + i));
  }
  return total / static_cast<double>(X.rows());
}

void TrainConfig::validate(std::size_t m) const {
  if (batch_size == 0) throw InvalidArgument("TrainConfig: batch_size must be positive");
  if (m == 0) throw InvalidArgument("TrainConfig: empty training set");
  if (sampling == Sampling::WithoutReplacement && batch_size > m)
    throw InvalidArgument("TrainConfig: batch_size " + std::to_string(batch_size) +
                          " exceeds m = " + std::to_string(m) + " without replacement");
  if (!(learning_rate > 0.0)) throw InvalidArgument("TrainConfig: learning_rate must be positive");
  for (double r : lr_schedule)
    if (!(r > 0.0)) throw InvalidArgument("TrainConfig: schedule rates must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("TrainConfig: weight_decay must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw InvalidArgument("TrainConfig: dropout_rate must lie in [0, 1)");
}

double TrainConfig::rate_at(std::size_t t) const {
  if (lr_schedule.empty()) return learning_rate;
  return lr_schedule[std::min(t, lr_schedule.size() - 1)];
}

std::vector<std::vector<std::size_t>> batch_schedule(const TrainConfig& cfg, std::size_t m) {
  cfg.validate(m);
  BatchSampler sampler(cfg, m);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(cfg.iterations);
  for (std::size_t t = 0; t < cfg.iterations; ++t) out.push_back(sampler.next());
  return out;
}

TrainResult train(const NetworkParams& params0, const Dataset& data, const TrainConfig& cfg,
                  const std::vector<std::size_t>& checkpoints, const CheckpointFn& on_checkpoint) {
  cfg.validate(data.m());
  TrainResult result{params0, {}};
  NetworkParams& params = result.params;
  auto is_checkpoint = [&](std::size_t t) {
    return on_checkpoint && std::find(checkpoints.begin(), checkpoints.end(), t) != checkpoints.end();
  };
  if (is_checkpoint(0)) on_checkpoint(0, params);

  BatchSampler sampler(cfg, data.m());
  Matrix xb;
  Vector yb;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const auto batch = sampler.next();
    xb.resize(static_cast<Eigen::Index>(batch.size()), data.X.cols());
    yb.resize(static_cast<Eigen::Index>(batch.size()));
    for (std::size_t r = 0; r < batch.size(); ++r) {
      xb.row(static_cast<Eigen::Index>(r)) = data.X.row(static_cast<Eigen::Index>(batch[r]));
      yb(static_cast<Eigen::Index>(r)) = data.y(static_cast<Eigen::Index>(batch[r]));
    }
    Rng masks = Rng(cfg.seed, streams::kDropout).substream(t);
    Gradients g;
    try {
      g = batch_gradients(params, xb, yb, cfg.loss, Mode::train(cfg.dropout_rate, masks));
    } catch (const NumericOverflow& e) {
      throw NumericOverflow(std::string(e.what()) + " at iteration " + std::to_string(t),
                            e.layer(), static_cast<long>(t));
    }
    const double lr = cfg.rate_at(t);
    const double grad_scale =
        cfg.reduction == Reduction::Mean ? 1.0 / static_cast<double>(batch.size()) : 1.0;
    if (cfg.weight_decay > 0.0) params.scale_by(1.0 - lr * cfg.weight_decay);
    params.add_scaled(g.params, -lr * grad_scale);
    if (!params.all_finite())
      throw NumericOverflow("non-finite parameters after update " + std::to_string(t), -1,
                            static_cast<long>(t));
    if (cfg.loss_every > 0 && (t + 1) % cfg.loss_every == 0)
      result.loss_trajectory.push_back({t + 1, dataset_loss(params, data.X, data.y, cfg.loss)});
    if (is_checkpoint(t + 1)) on_checkpoint(t + 1, params);
  }
  return result;
}

std::string to_string(InitScheme s) {
  return s == InitScheme::HeNormal ? "HeNormal" : "XavierNormal";
}
std::string to_string(Loss l) { return l == Loss::Squared ? "Squared" : "CrossEntropy"; }
std::string to_string(Sampling s) {
  return s == Sampling::WithReplacement ? "WithReplacement" : "WithoutReplacement";
}
std::string to_string(Reduction r) { return r == Reduction::Sum ? "Sum" : "Mean"; }
std::string to_string(OutputReduction r) {
  return r == OutputReduction::SumOutputs ? "SumOutputs" : "SingleLogit";
}

namespace {
template <typename E, std::size_t N>
E parse_enum(const std::string& s, const E (&values)[N], const char* what) {
  for (E v : values)
    if (to_string(v) == s) return v;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}
}  // namespace

InitScheme init_scheme_from_string(const std::string& s) {
  constexpr InitScheme kAll[] = {InitScheme::HeNormal, InitScheme::XavierNormal};
  return parse_enum(s, kAll, "init scheme");
}
Loss loss_from_string(const std::string& s) {
  constexpr Loss kAll[] = {Loss::Squared, Loss::CrossEntropy};
  return parse_enum(s, kAll, "loss");
}
Sampling sampling_from_string(const std::string& s) {
  constexpr Sampling kAll[] = {Sampling::WithReplacement, Sampling::WithoutReplacement};
  return parse_enum(s, kAll, "sampling");
}
Reduction reduction_from_string(const std::string& s) {
  constexpr Reduction kAll[] = {Reduction::Sum, Reduction::Mean};
  return parse_enum(s, kAll, "reduction");
}
OutputReduction output_reduction_from_string(const std::string& s) {
  constexpr OutputReduction kAll[] = {OutputReduction::SumOutputs, OutputReduction::SingleLogit};
  return parse_enum(s, kAll, "output reduction");
}

}  // namespace mirrorsel
