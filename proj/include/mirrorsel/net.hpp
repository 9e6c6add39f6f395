#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mirrorsel/datagen.hpp"
#include "mirrorsel/linalg.hpp"
#include "mirrorsel/rng.hpp"

namespace mirrorsel {

enum class Activation { ReLU };
enum class InitScheme { HeNormal, XavierNormal };
enum class Loss { Squared, CrossEntropy };
enum class Sampling { WithReplacement, WithoutReplacement };
/// How per-example gradients in a mini-batch are combined.
enum class Reduction { Sum, Mean };
/// Scalarization of a multi-output network for input sensitivity.
enum class OutputReduction { SumOutputs, SingleLogit };

/// Dense bias-free first layer W1 (n_in x first_width) followed by an MLP
/// tail. Each tail layer is ReLU -> dropout -> affine; the last affine map
/// produces out_width outputs with no activation. The network therefore
/// sees its input only through W1^T x.
struct NetworkSpec {
  std::size_t n_in = 0;
  std::size_t first_width = 0;
  std::vector<std::size_t> tail_widths;
  std::size_t out_width = 1;
  Activation activation = Activation::ReLU;
  double dropout_rate = 0.0;
  InitScheme init = InitScheme::HeNormal;

  void validate() const;
  /// Number of affine tail layers (tail_widths.size() + 1).
  std::size_t tail_depth() const { return tail_widths.size() + 1; }
};

/// Tail layer z = h W + b for a row vector h; W is (fan_in x fan_out).
struct DenseLayer {
  Matrix W;
  Vector b;
};

struct NetworkParams {
  Matrix W1;
  std::vector<DenseLayer> tail;

  /// Zero-filled parameters with the same shapes.
  NetworkParams zeros_like() const;
  bool same_shape(const NetworkParams& other) const;
  bool all_finite() const;
  std::size_t size() const;
  /// this += scale * other
  void add_scaled(const NetworkParams& other, double scale);
  void scale_by(double factor);
  /// Flattened view in a fixed order (W1 column-major, then each tail W, b).
  Vector flatten() const;
  void unflatten(const Vector& flat);

  bool operator==(const NetworkParams& other) const;
};

/// Evaluation (deterministic) or training with inverted dropout whose
/// masks are drawn from `rng`.
class Mode {
 public:
  static Mode eval() { return Mode(); }
  static Mode train(double dropout_rate, Rng& rng) { return Mode(dropout_rate, &rng); }

  bool is_train() const { return rng_ != nullptr; }
  double dropout_rate() const { return rate_; }
  Rng* rng() const { return rng_; }

 private:
  Mode() = default;
  Mode(double rate, Rng* rng) : rate_(rate), rng_(rng) {}
  double rate_ = 0.0;
  Rng* rng_ = nullptr;
};

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);

/// f(x) for one input.
Vector forward(const NetworkParams& params, const Eigen::Ref<const Vector>& x, Mode mode);
/// Row-wise f(x_i) for a batch (rows x out_width).
Matrix forward_batch(const NetworkParams& params, const Eigen::Ref<const Matrix>& X, Mode mode);

double loss_value(Loss loss, const Eigen::Ref<const Vector>& output, double target);

struct Gradients {
  NetworkParams params;
  Vector input;
  double loss = 0.0;
};

/// Exact reverse-mode gradients of loss(target, f(x)) with respect to all
/// parameters and to x. ReLU'(0) is taken as 0.
Gradients backward(const NetworkParams& params, const Eigen::Ref<const Vector>& x, double target,
                   Loss loss, Mode mode);

/// Gradients of sum_i loss(y_i, f(x_i)) over the batch rows; `input` is
/// left empty. `loss` in the result is the summed loss.
Gradients batch_gradients(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                          const Eigen::Ref<const Vector>& y, Loss loss, Mode mode);

/// Input sensitivity: sum over rows of the gradient of the (scalarized)
/// network output with respect to the input, evaluated without dropout.
Vector input_sensitivity(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                         OutputReduction reduction = OutputReduction::SumOutputs,
                         std::size_t logit = 0);

/// Mean loss over all rows, evaluation mode.
double dataset_loss(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                    const Eigen::Ref<const Vector>& y, Loss loss);

struct TrainConfig {
  Loss loss = Loss::Squared;
  std::size_t batch_size = 128;
  double learning_rate = 3e-3;
  /// Optional per-iteration learning rates; the last entry repeats.
  std::vector<double> lr_schedule;
  std::size_t iterations = 0;
  Sampling sampling = Sampling::WithoutReplacement;
  Reduction reduction = Reduction::Sum;
  /// Coupled L2 decay: W <- W - lr * (grad + weight_decay * W).
  double weight_decay = 0.0;
  double dropout_rate = 0.0;
  /// Record the full-data loss every `loss_every` updates (0 = never).
  std::size_t loss_every = 1;
  std::uint64_t seed = 0;

  void validate(std::size_t m) const;
  double rate_at(std::size_t t) const;
};

struct LossPoint {
  std::size_t iteration;
  double loss;
};

struct TrainResult {
  NetworkParams params;
  std::vector<LossPoint> loss_trajectory;
};

/// Called with (iteration, params) at each requested checkpoint, where
/// iteration t means "after t updates".
using CheckpointFn = std::function<void(std::size_t, const NetworkParams&)>;

/// Mini-batch SGD. Batch indices, learning rates and dropout masks are
/// functions of (cfg, t) only, never of the data.
TrainResult train(const NetworkParams& params0, const Dataset& data, const TrainConfig& cfg,
                  const std::vector<std::size_t>& checkpoints = {},
                  const CheckpointFn& on_checkpoint = {});

/// Batch indices for every update of a run, exposed so the schedule can be
/// inspected and shared between the two halves of a split.
std::vector<std::vector<std::size_t>> batch_schedule(const TrainConfig& cfg, std::size_t m);

std::string to_string(InitScheme s);
std::string to_string(Loss l);
std::string to_string(Sampling s);
std::string to_string(Reduction r);
std::string to_string(OutputReduction r);
InitScheme init_scheme_from_string(const std::string& s);
Loss loss_from_string(const std::string& s);
Sampling sampling_from_string(const std::string& s);
Reduction reduction_from_string(const std::string& s);
OutputReduction output_reduction_from_string(const std::string& s);

}  // namespace mirrorsel
