#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mirrorsel/datagen.hpp"
#include "mirrorsel/linalg.hpp"
#include "mirrorsel/net.hpp"

namespace mirrorsel {

/// Combination function psi(u, v) for the mirror statistic: min(u, v),
/// u * v or u + v. All are symmetric, monotone and homogeneous of degree
/// psi_degree().
enum class PsiKind { Min, Product, Sum };

double psi_value(PsiKind kind, double u, double v);
int psi_degree(PsiKind kind);

inline constexpr double kNoCutoff = std::numeric_limits<double>::infinity();

struct MirrorResult {
  Vector xi1;
  Vector xi2;
  Vector M;
  /// +inf when no threshold satisfies the level (empty selection).
  double tau = kNoCutoff;
  std::vector<std::size_t> selected;
  double alpha = 0.1;
};

struct SelectionMetrics {
  double fdp = 0.0;
  double power = 0.0;
  std::size_t n_selected = 0;
};

/// M_j = sign(xi1_j * xi2_j) * psi(|xi1_j|, |xi2_j|), with sign(0) = 0.
Vector mirror_stats(const Eigen::Ref<const Vector>& xi1, const Eigen::Ref<const Vector>& xi2,
                    PsiKind psi);

/// #{M_j < -u} / max(#{M_j > u}, 1).
double fdp_hat(const Eigen::Ref<const Vector>& M, double u);

/// Smallest distinct positive magnitude |M_j| at which fdp_hat <= alpha,
/// or +inf if there is none.
double cutoff(const Eigen::Ref<const Vector>& M, double alpha);

/// {j : M_j > tau}, ascending.
std::vector<std::size_t> selected_set(const Eigen::Ref<const Vector>& M, double tau);

/// mirror_stats -> cutoff -> selected_set on a pair of split sensitivities.
MirrorResult mirror_select(const Eigen::Ref<const Vector>& xi1, const Eigen::Ref<const Vector>& xi2,
                           PsiKind psi, double alpha);

SelectionMetrics evaluate(const MirrorResult& result, const SignalMatrix& signal);

/// Everything the two-half procedure needs besides the data.
struct SelectionSetup {
  NetworkSpec net;
  TrainConfig train;
  PsiKind psi = PsiKind::Min;
  double alpha = 0.1;
  OutputReduction output_reduction = OutputReduction::SumOutputs;
  std::size_t logit = 0;
  /// Both halves start from one parameter draw. When false each half gets
  /// its own draw from the same initializer.
  bool shared_init = true;
};

/// Random halves, one shared initial parameter draw (from `seed`), the same
/// training schedule on both halves, then mirror selection.
MirrorResult select_features(const Dataset& ds, const SelectionSetup& setup, std::uint64_t seed);

/// Selection evaluated after `checkpoints` updates (ascending) of a single
/// pair of training runs.
struct SweepPoint {
  std::size_t iteration = 0;
  MirrorResult result;
  /// Mean per-row training loss of each half at this checkpoint.
  double loss1 = 0.0;
  double loss2 = 0.0;
};

std::vector<SweepPoint> select_features_sweep(const Dataset& ds, const SelectionSetup& setup,
                                              std::uint64_t seed,
                                              const std::vector<std::size_t>& checkpoints);

/// Same as above on halves supplied by the caller (e.g. independently
/// sampled Spiked halves).
std::vector<SweepPoint> select_features_sweep(const Dataset& half1, const Dataset& half2,
                                              const SelectionSetup& setup, std::uint64_t seed,
                                              const std::vector<std::size_t>& checkpoints);

std::string to_string(PsiKind p);
PsiKind psi_from_string(const std::string& s);

}  // namespace mirrorsel
