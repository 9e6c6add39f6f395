#include "mirrorsel/select.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mirrorsel/errors.hpp"
#include "mirrorsel/rng.hpp"

namespace mirrorsel {

double psi_value(PsiKind kind, double u, double v) {
  switch (kind) {
    case PsiKind::Min: return std::min(u, v);
    case PsiKind::Product: return u * v;
    case PsiKind::Sum: return u + v;
  }
  return 0.0;
}

int psi_degree(PsiKind kind) { return kind == PsiKind::Product ? 2 : 1; }

Vector mirror_stats(const Eigen::Ref<const Vector>& xi1, const Eigen::Ref<const Vector>& xi2,
                    PsiKind psi) {
  if (xi1.size() != xi2.size())
    throw InvalidArgument("mirror_stats: length mismatch " + std::to_string(xi1.size()) + " vs " +
                          std::to_string(xi2.size()));
  Vector M(xi1.size());
  for (Eigen::Index j = 0; j < xi1.size(); ++j) {
    const double a = xi1(j);
    const double b = xi2(j);
    if (!std::isfinite(a) || !std::isfinite(b))
      throw InvalidArgument("mirror_stats: non-finite sensitivity at index " + std::to_string(j));
    // Sign of the product without forming it, so tiny values cannot underflow to 0.
    const int sign = (a == 0.0 || b == 0.0) ? 0 : ((a > 0.0) == (b > 0.0) ? 1 : -1);
    M(j) = sign == 0 ? 0.0 : sign * psi_value(psi, std::abs(a), std::abs(b));
  }
  return M;
}

double fdp_hat(const Eigen::Ref<const Vector>& M, double u) {
  const auto below = (M.array() < -u).count();
  const auto above = (M.array() > u).count();
  return static_cast<double>(below) / static_cast<double>(std::max<Eigen::Index>(above, 1));
}

double cutoff(const Eigen::Ref<const Vector>& M, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("cutoff: alpha must lie in (0, 1)");
  std::vector<double> pos;
  std::vector<double> neg;
  for (Eigen::Index j = 0; j < M.size(); ++j) {
    if (M(j) > 0.0) pos.push_back(M(j));
    if (M(j) < 0.0) neg.push_back(-M(j));
  }
  if (pos.empty()) return kNoCutoff;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> candidates;
  candidates.reserve(pos.size() + neg.size());
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(candidates));
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  for (double u : candidates) {
    const auto above = pos.end() - std::upper_bound(pos.begin(), pos.end(), u);
    const auto below = neg.end() - std::upper_bound(neg.begin(), neg.end(), u);
    const double ratio =
        static_cast<double>(below) / static_cast<double>(std::max<std::ptrdiff_t>(above, 1));
    if (ratio <= alpha) return u;
  }
  return kNoCutoff;
}

std::vector<std::size_t> selected_set(const Eigen::Ref<const Vector>& M, double tau) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < M.size(); ++j)
    if (M(j) > tau) out.push_back(static_cast<std::size_t>(j));
  return out;
}

MirrorResult mirror_select(const Eigen::Ref<const Vector>& xi1, const Eigen::Ref<const Vector>& xi2,
                           PsiKind psi, double alpha) {
  MirrorResult r;
  r.xi1 = xi1;
  r.xi2 = xi2;
  r.M = mirror_stats(xi1, xi2, psi);
  r.alpha = alpha;
  r.tau = cutoff(r.M, alpha);
  r.selected = selected_set(r.M, r.tau);
  return r;
}

SelectionMetrics evaluate(const MirrorResult& result, const SignalMatrix& signal) {
  if (result.M.size() != signal.n())
    throw InvalidArgument("evaluate: result has " + std::to_string(result.M.size()) +
                          " features, signal has " + std::to_string(signal.n()));
  SelectionMetrics m;
  m.n_selected = result.selected.size();
  std::size_t false_hits = 0;
  for (auto j : result.selected)
    if (signal.is_null(j)) ++false_hits;
  const std::size_t n_signal = static_cast<std::size_t>(signal.n()) - signal.null_set.size();
  m.fdp = static_cast<double>(false_hits) / static_cast<double>(std::max<std::size_t>(m.n_selected, 1));
  m.power = n_signal == 0 ? 0.0
                          : static_cast<double>(m.n_selected - false_hits) /
                                static_cast<double>(n_signal);
  return m;
}

namespace {

struct HalfTrace {
  std::vector<Vector> xi;
  std::vector<double> loss;
};

HalfTrace trace_half(const NetworkParams& params0, const Dataset& half, const SelectionSetup& s,
                     const std::vector<std::size_t>& checkpoints) {
  HalfTrace trace;
  TrainConfig cfg = s.train;
  cfg.loss_every = 0;
  cfg.iterations = checkpoints.empty() ? 0 : checkpoints.back();
  train(params0, half, cfg, checkpoints, [&](std::size_t, const NetworkParams& p) {
    trace.xi.push_back(input_sensitivity(p, half.X, s.output_reduction, s.logit));
    trace.loss.push_back(dataset_loss(p, half.X, half.y, cfg.loss));
  });
  return trace;
}

}  // namespace

std::vector<SweepPoint> select_features_sweep(const Dataset& half1, const Dataset& half2,
                                              const SelectionSetup& setup, std::uint64_t seed,
                                              const std::vector<std::size_t>& checkpoints) {
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end()) ||
      std::adjacent_find(checkpoints.begin(), checkpoints.end()) != checkpoints.end())
    throw InvalidArgument("select_features_sweep: checkpoints must be strictly ascending");
  if (half1.n() != half2.n()) throw InvalidArgument("select_features_sweep: halves differ in n");
  NetworkSpec net = setup.net;
  net.n_in = half1.n();
  const NetworkParams params0 = init_params(net, derive_seed(seed, streams::kInit));
  const HalfTrace a = trace_half(params0, half1, setup, checkpoints);
  const NetworkParams params0_second =
      setup.shared_init ? params0 : init_params(net, derive_seed(seed, streams::kInit + 1));
  const HalfTrace b = trace_half(params0_second, half2, setup, checkpoints);
  std::vector<SweepPoint> out;
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    out.push_back({checkpoints[k], mirror_select(a.xi[k], b.xi[k], setup.psi, setup.alpha),
                   a.loss[k], b.loss[k]});
  }
  return out;
}

std::vector<SweepPoint> select_features_sweep(const Dataset& ds, const SelectionSetup& setup,
                                              std::uint64_t seed,
                                              const std::vector<std::size_t>& checkpoints) {
  auto [h1, h2] = split_rows(ds, seed);
  return select_features_sweep(h1, h2, setup, seed, checkpoints);
}

MirrorResult select_features(const Dataset& ds, const SelectionSetup& setup, std::uint64_t seed) {
  return select_features_sweep(ds, setup, seed, {setup.train.iterations}).front().result;
}

std::string to_string(PsiKind p) {
  switch (p) {
    case PsiKind::Min: return "Min";
    case PsiKind::Product: return "Product";
    case PsiKind::Sum: return "Sum";
  }
  return "?";
}

PsiKind psi_from_string(const std::string& s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "min") return PsiKind::Min;
  if (lower == "product" || lower == "prod") return PsiKind::Product;
  if (lower == "sum") return PsiKind::Sum;
  throw ConfigError("unknown psi '" + s + "' (expected min, product or sum)");
}

}  // namespace mirrorsel
