#pragma once

// Importance-weighted loss over machine and human labels. Reviewed items
// (delta = 1) add the human-minus-machine loss difference scaled by the
// inverse review probability, which keeps the estimate unbiased for the
// fully supervised loss.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "act/error.hpp"
#include "act/rng.hpp"
#include "act/sampling/plan.hpp"

namespace act {

struct LossSample {
  int item_id = 0;
  /// Loss under the true (human) label.
  double loss = 0.0;
  /// Loss under the machine label.
  double machine_loss = 0.0;
  double pi = 1.0;
  int delta = 0;
  double eps = 0.0;
};

struct ActLossConfig {
  SamplingRule rule = SamplingRule::threshold;
  double lambda = 1.0;
  /// Exponential rule parameters that produced pi.
  std::optional<double> alpha;
  std::optional<double> beta;
  /// Normalization rule budget B.
  std::optional<int> budget;
  /// Reject samples whose pi does not match the rule (see check_provenance).
  bool check_provenance = true;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
    if (rule == SamplingRule::ppl_priority)
      throw ValidationError("the loss has no variant for the ppl_priority rule");
    if (rule == SamplingRule::exponential && (!alpha || !beta))
      throw ValidationError("exponential loss needs alpha and beta");
    if (rule == SamplingRule::normalization && (!budget || *budget < 1))
      throw ValidationError("normalization loss needs a budget >= 1");
  }
};

/// Counts loss evaluations that came out negative; importance weighting can
/// push the estimate below zero and values are never clipped.
inline std::atomic<std::int64_t>& negative_loss_evaluations() {
  static std::atomic<std::int64_t> counter{0};
  return counter;
}

namespace detail {

inline void check_samples(std::span<const LossSample> s) {
  if (s.empty()) throw PreconditionError("loss needs at least one sample");
  for (const auto& x : s) {
    if (x.delta != 0 && x.delta != 1)
      throw PreconditionError("delta must be 0 or 1 (item " + std::to_string(x.item_id) + ")");
    if (!(x.pi >= 0.0 && x.pi <= 1.0))
      throw PreconditionError("pi outside [0, 1] (item " + std::to_string(x.item_id) + ")");
    if (x.delta == 1 && x.pi <= 0.0)
      throw ValidationError("item " + std::to_string(x.item_id) + " was reviewed with pi = 0");
    if (!std::isfinite(x.loss) || !std::isfinite(x.machine_loss))
      throw PreconditionError("non-finite loss (item " + std::to_string(x.item_id) + ")");
  }
}

inline double note_sign(double v) {
  if (v < 0.0) ++negative_loss_evaluations();
  return v;
}

}  // namespace detail

/// (1/N) sum [ machine_loss + (loss - machine_loss) * delta / pi ].
inline double act_loss(std::span<const LossSample> samples) {
  detail::check_samples(samples);
  double s = 0.0;
  for (const auto& x : samples) {
    s += x.machine_loss;
    if (x.delta) s += (x.loss - x.machine_loss) / x.pi;
  }
  return detail::note_sign(s / static_cast<double>(samples.size()));
}

/// Raises ValidationError unless every pi is what `config.rule` assigns to
/// the sample's eps. The variance and unbiasedness guarantees only hold when
/// pi is the transform that generated delta.
inline void check_provenance(std::span<const LossSample> samples, const ActLossConfig& config) {
  constexpr double tol = 1e-9;
  auto fail = [](const LossSample& x, double want) {
    throw ValidationError("item " + std::to_string(x.item_id) + ": pi = " + std::to_string(x.pi) +
                          " but the rule gives " + std::to_string(want));
  };
  switch (config.rule) {
    case SamplingRule::threshold:
      for (const auto& x : samples)
        if (x.pi != 0.0 && x.pi != 1.0) fail(x, x.pi < 0.5 ? 0.0 : 1.0);
      break;
    case SamplingRule::exponential:
      for (const auto& x : samples) {
        const double want = 1.0 / (1.0 + std::exp(-*config.beta * (x.eps - *config.alpha)));
        if (std::abs(x.pi - want) > tol * std::max(1.0, want)) fail(x, want);
      }
      break;
    case SamplingRule::normalization: {
      const double total = std::accumulate(samples.begin(), samples.end(), 0.0,
                                           [](double a, const LossSample& x) { return a + x.eps; });
      const double b = static_cast<double>(*config.budget);
      for (const auto& x : samples) {
        const double want = total > 0.0 ? std::min(1.0, b * x.eps / total)
                                        : b / static_cast<double>(samples.size());
        if (std::abs(x.pi - want) > tol) fail(x, want);
      }
      break;
    }
    case SamplingRule::ppl_priority:
      break;
  }
}

struct ActWeights {
  std::vector<double> machine;
  std::vector<double> human;
};

/// Per-sample weights on the machine-label and human-label losses, so that
/// the variant equals (1/N) sum [machine_i * machine_loss_i + human_i * loss_i].
/// With r_i = delta_i * rho_i: machine_i = lambda (1 - r_i), human_i = r_i,
/// where rho is sum(eps) / (B eps_i) for normalization, 1 + exp(-beta (eps_i
/// - alpha)) for exponential, and 1 for threshold.
inline ActWeights act_weights(std::span<const LossSample> samples, const ActLossConfig& config) {
  config.validate();
  detail::check_samples(samples);
  if (config.check_provenance) check_provenance(samples, config);
  const std::size_t n = samples.size();
  ActWeights w;
  w.machine.resize(n);
  w.human.resize(n);
  double total_eps = 0.0;
  if (config.rule == SamplingRule::normalization)
    for (const auto& x : samples) total_eps += x.eps;
  for (std::size_t i = 0; i < n; ++i) {
    const LossSample& x = samples[i];
    double rho = 1.0;
    if (x.delta) {
      switch (config.rule) {
        case SamplingRule::normalization:
          rho = total_eps > 0.0 ? total_eps / (static_cast<double>(*config.budget) * x.eps) : 1.0 / x.pi;
          break;
        case SamplingRule::exponential:
          rho = 1.0 + std::exp(-*config.beta * (x.eps - *config.alpha));
          break;
        default:
          break;
      }
    }
    const double r = x.delta ? rho : 0.0;
    w.machine[i] = config.lambda * (1.0 - r);
    w.human[i] = r;
  }
  return w;
}

inline double act_loss_variant(std::span<const LossSample> samples, const ActLossConfig& config) {
  const ActWeights w = act_weights(samples, config);
  double s = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    s += w.machine[i] * samples[i].machine_loss + w.human[i] * samples[i].loss;
  return detail::note_sign(s / static_cast<double>(samples.size()));
}

/// Gradient of act_loss_variant given per-example gradients, one row per
/// sample: `grad_loss` for the human-label loss, `grad_machine` for the
/// machine-label loss.
inline Eigen::VectorXd act_loss_gradient(const Eigen::MatrixXd& grad_loss, const Eigen::MatrixXd& grad_machine,
                                         std::span<const LossSample> samples, const ActLossConfig& config) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (grad_loss.rows() != n || grad_machine.rows() != n || grad_loss.cols() != grad_machine.cols())
    throw PreconditionError("gradient matrices do not match the samples");
  const ActWeights w = act_weights(samples, config);
  const Eigen::Map<const Eigen::VectorXd> wm(w.machine.data(), n);
  const Eigen::Map<const Eigen::VectorXd> wh(w.human.data(), n);
  return (grad_machine.transpose() * wm + grad_loss.transpose() * wh) / static_cast<double>(n);
}

/// (1/N) [ Var(loss) + mean((loss - machine_loss)^2 (1/pi - 1)) ] with the
/// population variance (divide by N).
inline double variance_estimate(std::span<const LossSample> samples) {
  if (samples.size() < 2) throw PreconditionError("variance needs at least two samples");
  detail::check_samples(samples);
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (const auto& x : samples) {
    if (x.pi <= 0.0) throw PreconditionError("variance is undefined with pi = 0 (item " + std::to_string(x.item_id) + ")");
    mean += x.loss;
  }
  mean /= n;
  double var = 0.0, extra = 0.0;
  for (const auto& x : samples) {
    var += (x.loss - mean) * (x.loss - mean);
    const double d = x.loss - x.machine_loss;
    extra += d * d * (1.0 / x.pi - 1.0);
  }
  return (var / n + extra / n) / n;
}

/// Variance of the estimator over the review draws alone, with the data
/// held fixed: (1/N^2) sum (loss - machine_loss)^2 (1/pi - 1).
inline double conditional_variance(std::span<const LossSample> samples) {
  detail::check_samples(samples);
  const double n = static_cast<double>(samples.size());
  double extra = 0.0;
  for (const auto& x : samples) {
    if (x.pi <= 0.0) throw PreconditionError("variance is undefined with pi = 0");
    const double d = x.loss - x.machine_loss;
    extra += d * d * (1.0 / x.pi - 1.0);
  }
  return extra / (n * n);
}

enum class ResampleMode {
  /// Redraw the data (bootstrap over items) and the review indicators; the
  /// estimator's variance then matches variance_estimate.
  joint,
  /// Redraw the review indicators only; matches conditional_variance.
  delta_only,
};

struct MonteCarloResult {
  double mean = 0.0;
  /// Variance across resamples (n - 1 denominator).
  double variance = 0.0;
  int n_resamples = 0;

  double standard_error() const { return std::sqrt(variance / n_resamples); }
};

inline MonteCarloResult monte_carlo_loss_distribution(std::span<const double> loss, std::span<const double> machine_loss,
                                                      std::span<const double> pi, int n_resamples,
                                                      std::uint64_t seed, ResampleMode mode = ResampleMode::joint) {
  const std::size_t n = loss.size();
  if (n == 0 || machine_loss.size() != n || pi.size() != n)
    throw PreconditionError("loss, machine_loss and pi must have equal non-zero length");
  if (n_resamples < 1000) throw PreconditionError("need at least 1000 resamples");
  for (double p : pi)
    if (!(p > 0.0 && p <= 1.0)) throw PreconditionError("pi must lie in (0, 1]");
  auto eng = rng::engine(seed, 0, rng::Stream::resample);
  // Welford accumulation keeps the variance accurate for 1e5+ draws.
  double mean = 0.0, m2 = 0.0;
  for (int r = 0; r < n_resamples; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = mode == ResampleMode::joint ? static_cast<std::size_t>(rng::below(eng, n)) : j;
      s += machine_loss[i];
      if (rng::uniform01(eng) < pi[i]) s += (loss[i] - machine_loss[i]) / pi[i];
    }
    const double v = s / static_cast<double>(n);
    if (v < 0.0) ++negative_loss_evaluations();
    const double d = v - mean;
    mean += d / (r + 1);
    m2 += d * (v - mean);
  }
  return {mean, m2 / (n_resamples - 1), n_resamples};
}

}  // namespace act
