#pragma once

// Parameter-gap experiments on synthetic softmax-regression data: train on
// full human labels and on the loss variant for a sampling rule, then
// compare the two minimizers with the theoretical bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "act/backends/simulator.hpp"
#include "act/core/correction.hpp"
#include "act/error.hpp"
#include "act/parallel.hpp"
#include "act/rng.hpp"
#include "act/sampling/plan.hpp"
#include "act/trainer/softmax.hpp"

namespace act {

enum class MachineNoise {
  /// With probability `noise_rate` the machine label is a fresh draw from
  /// the true class distribution given x (it may coincide with the truth).
  posterior_resample,
  /// With probability `noise_rate` the machine label is uniform over the
  /// wrong classes.
  uniform_wrong,
};

struct GapGeneratorConfig {
  int features = 20;
  int classes = 10;
  /// Standard deviation of the true weights times sqrt(features).
  double signal = 2.0;
  std::uint64_t population_seed = 7;
  MachineNoise noise = MachineNoise::posterior_resample;
  double noise_rate = 0.4;
  BetaParams on_error{9.0, 1.0};
  BetaParams on_correct{1.0, 9.0};
};

struct GapInstance {
  Eigen::MatrixXd x;
  std::vector<Label> truth;
  std::vector<Label> machine;
  std::vector<double> eps;
};

inline Eigen::MatrixXd true_weights(const GapGeneratorConfig& cfg) {
  auto eng = rng::engine(cfg.population_seed, 0, rng::Stream::generator);
  Eigen::MatrixXd w(cfg.classes, cfg.features);
  const double scale = cfg.signal / std::sqrt(static_cast<double>(cfg.features));
  for (int k = 0; k < cfg.classes; ++k)
    for (int d = 0; d < cfg.features; ++d) w(k, d) = scale * rng::normal(eng);
  return w;
}

namespace detail {

inline Label draw_class(rng::Engine& eng, const Eigen::RowVectorXd& p) {
  double u = rng::uniform01(eng);
  for (Eigen::Index k = 0; k + 1 < p.size(); ++k) {
    if (u < p(k)) return static_cast<Label>(k);
    u -= p(k);
  }
  return static_cast<Label>(p.size() - 1);
}

}  // namespace detail

/// x ~ N(0, I), y ~ softmax(W x), machine labels per the noise model, and
/// criticizer error probabilities from the two Beta channels.
inline GapInstance generate_gap_instance(const GapGeneratorConfig& cfg, int n, std::uint64_t seed) {
  if (n < 1) throw PreconditionError("instance size must be >= 1");
  if (cfg.classes < 2 || cfg.features < 1) throw PreconditionError("need >= 2 classes and >= 1 feature");
  const Eigen::MatrixXd w = true_weights(cfg);
  GapInstance g;
  g.x.resize(n, cfg.features);
  g.truth.resize(static_cast<std::size_t>(n));
  g.machine.resize(static_cast<std::size_t>(n));
  g.eps.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto eng = rng::engine(seed, static_cast<std::uint64_t>(i), rng::Stream::generator);
    for (int d = 0; d < cfg.features; ++d) g.x(i, d) = rng::normal(eng);
    Eigen::RowVectorXd z = g.x.row(i) * w.transpose();
    z = (z.array() - z.maxCoeff()).exp();
    z /= z.sum();
    const Label y = detail::draw_class(eng, z);
    Label m = y;
    if (rng::uniform01(eng) < cfg.noise_rate) {
      if (cfg.noise == MachineNoise::posterior_resample) {
        m = detail::draw_class(eng, z);
      } else {
        const auto wrong = static_cast<Label>(rng::below(eng, static_cast<std::uint64_t>(cfg.classes - 1)));
        m = wrong >= y ? wrong + 1 : wrong;
      }
    }
    const BetaParams& b = m != y ? cfg.on_error : cfg.on_correct;
    g.eps[static_cast<std::size_t>(i)] = rng::beta(eng, b.a, b.b);
    g.truth[static_cast<std::size_t>(i)] = y;
    g.machine[static_cast<std::size_t>(i)] = m;
  }
  return g;
}

struct GapTrialConfig {
  SamplingRule rule = SamplingRule::threshold;
  /// Budget proportion b; B = floor(b N).
  double proportion = 0.1;
  double beta = 10.0;
  double mu = 0.1;
  double p = 0.05;
  double lambda = 1.0;
  /// Convergence target on the gradient norm for both fits.
  double tolerance = 1e-9;
  int max_steps = 20000;
};

struct GapTrial {
  int n = 0;
  SamplingRule rule = SamplingRule::threshold;
  std::uint64_t seed = 0;
  double gap = 0.0;
  double bound = 0.0;
  bool bound_valid = true;
  double empirical_c = 0.0;
  /// Smallest pi among reviewed items (1 when nothing was reviewed).
  double q_reviewed = 1.0;
  /// Smallest pi over all items.
  double q_all = 1.0;
  /// q used for the bound; see effective_q.
  double q_effective = 1.0;
  int reviewed = 0;
};

/// q for the bound. A reviewed item weighs its gradient gap by (1/pi - 1),
/// an item that can never be reviewed (pi = 0) carries it with weight 1,
/// which is the value (1 - q)/q takes at q = 1/2. Each item contributes
/// pi if pi > 0, else 1/2; the minimum over items is returned.
inline double effective_q(std::span<const double> pi) {
  double q = 1.0;
  for (double v : pi) q = std::min(q, v > 0.0 ? v : 0.5);
  return q;
}

inline GapTrial run_gap_trial(const GapGeneratorConfig& gen, int n, std::uint64_t seed, const GapTrialConfig& cfg) {
  const GapInstance inst = generate_gap_instance(gen, n, seed);
  const int budget = budget_from_proportion(cfg.proportion, n);
  // The loss guarantees need unmodified Bernoulli draws.
  const SamplingPlan plan = plan_sampling(inst.eps, {cfg.rule, budget, cfg.beta, SamplingMode::expectation, seed});

  TrainingSet t;
  t.x = inst.x;
  t.classes = gen.classes;
  t.human = inst.truth;
  t.machine = inst.machine;
  t.pi = plan.pi;
  t.delta = plan.delta;
  t.eps = inst.eps;
  t.final = inst.machine;
  for (std::size_t i = 0; i < t.final.size(); ++i)
    if (plan.delta[i]) t.final[i] = inst.truth[i];

  TrainConfig full;
  full.l2 = cfg.mu;
  full.epochs = cfg.max_steps;
  full.tolerance = cfg.tolerance;
  full.loss = LossSelection::plain_human;
  TrainConfig act_cfg = full;
  act_cfg.loss = LossSelection::act;
  act_cfg.act.rule = cfg.rule;
  act_cfg.act.lambda = cfg.lambda;
  act_cfg.act.alpha = plan.alpha;
  act_cfg.act.beta = plan.beta;
  act_cfg.act.budget = budget;
  if (cfg.rule == SamplingRule::normalization && budget < 1)
    throw PreconditionError("normalization needs a budget of at least one item");

  const ModelParams star = train(t, full).params;
  const ModelParams fitted = train(t, act_cfg).params;

  GapTrial r;
  r.n = n;
  r.rule = cfg.rule;
  r.seed = seed;
  r.gap = parameter_gap(star, fitted);
  // Per-example gradient gap (e_y - e_m) x~ does not depend on theta.
  for (int i = 0; i < n; ++i)
    if (inst.truth[static_cast<std::size_t>(i)] != inst.machine[static_cast<std::size_t>(i)])
      r.empirical_c = std::max(r.empirical_c, std::sqrt(2.0 * (inst.x.row(i).squaredNorm() + 1.0)));
  for (int i = 0; i < n; ++i) {
    const double pi = plan.pi[static_cast<std::size_t>(i)];
    r.q_all = std::min(r.q_all, pi);
    if (plan.delta[static_cast<std::size_t>(i)]) {
      r.q_reviewed = std::min(r.q_reviewed, pi);
      ++r.reviewed;
    }
  }
  r.q_effective = effective_q(plan.pi);
  const GapBound b = theory_bound({cfg.mu, static_cast<double>(n), r.q_effective, r.empirical_c, cfg.p});
  r.bound = b.bound;
  r.bound_valid = b.valid;
  return r;
}

inline std::vector<GapTrial> gap_experiment(const GapGeneratorConfig& gen, const std::vector<int>& sizes,
                                            const std::vector<SamplingRule>& rules,
                                            const std::vector<std::uint64_t>& seeds, GapTrialConfig cfg,
                                            int parallelism = 1) {
  struct Job {
    int n;
    SamplingRule rule;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int n : sizes)
    for (SamplingRule rule : rules)
      for (auto seed : seeds) jobs.push_back({n, rule, seed});
  std::vector<GapTrial> out(jobs.size());
  parallel_for(jobs.size(), parallelism, [&](std::size_t k) {
    GapTrialConfig c = cfg;
    c.rule = jobs[k].rule;
    out[k] = run_gap_trial(gen, jobs[k].n, jobs[k].seed, c);
  });
  return out;
}

inline std::string gap_csv(const std::vector<GapTrial>& trials) {
  std::ostringstream out;
  out.precision(12);
  out << "N,rule,seed,gap,bound,empirical_C,empirical_q\n";
  for (const auto& t : trials)
    out << t.n << ',' << to_string(t.rule) << ',' << t.seed << ',' << t.gap << ',' << t.bound << ','
        << t.empirical_c << ',' << t.q_effective << '\n';
  return out.str();
}

struct GapSummaryRow {
  int n = 0;
  SamplingRule rule = SamplingRule::threshold;
  double mean_gap = 0.0;
  double mean_bound = 0.0;
  double violation_fraction = 0.0;
  int trials = 0;
};

inline std::vector<GapSummaryRow> summarize_gaps(const std::vector<GapTrial>& trials) {
  std::vector<GapSummaryRow> rows;
  for (const auto& t : trials) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const GapSummaryRow& r) { return r.n == t.n && r.rule == t.rule; });
    if (it == rows.end()) {
      rows.push_back({t.n, t.rule});
      it = rows.end() - 1;
    }
    it->mean_gap += t.gap;
    it->mean_bound += t.bound;
    it->violation_fraction += t.gap > t.bound ? 1.0 : 0.0;
    ++it->trials;
  }
  for (auto& r : rows) {
    r.mean_gap /= r.trials;
    r.mean_bound /= r.trials;
    r.violation_fraction /= r.trials;
  }
  return rows;
}

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("slope needs >= 2 matching points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace act
