#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "act/backends/criticism.hpp"
#include "act/core/correction.hpp"
#include "act/core/types.hpp"
#include "act/error.hpp"
#include "act/parallel.hpp"
#include "act/sampling/plan.hpp"

namespace act {

enum class Similarity { exact_match };

struct QualityMeasure {
  Similarity kind = Similarity::exact_match;
  double q_min = 0.0;
  double q_max = 1.0;

  double similarity(Label a, Label b) const { return a == b ? q_max : q_min; }
};

namespace detail {

inline void check_lengths(std::size_t a, std::size_t b) {
  if (a != b)
    throw PreconditionError("label vectors differ in length (" + std::to_string(a) + " vs " +
                            std::to_string(b) + ")");
  if (a == 0) throw PreconditionError("label vectors are empty");
}

inline std::size_t agreements(std::span<const Label> a, std::span<const Label> b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] == b[i];
  return n;
}

}  // namespace detail

/// Mean similarity between two label vectors.
inline double quality(std::span<const Label> a, std::span<const Label> b, const QualityMeasure& m = {}) {
  detail::check_lengths(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += m.similarity(a[i], b[i]);
  return s / static_cast<double>(a.size());
}

struct AqgValue {
  double value = 0.0;
  /// Machine labels already had maximal quality; value is set to 1.
  bool degenerate = false;
};

/// Share of the machine labels' remaining quality headroom recovered by the
/// corrected labels. Exact-match quality is evaluated on integer counts so
/// ratios like B/E come out exact.
inline AqgValue aqg(std::span<const Label> human, std::span<const Label> machine,
                    std::span<const Label> corrected, const QualityMeasure& m = {}) {
  detail::check_lengths(human.size(), machine.size());
  detail::check_lengths(human.size(), corrected.size());
  if (m.kind == Similarity::exact_match && m.q_min == 0.0 && m.q_max == 1.0) {
    const auto n = human.size();
    const auto hm = detail::agreements(human, machine);
    const auto hc = detail::agreements(human, corrected);
    if (hm == n) return {1.0, true};
    return {(static_cast<double>(hc) - static_cast<double>(hm)) / static_cast<double>(n - hm), false};
  }
  const double qm = quality(human, machine, m);
  const double qc = quality(human, corrected, m);
  if (qm >= m.q_max) return {1.0, true};
  return {(qc - qm) / (m.q_max - qm), false};
}

struct CurvePoint {
  double b = 0.0;
  int budget = 0;
  double aqg = 0.0;
  bool degenerate = false;
};

struct BudgetCurve {
  std::vector<CurvePoint> points;
  int n = 0;
  int stride = 1;
  /// (1/N) * sum over B = 0..N of AQG(B); the stride grid is summed with
  /// trapezoid weights, which is exact when stride == 1.
  double abs = 0.0;
  /// Trapezoid integral of AQG over b in [0, 1], for comparison.
  double abs_integral = 0.0;

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "b,B,AQG\n";
    for (const auto& p : points) out << p.b << ',' << p.budget << ',' << p.aqg << '\n';
    return out.str();
  }
};

/// Budgets evaluated for a dataset of size n: every B up to 2000 items,
/// otherwise a stride keeping at most 2001 points, endpoints included.
inline std::vector<int> budget_grid(int n, int max_points = 2001) {
  if (n < 1) throw PreconditionError("budget grid needs n >= 1");
  const int stride = n + 1 <= max_points ? 1 : (n + max_points - 2) / (max_points - 1);
  std::vector<int> grid;
  for (int b = 0; b < n; b += stride) grid.push_back(b);
  grid.push_back(n);
  return grid;
}

struct AbsOptions {
  SamplingRule rule = SamplingRule::threshold;
  double beta = 10.0;
  SamplingMode mode = SamplingMode::hard_cap;
  std::uint64_t seed = 42;
  /// Grid cap; the default keeps every budget up to N = 2000.
  int max_points = 2001;
  int parallelism = 1;
  QualityMeasure measure{};
};

namespace detail {

inline void finish_curve(BudgetCurve& c) {
  const auto& p = c.points;
  double sum = 0.5 * (p.front().aqg + p.back().aqg);
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    const double w = static_cast<double>(p[k + 1].budget - p[k].budget);
    sum += 0.5 * (p[k].aqg + p[k + 1].aqg) * w;
    integral += 0.5 * (p[k].aqg + p[k + 1].aqg) * (p[k + 1].b - p[k].b);
  }
  c.abs = sum / static_cast<double>(c.n);
  c.abs_integral = integral;
}

}  // namespace detail

/// AQG over the budget grid and its area. `plan_for(B)` returns the review
/// indicators for budget B.
inline BudgetCurve budget_curve(std::span<const Label> human, std::span<const Label> machine,
                                const std::function<std::vector<int>(int)>& plan_for,
                                const AbsOptions& opt = {}) {
  detail::check_lengths(human.size(), machine.size());
  const int n = static_cast<int>(human.size());
  const auto grid = budget_grid(n, opt.max_points);
  BudgetCurve curve;
  curve.n = n;
  curve.stride = grid.size() > 1 ? grid[1] - grid[0] : 1;
  curve.points.resize(grid.size());
  parallel_for(grid.size(), opt.parallelism, [&](std::size_t k) {
    const int budget = grid[k];
    const auto delta = plan_for(budget);
    std::vector<Label> corrected(machine.begin(), machine.end());
    for (std::size_t i = 0; i < corrected.size(); ++i)
      if (delta[i]) corrected[i] = human[i];
    const auto v = aqg(human, machine, corrected, opt.measure);
    curve.points[k] = {static_cast<double>(budget) / n, budget, v.value, v.degenerate};
  });
  detail::finish_curve(curve);
  return curve;
}

/// Area under budget sensitivity for error probabilities `eps`. Every budget
/// uses the same seed, so threshold selections are nested across budgets.
inline BudgetCurve abs_metric(std::span<const Label> human, std::span<const Label> machine,
                              std::span<const double> eps, const AbsOptions& opt = {}) {
  if (eps.size() != human.size()) throw PreconditionError("error probabilities do not match labels");
  return budget_curve(human, machine, [&](int budget) {
    return plan_sampling(eps, SamplingOptions{opt.rule, budget, opt.beta, opt.mode, opt.seed}).delta;
  }, opt);
}

inline BudgetCurve abs_metric(std::span<const Label> human, std::span<const Label> machine,
                              std::span<const CriticismRecord> criticisms, const AbsOptions& opt = {}) {
  if (criticisms.size() != human.size()) throw PreconditionError("criticisms do not match labels");
  return budget_curve(human, machine, [&](int budget) {
    return plan_sampling(criticisms, SamplingOptions{opt.rule, budget, opt.beta, opt.mode, opt.seed}).delta;
  }, opt);
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> values;
};

/// Repeats `experiment(seed)` and reports mean and sample standard deviation
/// (n - 1 denominator) of each named metric.
inline std::map<std::string, Summary> stability_runs(
    const std::function<std::map<std::string, double>(std::uint64_t)>& experiment, int n_runs,
    std::vector<std::uint64_t> seeds = {}) {
  if (n_runs < 2) throw PreconditionError("stability runs need n_runs >= 2");
  if (seeds.empty())
    for (int k = 0; k < n_runs; ++k) seeds.push_back(42 + static_cast<std::uint64_t>(k));
  if (seeds.size() != static_cast<std::size_t>(n_runs))
    throw PreconditionError("need exactly one seed per run");
  std::map<std::string, Summary> out;
  for (auto seed : seeds)
    for (const auto& [name, v] : experiment(seed)) out[name].values.push_back(v);
  for (auto& [name, s] : out) {
    if (s.values.size() != seeds.size())
      throw PreconditionError("metric '" + name + "' missing from some runs");
    const double n = static_cast<double>(s.values.size());
    if (std::adjacent_find(s.values.begin(), s.values.end(), std::not_equal_to<>()) == s.values.end()) {
      s.mean = s.values.front();
      s.std = 0.0;
      continue;
    }
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

}  // namespace act
