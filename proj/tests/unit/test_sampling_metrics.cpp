#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "helpers.hpp"

using namespace act;

namespace {

std::vector<double> uniform_eps(int n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = u(g);
  return v;
}

int sum(const std::vector<int>& v) { return std::accumulate(v.begin(), v.end(), 0); }

}  // namespace

// ---- transforms ----

TEST(Normalization, Examples) {
  EXPECT_EQ(transform_normalization(std::vector{0.5, 0.3, 0.2}, 1), (std::vector{0.5, 0.3, 0.2}));
  const auto pi = transform_normalization(std::vector{0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(pi[0], 1.0);
  EXPECT_NEAR(pi[1], 0.3, 1e-15);
  EXPECT_NEAR(pi[2], 0.3, 1e-15);
  EXPECT_EQ(transform_normalization(std::vector{0.0, 0.0, 0.0, 0.0}, 2), (std::vector{0.5, 0.5, 0.5, 0.5}));
}

TEST(Exponential, SigmoidCenter) {
  const std::vector<double> eps{0.1, 0.4, 0.9};
  const auto pi = exponential_pi(eps, 0.4, 25.0);
  EXPECT_EQ(pi[1], 0.5);
}

TEST(Exponential, BisectionHitsBudget) {
  const auto eps = uniform_eps(1000, 3);
  const auto t = transform_exponential(eps, 100, 100.0);
  const double mass = std::accumulate(t.pi.begin(), t.pi.end(), 0.0);
  EXPECT_GE(mass, 99.5);
  EXPECT_LE(mass, 100.5);
  EXPECT_GE(t.alpha, 0.0);
  EXPECT_LE(t.alpha, 1.0);
}

TEST(Exponential, Monotone) {
  const auto eps = uniform_eps(300, 4);
  for (auto pi : {transform_exponential(eps, 40, 10.0).pi, transform_normalization(eps, 40)})
    for (std::size_t i = 0; i < eps.size(); ++i)
      for (std::size_t j = 0; j < eps.size(); ++j)
        if (eps[i] >= eps[j]) ASSERT_GE(pi[i], pi[j]);
}

TEST(Exponential, SaturatedFallsBackToHardCap) {
  // Every eps equals 1: even alpha = 1 gives pi = 0.5 for all N items.
  const std::vector<double> eps(10, 1.0);
  const auto plan = plan_sampling(eps, {SamplingRule::exponential, 2, 10.0, SamplingMode::expectation, 1});
  EXPECT_TRUE(plan.saturated);
  EXPECT_LE(plan.selected(), 2);
}

TEST(Threshold, TopB) {
  const auto t = transform_threshold(std::vector{0.9, 0.7, 0.2, 0.1}, 2, 42);
  EXPECT_EQ(t.pi, (std::vector{1.0, 1.0, 0.0, 0.0}));
  EXPECT_EQ(t.tau, 0.7);
}

TEST(Threshold, TiesBrokenBySeed) {
  std::set<std::size_t> chosen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto t = transform_threshold(std::vector{0.5, 0.5, 0.5}, 1, seed);
    ASSERT_EQ(std::count(t.pi.begin(), t.pi.end(), 1.0), 1);
    chosen.insert(static_cast<std::size_t>(std::find(t.pi.begin(), t.pi.end(), 1.0) - t.pi.begin()));
    EXPECT_EQ(t.pi, transform_threshold(std::vector{0.5, 0.5, 0.5}, 1, seed).pi);
  }
  EXPECT_EQ(chosen.size(), 3u);
}

TEST(Threshold, ZeroBudget) {
  const auto t = transform_threshold(std::vector{0.3, 0.9}, 0, 1);
  EXPECT_EQ(t.pi, (std::vector{0.0, 0.0}));
  EXPECT_FALSE(t.tau);
}

TEST(Threshold, NestedAcrossBudgets) {
  std::vector<double> eps(200);
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<double>(i % 7) / 7.0;
  auto prev = transform_threshold(eps, 0, 9).pi;
  for (int b = 1; b <= 200; ++b) {
    const auto cur = transform_threshold(eps, b, 9).pi;
    for (std::size_t i = 0; i < eps.size(); ++i) ASSERT_GE(cur[i], prev[i]);
    prev = cur;
  }
}

// ---- draws ----

TEST(Draws, DegenerateProbabilities) {
  EXPECT_EQ(sum(draw_indicators(std::vector<double>(50, 0.0), 10, 1, SamplingMode::expectation)), 0);
  EXPECT_EQ(sum(draw_indicators(std::vector<double>(50, 1.0), 50, 1, SamplingMode::hard_cap)), 50);
}

TEST(Draws, BinomialCount) {
  const auto d = draw_indicators(std::vector<double>(10000, 0.5), 10000, 77, SamplingMode::expectation);
  EXPECT_NEAR(sum(d), 5000, 150);
}

TEST(Draws, HardCapKeepsHighestPriority) {
  const std::vector<double> pi(100, 0.9);
  std::vector<double> prio(100);
  std::iota(prio.begin(), prio.end(), 0.0);
  const auto d = draw_indicators(pi, 10, 5, SamplingMode::hard_cap, prio);
  EXPECT_EQ(sum(d), 10);
  const auto full = draw_indicators(pi, 100, 5, SamplingMode::expectation);
  // Kept items are the 10 highest-priority ones among those drawn.
  std::vector<int> drawn;
  for (int i = 99; i >= 0; --i)
    if (full[static_cast<std::size_t>(i)]) drawn.push_back(i);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(d[static_cast<std::size_t>(drawn[static_cast<std::size_t>(k)])], 1);
}

TEST(Draws, SerialAndParallelAgree) {
  const auto eps = uniform_eps(500, 8);
  const auto pi = transform_normalization(eps, 50);
  const auto ref = draw_indicators(pi, 50, 3, SamplingMode::expectation);
  std::vector<std::vector<int>> outs(4);
  parallel_for(4, 4, [&](std::size_t k) { outs[k] = draw_indicators(pi, 50, 3, SamplingMode::expectation); });
  for (const auto& o : outs) EXPECT_EQ(o, ref);
}

TEST(Draws, BudgetSafetyProperty) {
  std::mt19937_64 g(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(g() % 60);
    const int b = static_cast<int>(g() % static_cast<std::uint64_t>(n + 1));
    const auto eps = uniform_eps(n, g());
    for (auto rule : {SamplingRule::normalization, SamplingRule::exponential, SamplingRule::threshold}) {
      const auto plan = plan_sampling(eps, {rule, b, 10.0, SamplingMode::hard_cap, g()});
      ASSERT_LE(plan.selected(), b);
      for (std::size_t i = 0; i < eps.size(); ++i)
        if (plan.delta[i]) ASSERT_GT(plan.pi[i], 0.0);
    }
    const auto t = plan_sampling(eps, {SamplingRule::threshold, b, 10.0, SamplingMode::expectation, g()});
    ASSERT_EQ(t.selected(), b);
  }
}

// ---- perplexity priority ----

namespace {

CriticismRecord ppl(int id, Decision d, double p) {
  CriticismRecord r;
  r.item_id = id;
  r.strategy = CriticStrategy::cot_ppl;
  r.decision = d;
  r.perplexity = p;
  r.reasoning = "";
  return r;
}

}  // namespace

TEST(PplPriority, Order) {
  const std::vector<CriticismRecord> rs{ppl(0, Decision::yes, 2.0), ppl(1, Decision::yes, 9.0),
                                        ppl(2, Decision::no, 9.0), ppl(3, Decision::no, 2.0)};
  EXPECT_EQ(ppl_priority_order(rs, 2), (std::vector{1, 1, 0, 0}));
  EXPECT_EQ(ppl_priority_order(rs, 3), (std::vector{1, 1, 1, 0}));
  EXPECT_EQ(ppl_priority_order(rs, 0), (std::vector{0, 0, 0, 0}));
  EXPECT_EQ(ppl_priority_order(rs, 1), (std::vector{1, 0, 0, 0}));
}

TEST(PplPriority, MixedStrategiesRejected) {
  std::vector<CriticismRecord> rs{ppl(0, Decision::yes, 2.0)};
  CriticismRecord other;
  other.item_id = 1;
  other.error_probability = 0.3;
  rs.push_back(other);
  EXPECT_THROW(ppl_priority_order(rs, 1), PreconditionError);
}

TEST(SamplingPlan, JsonRoundTrip) {
  const auto eps = uniform_eps(30, 1);
  const auto plan = plan_sampling(eps, {SamplingRule::exponential, 5, 100.0, SamplingMode::hard_cap, 3});
  EXPECT_EQ(json(plan).get<SamplingPlan>(), plan);
}

// ---- quality, AQG, ABS ----

TEST(Quality, Examples) {
  const std::vector<Label> a{1, 2, 3, 4}, b{1, 2, 0, 0}, c{0, 0, 0, 0}, d{5, 6, 7, 8};
  EXPECT_EQ(quality(a, a), 1.0);
  EXPECT_EQ(quality(a, b), 0.5);
  EXPECT_EQ(quality(a, d), 0.0);
  EXPECT_EQ(quality(a, c), quality(c, a));
  EXPECT_THROW(quality(a, std::vector<Label>{1}), PreconditionError);
}

TEST(Aqg, Examples) {
  // Q(h,m) = 0.8, Q(h,corrected) = 0.95 over 20 items.
  std::vector<Label> h(20, 0), m(20, 0), c(20, 0);
  for (int i = 0; i < 4; ++i) m[static_cast<std::size_t>(i)] = 1;
  c = m;
  for (int i = 0; i < 3; ++i) c[static_cast<std::size_t>(i)] = 0;
  EXPECT_DOUBLE_EQ(aqg(h, m, c).value, 0.75);
  EXPECT_EQ(aqg(h, m, m).value, 0.0);
  const auto deg = aqg(h, h, h);
  EXPECT_EQ(deg.value, 1.0);
  EXPECT_TRUE(deg.degenerate);
}

TEST(Abs, PerfectCriticizerClosedForm) {
  std::mt19937_64 g(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 20;
    std::vector<Label> h(n), m(n);
    std::vector<double> eps(n);
    int errors = 0;
    for (int i = 0; i < n; ++i) {
      h[static_cast<std::size_t>(i)] = static_cast<Label>(g() % 3);
      const bool wrong = g() % 4 == 0;
      m[static_cast<std::size_t>(i)] = wrong ? (h[static_cast<std::size_t>(i)] + 1) % 3 : h[static_cast<std::size_t>(i)];
      eps[static_cast<std::size_t>(i)] = wrong ? 1.0 : 0.0;
      errors += wrong;
    }
    if (errors == 0) continue;
    AbsOptions opt;
    opt.seed = g();
    const auto curve = abs_metric(h, m, eps, opt);
    ASSERT_EQ(curve.points.size(), static_cast<std::size_t>(n + 1));
    double expect_abs = 0;
    for (int b = 0; b <= n; ++b) {
      const double want = std::min(1.0, static_cast<double>(b) / errors);
      EXPECT_EQ(curve.points[static_cast<std::size_t>(b)].aqg, want);
      expect_abs += want;
    }
    EXPECT_NEAR(curve.abs, expect_abs / n, 1e-12);
  }
}

TEST(Abs, MachineEqualsHuman) {
  const std::vector<Label> h{0, 1, 2, 0, 1};
  const auto curve = abs_metric(h, h, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
  for (const auto& p : curve.points) EXPECT_TRUE(p.degenerate);
  EXPECT_NEAR(curve.abs, 6.0 / 5.0, 1e-12);  // (1/N) sum over N + 1 budgets of AQG = 1
}

TEST(Abs, MonotoneUnderThreshold) {
  const auto ds = testutil::text_dataset(300, 4);
  SimulatorConfig cfg;
  const auto a = simulate_annotator(ds, cfg);
  const auto c = simulate_criticizer(a, ds, cfg);
  std::vector<Label> h, m;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    h.push_back(*ds[i].hidden_truth);
    m.push_back(a[i].machine_label);
  }
  const auto curve = abs_metric(h, m, std::span<const CriticismRecord>(c));
  EXPECT_EQ(curve.points.front().aqg, 0.0);
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    EXPECT_GE(curve.points[k].aqg, curve.points[k - 1].aqg);
    EXPECT_LE(curve.points[k].aqg, 1.0);
  }
}

TEST(Abs, PerfectBeatsAnyCriticizerBruteForce) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 12;
    std::vector<Label> h(n), m(n);
    std::vector<double> perfect(n), other(n);
    for (int i = 0; i < n; ++i) {
      h[static_cast<std::size_t>(i)] = 0;
      m[static_cast<std::size_t>(i)] = g() % 3 == 0 ? 1 : 0;
      perfect[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] != 0 ? 1.0 : 0.0;
      other[static_cast<std::size_t>(i)] = u(g);
    }
    for (auto rule : {SamplingRule::threshold}) {
      AbsOptions opt;
      opt.rule = rule;
      EXPECT_GE(abs_metric(h, m, perfect, opt).abs + 1e-12, abs_metric(h, m, other, opt).abs);
    }
  }
}

TEST(Abs, StrideGrid) {
  const auto grid = budget_grid(10000);
  EXPECT_LE(grid.size(), 2001u);
  EXPECT_EQ(grid.front(), 0);
  EXPECT_EQ(grid.back(), 10000);
  EXPECT_EQ(budget_grid(2000).size(), 2001u);
}

TEST(Abs, CsvColumns) {
  const std::vector<Label> h{0, 1}, m{0, 0};
  const auto csv = abs_metric(h, m, std::vector<double>{0.1, 0.9}).to_csv();
  EXPECT_EQ(csv.substr(0, 8), "b,B,AQG\n");
  EXPECT_NE(csv.find("0.5,1,1"), std::string::npos) << csv;
}

TEST(Stability, DeterministicHasZeroStd) {
  const auto s = stability_runs([](std::uint64_t) { return std::map<std::string, double>{{"x", 0.3}}; }, 5);
  EXPECT_EQ(s.at("x").std, 0.0);
  EXPECT_EQ(s.at("x").mean, 0.3);
}

TEST(Stability, SimulatedAccuracy) {
  const auto ds = testutil::text_dataset(10000, 10);
  const auto s = stability_runs(
      [&](std::uint64_t seed) {
        SimulatorConfig cfg;
        cfg.seed = seed;
        const auto a = simulate_annotator(ds, cfg);
        int ok = 0;
        for (std::size_t i = 0; i < a.size(); ++i) ok += a[i].machine_label == ds[i].hidden_truth;
        return std::map<std::string, double>{{"accuracy", ok / 10000.0}};
      },
      5);
  EXPECT_LT(s.at("accuracy").std, 0.02);
  EXPECT_NEAR(s.at("accuracy").mean, 0.8, 0.01);
}

TEST(Stability, NeedsTwoRuns) {
  EXPECT_THROW(stability_runs([](std::uint64_t) { return std::map<std::string, double>{}; }, 1),
               PreconditionError);
}
