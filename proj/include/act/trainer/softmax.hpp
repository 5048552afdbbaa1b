#pragma once

// Multinomial logistic regression with an L2 penalty on all parameters,
// trained by gradient descent under any of the loss selections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "act/core/jsonl.hpp"
#include "act/core/types.hpp"
#include "act/error.hpp"
#include "act/loss/act_loss.hpp"
#include "act/rng.hpp"

namespace act {

struct ModelParams {
  Eigen::MatrixXd weights;  // classes x features
  Eigen::VectorXd bias;     // classes

  static ModelParams zeros(int classes, int features) {
    return {Eigen::MatrixXd::Zero(classes, features), Eigen::VectorXd::Zero(classes)};
  }

  int classes() const { return static_cast<int>(weights.rows()); }
  int features() const { return static_cast<int>(weights.cols()); }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(weights.size() + bias.size());
    v << Eigen::Map<const Eigen::VectorXd>(weights.data(), weights.size()), bias;
    return v;
  }

  bool finite() const { return weights.allFinite() && bias.allFinite(); }

  bool operator==(const ModelParams& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           bias.size() == o.bias.size() && weights == o.weights && bias == o.bias;
  }
};

inline void to_json(json& j, const ModelParams& m) {
  std::vector<std::vector<double>> w(static_cast<std::size_t>(m.classes()));
  for (int k = 0; k < m.classes(); ++k)
    for (int d = 0; d < m.features(); ++d) w[static_cast<std::size_t>(k)].push_back(m.weights(k, d));
  j = json{{"schema_version", kSchemaVersion},
           {"classes", m.classes()},
           {"features", m.features()},
           {"weights", w},
           {"bias", std::vector<double>(m.bias.data(), m.bias.data() + m.bias.size())}};
}

inline void from_json(const json& j, ModelParams& m) {
  const int k = j.at("classes").get<int>();
  const int d = j.at("features").get<int>();
  m = ModelParams::zeros(k, d);
  const auto w = j.at("weights").get<std::vector<std::vector<double>>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  if (static_cast<int>(w.size()) != k || static_cast<int>(b.size()) != k)
    throw ParseError("model shape does not match its class count");
  for (int r = 0; r < k; ++r) {
    if (static_cast<int>(w[static_cast<std::size_t>(r)].size()) != d)
      throw ParseError("model weight row has the wrong length");
    for (int c = 0; c < d; ++c) m.weights(r, c) = w[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    m.bias(r) = b[static_cast<std::size_t>(r)];
  }
}

/// Euclidean norm of the flattened parameter difference.
inline double parameter_gap(const ModelParams& a, const ModelParams& b) {
  if (a.weights.rows() != b.weights.rows() || a.weights.cols() != b.weights.cols() ||
      a.bias.size() != b.bias.size())
    throw PreconditionError("parameter shapes differ");
  return std::sqrt((a.weights - b.weights).squaredNorm() + (a.bias - b.bias).squaredNorm());
}

/// Feature vectors keyed by item id, typically from an embedding file.
using EmbeddingTable = std::map<int, std::vector<double>>;

/// Reads JSONL lines {"item_id": i, "features": [...]}.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  EmbeddingTable t;
  jsonl::for_each_line(path, [&](const json& j, std::size_t) {
    t[detail::item_id_of(j)] = j.at("features").get<std::vector<double>>();
  });
  return t;
}

/// The item's own feature vector, else its row in the embedding table.
inline std::vector<double> featurize(const Item& item, const EmbeddingTable* embeddings = nullptr) {
  if (!item.features.empty()) return item.features;
  if (embeddings)
    if (auto it = embeddings->find(item.id); it != embeddings->end()) return it->second;
  throw PreconditionError("item " + std::to_string(item.id) +
                          " has no features and no embedding was supplied");
}

inline Eigen::MatrixXd feature_matrix(const Dataset& ds, const EmbeddingTable* embeddings = nullptr) {
  Eigen::MatrixXd x;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto f = featurize(ds[i], embeddings);
    if (i == 0) x.resize(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(f.size()));
    if (static_cast<Eigen::Index>(f.size()) != x.cols())
      throw ValidationError("item " + std::to_string(ds[i].id) + " has " + std::to_string(f.size()) +
                            " features, expected " + std::to_string(x.cols()));
    for (std::size_t d = 0; d < f.size(); ++d) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = f[d];
  }
  return x;
}

/// Everything a loss selection might need, one row per example.
struct TrainingSet {
  Eigen::MatrixXd x;
  int classes = 0;
  /// True labels; kNoLabel where unknown (only allowed where unused).
  std::vector<Label> human;
  std::vector<Label> machine;
  /// Corrected labels: human where reviewed, machine elsewhere.
  std::vector<Label> final;
  std::vector<double> pi;
  std::vector<int> delta;
  std::vector<double> eps;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};

/// Builds a training set from a corrected dataset. True labels come from
/// reviews, then hidden_truth, else stay unknown.
inline TrainingSet training_set(const Dataset& ds, const CorrectedDataset& corrected,
                                const EmbeddingTable* embeddings = nullptr) {
  if (corrected.size() != ds.size()) throw PreconditionError("corrected dataset does not match dataset");
  TrainingSet t;
  t.x = feature_matrix(ds, embeddings);
  t.classes = static_cast<int>(ds[0].label_space.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& e = corrected.entries[i];
    t.human.push_back(e.human_label ? *e.human_label : ds[i].hidden_truth.value_or(kNoLabel));
    t.machine.push_back(e.machine_label);
    t.final.push_back(e.final_label);
    t.pi.push_back(e.pi.value_or(static_cast<double>(e.delta)));
    t.delta.push_back(e.delta);
    t.eps.push_back(e.error_probability.value_or(0.0));
  }
  return t;
}

enum class LossSelection { plain_human, plain_machine, corrected_mean, act };

NLOHMANN_JSON_SERIALIZE_ENUM(LossSelection, {{LossSelection::plain_human, "plain_human"},
                                             {LossSelection::plain_machine, "plain_machine"},
                                             {LossSelection::corrected_mean, "corrected_mean"},
                                             {LossSelection::act, "act"}})

struct TrainConfig {
  /// Step size; defaults to 1/L for the objective's smoothness constant L.
  std::optional<double> learning_rate;
  /// Full-batch steps, or passes over the data when batch_size > 0.
  int epochs = 500;
  /// L2 coefficient; the objective is l2-strongly convex.
  double l2 = 0.1;
  /// 0 = full batch. Mini-batches are shuffled from `seed`.
  int batch_size = 0;
  std::uint64_t seed = 42;
  LossSelection loss = LossSelection::corrected_mean;
  ActLossConfig act{};
  /// Stop early once the full-batch gradient norm drops to this value.
  double tolerance = 0.0;
  bool record_trajectory = false;
  std::optional<ModelParams> init;

  void validate() const {
    if (learning_rate && !(*learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (!(l2 >= 0.0)) throw ValidationError("l2 coefficient must be >= 0");
    if (batch_size < 0) throw ValidationError("batch size must be >= 0");
    if (loss == LossSelection::act) act.validate();
  }
};

struct TrainResult {
  ModelParams params;
  /// Objective before the first step and after each step (or epoch).
  std::vector<double> objective;
  std::vector<ModelParams> trajectory;
  int steps = 0;
  double gradient_norm = 0.0;
  /// Full-batch objective never increased (1e-12 relative slack).
  bool monotone = true;
  double learning_rate = 0.0;
};

/// Each example's loss terms as (label, weight) pairs; the objective is
/// (1/N) sum_i sum_terms w (lse(z_i) - z_i[label]) + l2/2 |theta|^2.
struct WeightedTerms {
  std::vector<Label> label_a, label_b;
  std::vector<double> weight_a, weight_b;
};

namespace detail {

inline void require_labels(const std::vector<Label>& labels, const std::vector<double>& w, int classes,
                           const char* what) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (w[i] != 0.0 && (labels[i] < 0 || labels[i] >= classes))
      throw PreconditionError(std::string(what) + " label missing or out of range for example " +
                              std::to_string(i));
}

}  // namespace detail

inline std::vector<LossSample> loss_samples(const TrainingSet& t, std::span<const double> loss,
                                            std::span<const double> machine_loss) {
  std::vector<LossSample> s(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    s[i] = {static_cast<int>(i), loss.empty() ? 0.0 : loss[i], machine_loss.empty() ? 0.0 : machine_loss[i],
            t.pi[i], t.delta[i], t.eps[i]};
  return s;
}

inline WeightedTerms loss_terms(const TrainingSet& t, const TrainConfig& cfg) {
  const std::size_t n = t.size();
  WeightedTerms w;
  w.label_a.assign(n, kNoLabel);
  w.label_b.assign(n, kNoLabel);
  w.weight_a.assign(n, 0.0);
  w.weight_b.assign(n, 0.0);
  switch (cfg.loss) {
    case LossSelection::plain_human:
      w.label_a = t.human;
      w.weight_a.assign(n, 1.0);
      break;
    case LossSelection::plain_machine:
      w.label_a = t.machine;
      w.weight_a.assign(n, 1.0);
      break;
    case LossSelection::corrected_mean:
      w.label_a = t.final;
      w.weight_a.assign(n, 1.0);
      break;
    case LossSelection::act: {
      const auto aw = act_weights(loss_samples(t, {}, {}), cfg.act);
      w.label_a = t.machine;
      w.weight_a = aw.machine;
      w.label_b = t.human;
      w.weight_b = aw.human;
      break;
    }
  }
  detail::require_labels(w.label_a, w.weight_a, t.classes, "training");
  detail::require_labels(w.label_b, w.weight_b, t.classes, "human");
  return w;
}

/// Objective value and gradient for the examples in `rows` (all when empty).
class SoftmaxObjective {
 public:
  SoftmaxObjective(const TrainingSet& t, WeightedTerms terms, double l2)
      : t_(&t), w_(std::move(terms)), l2_(l2) {
    xt_.resize(t.x.rows(), t.x.cols() + 1);
    xt_ << t.x, Eigen::VectorXd::Ones(t.x.rows());
  }

  /// Smoothness constant: l2 + 0.5 * lambda_max((1/N) sum s_i x_i x_i^T)
  /// over the bias-augmented features, with s_i the example's total weight.
  double smoothness() const {
    const Eigen::Index n = xt_.rows();
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i)
      s(i) = std::abs(w_.weight_a[static_cast<std::size_t>(i)] + w_.weight_b[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd m = xt_.transpose() * s.asDiagonal() * xt_ / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return l2_ + 0.5 * es.eigenvalues().maxCoeff();
  }

  double evaluate(const ModelParams& p, ModelParams* grad, std::span<const Eigen::Index> rows = {}) const {
    const Eigen::Index n = rows.empty() ? xt_.rows() : static_cast<Eigen::Index>(rows.size());
    const int k = p.classes();
    Eigen::MatrixXd xs;
    const Eigen::MatrixXd* xp = &xt_;
    if (!rows.empty()) {
      xs.resize(n, xt_.cols());
      for (Eigen::Index r = 0; r < n; ++r) xs.row(r) = xt_.row(rows[static_cast<std::size_t>(r)]);
      xp = &xs;
    }
    Eigen::MatrixXd theta(k, xt_.cols());
    theta << p.weights, p.bias;
    Eigen::MatrixXd z = *xp * theta.transpose();  // n x k
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, k);
    double total = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto i = static_cast<std::size_t>(rows.empty() ? r : rows[static_cast<std::size_t>(r)]);
      const double mx = z.row(r).maxCoeff();
      Eigen::RowVectorXd e = (z.row(r).array() - mx).exp();
      const double se = e.sum();
      const double lse = mx + std::log(se);
      e /= se;
      double s = 0.0;
      if (w_.weight_a[i] != 0.0) {
        const double wa = w_.weight_a[i];
        total += wa * (lse - z(r, w_.label_a[i]));
        s += wa;
        g(r, w_.label_a[i]) -= wa;
      }
      if (w_.weight_b[i] != 0.0) {
        const double wb = w_.weight_b[i];
        total += wb * (lse - z(r, w_.label_b[i]));
        s += wb;
        g(r, w_.label_b[i]) -= wb;
      }
      g.row(r) += s * e;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    const double reg = 0.5 * l2_ * (p.weights.squaredNorm() + p.bias.squaredNorm());
    if (grad) {
      const Eigen::MatrixXd gt = g.transpose() * *xp * inv_n;  // k x (d + 1)
      grad->weights = gt.leftCols(p.features()) + l2_ * p.weights;
      grad->bias = gt.col(p.features()) + l2_ * p.bias;
    }
    return total * inv_n + reg;
  }

 private:
  const TrainingSet* t_;
  WeightedTerms w_;
  double l2_;
  Eigen::MatrixXd xt_;
};

inline TrainResult train(const TrainingSet& t, const TrainConfig& cfg) {
  cfg.validate();
  if (t.size() == 0) throw PreconditionError("training set is empty");
  if (t.classes < 1) throw PreconditionError("training set has no classes");
  const SoftmaxObjective obj(t, loss_terms(t, cfg), cfg.l2);

  TrainResult res;
  res.params = cfg.init ? *cfg.init : ModelParams::zeros(t.classes, static_cast<int>(t.x.cols()));
  if (res.params.classes() != t.classes || res.params.features() != t.x.cols())
    throw PreconditionError("initial parameters do not match the training set");
  res.learning_rate = cfg.learning_rate ? *cfg.learning_rate : 1.0 / obj.smoothness();
  const double lr = res.learning_rate;
  if (cfg.record_trajectory) res.trajectory.push_back(res.params);

  ModelParams grad = res.params;
  double f = obj.evaluate(res.params, &grad);
  res.objective.push_back(f);
  res.gradient_norm = grad.flatten().norm();

  auto check = [&](double value, int step) {
    if (!std::isfinite(value) || !res.params.finite())
      throw DivergenceError("objective became non-finite at step " + std::to_string(step));
  };
  check(f, 0);

  auto eng = rng::engine(cfg.seed, 0, rng::Stream::resample);
  std::vector<Eigen::Index> order(t.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.tolerance > 0.0 && res.gradient_norm <= cfg.tolerance) break;
    if (cfg.batch_size == 0) {
      res.params.weights -= lr * grad.weights;
      res.params.bias -= lr * grad.bias;
    } else {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng::below(eng, i))]);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
        ModelParams g = res.params;
        obj.evaluate(res.params, &g, std::span<const Eigen::Index>(order.data() + start, len));
        res.params.weights -= lr * g.weights;
        res.params.bias -= lr * g.bias;
      }
    }
    ++res.steps;
    const double next = obj.evaluate(res.params, &grad);
    check(next, res.steps);
    if (next > f + 1e-12 * std::max(1.0, std::abs(f))) res.monotone = false;
    f = next;
    res.objective.push_back(f);
    res.gradient_norm = grad.flatten().norm();
    if (cfg.record_trajectory) res.trajectory.push_back(res.params);
  }
  return res;
}

/// Class probabilities, one row per example.
inline Eigen::MatrixXd predict_proba(const ModelParams& p, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = (x * p.weights.transpose()).rowwise() + p.bias.transpose();
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - mx).exp();
    z.row(r) /= z.row(r).sum();
  }
  return z;
}

inline std::vector<Label> predict(const ModelParams& p, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd pr = predict_proba(p, x);
  std::vector<Label> out(static_cast<std::size_t>(pr.rows()));
  for (Eigen::Index r = 0; r < pr.rows(); ++r) {
    Eigen::Index k = 0;
    pr.row(r).maxCoeff(&k);
    out[static_cast<std::size_t>(r)] = static_cast<Label>(k);
  }
  return out;
}

/// Cross-entropy of each example under `labels` (no penalty).
inline std::vector<double> per_example_loss(const ModelParams& p, const Eigen::MatrixXd& x,
                                            std::span<const Label> labels) {
  const Eigen::MatrixXd z = (x * p.weights.transpose()).rowwise() + p.bias.transpose();
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    out[static_cast<std::size_t>(r)] = lse - z(r, labels[static_cast<std::size_t>(r)]);
  }
  return out;
}

struct GapBoundParams {
  double mu = 0.1;
  double n = 1000;
  double q = 1.0;
  double c = 1.0;
  double p = 0.05;
};

struct GapBound {
  double bound = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;
  /// Smallest N for which the bound is claimed: 8 c0^2 log(2/p) / c1.
  double n_min = 0.0;
  bool valid = true;
};

/// sqrt(8 c1 log(2/p) / (mu^2 N)) with c1 = (1 - q) C^2 / q.
inline GapBound theory_bound(const GapBoundParams& g) {
  if (!(g.q > 0.0 && g.q <= 1.0)) throw PreconditionError("q must lie in (0, 1]");
  if (!(g.c >= 0.0)) throw PreconditionError("C must be >= 0");
  if (!(g.p > 0.0 && g.p < 1.0)) throw PreconditionError("p must lie in (0, 1)");
  if (!(g.mu > 0.0)) throw PreconditionError("mu must be > 0");
  if (!(g.n >= 1.0)) throw PreconditionError("N must be >= 1");
  GapBound out;
  const double log_term = std::log(2.0 / g.p);
  out.c1 = (1.0 - g.q) * g.c * g.c / g.q;
  out.c0 = std::max(1.0, (1.0 - g.q) / g.q) * g.c;
  out.bound = std::sqrt(8.0 * out.c1 * log_term / (g.mu * g.mu * g.n));
  out.n_min = out.c1 > 0.0 ? 8.0 * out.c0 * out.c0 * log_term / out.c1 : 0.0;
  out.valid = g.n >= out.n_min;
  return out;
}

}  // namespace act
