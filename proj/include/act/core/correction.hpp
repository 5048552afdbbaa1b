#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "act/core/types.hpp"
#include "act/error.hpp"

namespace act {

/// Sampling-plan values copied onto the corrected dataset for the loss.
struct CarryForward {
  std::vector<double> pi;
  std::vector<double> error_probability;
};

/// Human-correction operator: item i keeps its machine label when
/// delta[i] == 0 and takes the reviewer's label when delta[i] == 1.
/// Reviews for items with delta == 0 are ignored.
inline CorrectedDataset apply_correction(std::span<const AnnotationRecord> annotations,
                                         std::span<const int> delta,
                                         std::span<const ReviewRecord> reviews,
                                         const CarryForward* carry = nullptr) {
  const std::size_t n = annotations.size();
  if (delta.size() != n)
    throw PreconditionError("delta has length " + std::to_string(delta.size()) + ", expected " +
                            std::to_string(n));
  if (carry && ((!carry->pi.empty() && carry->pi.size() != n) ||
                (!carry->error_probability.empty() && carry->error_probability.size() != n)))
    throw PreconditionError("carried-forward vectors do not match dataset size");

  std::map<int, const ReviewRecord*> by_item;
  for (const auto& r : reviews) by_item.emplace(r.item_id, &r);

  std::vector<int> missing;
  CorrectedDataset out;
  out.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const AnnotationRecord& a = annotations[i];
    CorrectedEntry e;
    e.item_id = a.item_id;
    e.machine_label = a.machine_label;
    e.delta = delta[i];
    if (carry && !carry->pi.empty()) e.pi = carry->pi[i];
    if (carry && !carry->error_probability.empty())
      e.error_probability = carry->error_probability[i];
    auto it = by_item.find(a.item_id);
    if (delta[i] == 1) {
      if (it == by_item.end()) {
        missing.push_back(a.item_id);
        continue;
      }
      e.human_label = it->second->human_label;
      e.final_label = it->second->human_label;
      e.source = LabelSource::human;
    } else if (delta[i] == 0) {
      e.final_label = a.machine_label;
      e.source = LabelSource::machine;
    } else {
      throw PreconditionError("delta must be 0 or 1 (item " + std::to_string(a.item_id) + ")");
    }
    out.entries.push_back(std::move(e));
  }
  if (!missing.empty()) {
    std::string ids;
    for (std::size_t k = 0; k < missing.size(); ++k) {
      if (k) ids += ", ";
      ids += std::to_string(missing[k]);
    }
    throw PreconditionError("missing review for items with delta=1: " + ids);
  }
  return out;
}

/// Least budget that could fix every machine error, plus an optional buffer
/// fraction: ceil((1 - accuracy + buffer) * n), at most n.
inline int ideal_budget(double machine_accuracy, int n, double buffer = 0.0) {
  if (!(machine_accuracy >= 0.0 && machine_accuracy <= 1.0))
    throw PreconditionError("machine accuracy must lie in [0, 1]");
  if (buffer < 0.0) throw PreconditionError("buffer must be >= 0");
  if (n < 0) throw PreconditionError("n must be >= 0");
  const double raw = (1.0 - machine_accuracy + buffer) * static_cast<double>(n);
  // Absorb binary representation error: 0.1152 * 50000 lands a hair below
  // 5760 and must not round up to 5761 when it lands a hair above.
  const double b = std::ceil(raw - 1e-9 * std::max(1.0, static_cast<double>(n)));
  return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(n)));
}

/// Budget count for a proportion, rounded down.
inline int budget_from_proportion(double b, int n) {
  if (!(b >= 0.0 && b <= 1.0)) throw PreconditionError("budget proportion must lie in [0, 1]");
  return static_cast<int>(std::floor(b * static_cast<double>(n) + 1e-9));
}

}  // namespace act
