#pragma once

// Per-beam surrogate losses over neighbor scores s and costs c, with
// subgradients with respect to s. All math is in double precision.
//
// Notation in comments: top = sigma_hat[0], last = sigma_hat[k-1] (k clamped
// to n), best = sigma_star[0] (the lowest-cost neighbor).

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "beamtrain/beam.hpp"
#include "beamtrain/errors.hpp"

namespace beamtrain {

enum class LossKind {
  PerceptronFirst,
  PerceptronLast,
  MarginLast,
  CostSensitiveMarginLast,
  LogLossNeighbors,
  LogLossBeam,
};

inline constexpr LossKind kAllLossKinds[] = {
    LossKind::PerceptronFirst,         LossKind::PerceptronLast,   LossKind::MarginLast,
    LossKind::CostSensitiveMarginLast, LossKind::LogLossNeighbors, LossKind::LogLossBeam,
};

inline std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::PerceptronFirst: return "perceptron_first";
    case LossKind::PerceptronLast: return "perceptron_last";
    case LossKind::MarginLast: return "margin_last";
    case LossKind::CostSensitiveMarginLast: return "cost_margin_last";
    case LossKind::LogLossNeighbors: return "log_neighbors";
    case LossKind::LogLossBeam: return "log_beam";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view name) {
  for (LossKind k : kAllLossKinds) {
    if (to_string(k) == name) return k;
  }
  throw UsageError("unknown loss '" + std::string(name) + "'");
}

struct LossEval {
  double value = 0.0;
  std::vector<double> grad;
};

struct LossOptions {
  /// Margin losses: when the best neighbor is itself inside the top k, compare
  /// against the k-th ranked neighbor other than it. Off means the literal formula.
  bool margin_skip_gold = false;
};

/// Score and cost orderings of a neighbor vector.
struct Ranking {
  std::vector<std::size_t> sigma_hat;
  std::vector<std::size_t> sigma_star;

  static Ranking of(std::span<const double> s, std::span<const int> c) {
    return {score_order(s), cost_order(c, s)};
  }
};

namespace detail {

inline void check_inputs(std::span<const double> s, std::span<const int> c, std::size_t k) {
  require(!s.empty(), "loss needs at least one neighbor");
  require(s.size() == c.size(), "loss: score/cost size mismatch");
  require(k >= 1, "loss: beam size must be >= 1");
  for (double v : s) {
    if (!std::isfinite(v)) throw NumericError("non-finite score in loss");
  }
}

inline std::size_t clamp_k(std::size_t k, std::size_t n) { return std::min(k, n); }

inline std::size_t last_in_beam(const Ranking& r, std::size_t k, bool skip_gold) {
  const std::size_t n = r.sigma_hat.size();
  k = clamp_k(k, n);
  if (!skip_gold) return r.sigma_hat[k - 1];
  const std::size_t best = r.sigma_star[0];
  std::size_t seen = 0;
  std::size_t fallback = r.sigma_hat[k - 1];
  for (std::size_t i : r.sigma_hat) {
    if (i == best) continue;
    fallback = i;
    if (++seen == k) return i;
  }
  return fallback;
}

/// max(0, weight * (s[a] - s[b] + margin)) with its subgradient.
inline LossEval pairwise_hinge(std::span<const double> s, std::size_t a, std::size_t b, double margin,
                               double weight) {
  LossEval out;
  out.grad.assign(s.size(), 0.0);
  const double slack = s[a] - s[b] + margin;
  if (slack <= 0.0) return out;
  out.value = weight * slack;
  if (a != b) {
    out.grad[a] += weight;
    out.grad[b] -= weight;
  }
  return out;
}

/// -s[best] + log sum_{i in subset} exp(s[i]), gradient softmax(subset) - onehot(best).
inline LossEval log_loss_over(std::span<const double> s, std::span<const std::size_t> subset, std::size_t best) {
  LossEval out;
  out.grad.assign(s.size(), 0.0);
  double mx = -INFINITY;
  for (std::size_t i : subset) mx = std::max(mx, s[i]);
  double z = 0.0;
  for (std::size_t i : subset) z += std::exp(s[i] - mx);
  const double lse = mx + std::log(z);
  out.value = std::max(0.0, lse - s[best]);
  for (std::size_t i : subset) out.grad[i] += std::exp(s[i] - lse);
  out.grad[best] -= 1.0;
  return out;
}

}  // namespace detail

inline LossEval perceptron_first(std::span<const double> s, std::span<const int> c, const Ranking& r, std::size_t k) {
  detail::check_inputs(s, c, k);
  return detail::pairwise_hinge(s, r.sigma_hat[0], r.sigma_star[0], 0.0, 1.0);
}

inline LossEval perceptron_last(std::span<const double> s, std::span<const int> c, const Ranking& r, std::size_t k) {
  detail::check_inputs(s, c, k);
  return detail::pairwise_hinge(s, detail::last_in_beam(r, k, false), r.sigma_star[0], 0.0, 1.0);
}

inline LossEval margin_last(std::span<const double> s, std::span<const int> c, const Ranking& r, std::size_t k,
                            const LossOptions& opts = {}) {
  detail::check_inputs(s, c, k);
  return detail::pairwise_hinge(s, detail::last_in_beam(r, k, opts.margin_skip_gold), r.sigma_star[0], 1.0, 1.0);
}

/// Margin loss scaled by the (constant) cost gap between `last` and `best`.
inline LossEval cost_margin_last(std::span<const double> s, std::span<const int> c, const Ranking& r, std::size_t k,
                                 const LossOptions& opts = {}) {
  detail::check_inputs(s, c, k);
  const std::size_t last = detail::last_in_beam(r, k, opts.margin_skip_gold);
  const std::size_t best = r.sigma_star[0];
  const double weight = static_cast<double>(c[last] - c[best]);
  if (weight <= 0.0) return {0.0, std::vector<double>(s.size(), 0.0)};
  return detail::pairwise_hinge(s, last, best, 1.0, weight);
}

inline LossEval log_loss_neighbors(std::span<const double> s, std::span<const int> c, const Ranking& r,
                                   std::size_t k) {
  detail::check_inputs(s, c, k);
  std::vector<std::size_t> all(s.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return detail::log_loss_over(s, all, r.sigma_star[0]);
}

/// Log loss normalized over the best neighbor and the top-k neighbors only.
inline LossEval log_loss_beam(std::span<const double> s, std::span<const int> c, const Ranking& r, std::size_t k) {
  detail::check_inputs(s, c, k);
  const std::size_t best = r.sigma_star[0];
  std::vector<std::size_t> subset{best};
  for (std::size_t j = 0; j < detail::clamp_k(k, s.size()); ++j) {
    if (r.sigma_hat[j] != best) subset.push_back(r.sigma_hat[j]);
  }
  return detail::log_loss_over(s, subset, best);
}

inline LossEval evaluate_loss(LossKind kind, std::span<const double> s, std::span<const int> c, const Ranking& r,
                              std::size_t k, const LossOptions& opts = {}) {
  switch (kind) {
    case LossKind::PerceptronFirst: return perceptron_first(s, c, r, k);
    case LossKind::PerceptronLast: return perceptron_last(s, c, r, k);
    case LossKind::MarginLast: return margin_last(s, c, r, k, opts);
    case LossKind::CostSensitiveMarginLast: return cost_margin_last(s, c, r, k, opts);
    case LossKind::LogLossNeighbors: return log_loss_neighbors(s, c, r, k);
    case LossKind::LogLossBeam: return log_loss_beam(s, c, r, k);
  }
  throw ContractViolation("unhandled loss kind");
}

/// Convenience overload that ranks (s, c) itself.
inline LossEval evaluate_loss(LossKind kind, std::span<const double> s, std::span<const int> c, std::size_t k,
                              const LossOptions& opts = {}) {
  detail::check_inputs(s, c, k);
  return evaluate_loss(kind, s, c, Ranking::of(s, c), k, opts);
}

}  // namespace beamtrain
