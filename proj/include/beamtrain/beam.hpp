#pragma once

// Beam search space: beams, neighbor expansion, the score and cost
// orderings over neighbors, successor beams, and beam costs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "beamtrain/errors.hpp"
#include "beamtrain/search.hpp"

namespace beamtrain {

class Beam {
 public:
  Beam(std::vector<Hypothesis> members, std::size_t capacity) : members_(std::move(members)), capacity_(capacity) {
    require(capacity_ >= 1, "beam capacity must be >= 1");
    require(!members_.empty() && members_.size() <= capacity_, "beam size must be in [1, k]");
#ifndef NDEBUG
    for (const auto& m : members_) require(m.depth == members_.front().depth, "beam members differ in depth");
#endif
  }

  /// The singleton beam holding the empty prefix.
  static Beam root(std::size_t capacity) { return Beam({Hypothesis::root()}, capacity); }

  const std::vector<Hypothesis>& members() const noexcept { return members_; }
  const Hypothesis& operator[](std::size_t i) const { return members_[i]; }
  std::size_t size() const noexcept { return members_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t depth() const noexcept { return members_.front().depth; }

 private:
  std::vector<Hypothesis> members_;
  std::size_t capacity_;
};

/// One expansion (parent member, appended label).
struct Neighbor {
  std::size_t parent;
  Label label;
};

/// The expanded frontier of a beam. Items are member-major, label-minor.
/// Permutations are 0-based: sigma_hat[0] is the best-scoring item and
/// sigma_star[0] the lowest-cost one.
struct NeighborSet {
  std::vector<Neighbor> items;
  std::vector<double> scores;
  std::vector<int> costs;
  std::vector<std::size_t> sigma_hat;
  std::vector<std::size_t> sigma_star;

  std::size_t size() const noexcept { return items.size(); }
  bool ranked() const noexcept { return sigma_hat.size() == items.size() && !items.empty(); }

  Hypothesis hypothesis(const Beam& parent, std::size_t i, std::span<const Label> gold) const {
    const auto& it = items[i];
    return parent[it.parent].extend(it.label, gold, scores.empty() ? 0.0 : scores[i]);
  }
};

/// Expands every member by every label. With empty `gold` (decoding) all costs are zero.
inline NeighborSet expand(const Beam& b, std::span<const Label> gold, std::size_t label_count) {
  require(label_count >= 1, "expand needs at least one label");
  require(gold.empty() || b.depth() < gold.size(), "expand on a terminal beam");
  NeighborSet ns;
  const std::size_t n = b.size() * label_count;
  ns.items.reserve(n);
  ns.costs.reserve(n);
  for (std::size_t m = 0; m < b.size(); ++m) {
    for (std::size_t l = 0; l < label_count; ++l) {
      const auto label = static_cast<Label>(l);
      ns.items.push_back({m, label});
      int cost = b[m].completion_cost;
      if (!gold.empty() && gold[b.depth()] != label) ++cost;
      ns.costs.push_back(cost);
    }
  }
  return ns;
}

/// Indices sorted by decreasing score; equal scores keep ascending index.
inline std::vector<std::size_t> score_order(std::span<const double> s) {
  for (double v : s) {
    if (!std::isfinite(v)) throw NumericError("non-finite neighbor score");
  }
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

/// Indices sorted by increasing cost, then decreasing score, then ascending index.
inline std::vector<std::size_t> cost_order(std::span<const int> c, std::span<const double> s) {
  require(c.size() == s.size(), "cost_order: size mismatch");
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (c[a] != c[b]) return c[a] < c[b];
    return s[a] > s[b];
  });
  return idx;
}

inline NeighborSet& rank(NeighborSet& ns) {
  require(ns.scores.size() == ns.items.size(), "rank: scores not set");
  ns.sigma_hat = score_order(ns.scores);
  ns.sigma_star = cost_order(ns.costs, ns.scores);
  return ns;
}

/// Beam made of the given neighbor indices, in that order.
inline Beam beam_from_indices(const Beam& parent, const NeighborSet& ns, std::span<const std::size_t> indices,
                              std::size_t capacity, std::span<const Label> gold) {
  std::vector<Hypothesis> members;
  members.reserve(indices.size());
  for (std::size_t i : indices) members.push_back(ns.hypothesis(parent, i, gold));
  return Beam(std::move(members), capacity);
}

/// Indices of the top-k neighbors by score.
inline std::vector<std::size_t> top_k_by_score(const NeighborSet& ns, std::size_t k) {
  require(ns.ranked(), "successor requires a ranked neighbor set");
  const std::size_t m = std::min(k, ns.size());
  return {ns.sigma_hat.begin(), ns.sigma_hat.begin() + static_cast<std::ptrdiff_t>(m)};
}

inline Beam successor_from_scores(const Beam& parent, const NeighborSet& ns, std::size_t k,
                                  std::span<const Label> gold = {}) {
  auto idx = top_k_by_score(ns, k);
  return beam_from_indices(parent, ns, idx, k, gold);
}

/// Cost of the best member.
inline int beam_cost(const Beam& b) {
  int best = std::numeric_limits<int>::max();
  for (const auto& m : b.members()) best = std::min(best, m.completion_cost);
  return best;
}

/// Increase in beam cost across a transition; positive means the best
/// reachable output was lost.
inline int transition_cost(const Beam& b, const Beam& next) { return beam_cost(next) - beam_cost(b); }

/// Beam cost of the candidate successor given by `indices`, without building it.
inline int indices_cost(const NeighborSet& ns, std::span<const std::size_t> indices) {
  int best = std::numeric_limits<int>::max();
  for (std::size_t i : indices) best = std::min(best, ns.costs[i]);
  return best;
}

/// Per-transition diagnostic record. `gold_rank` is 1-based within the
/// score order, or 0 when the gold prefix is no longer among the neighbors.
struct TransitionTrace {
  std::size_t step = 0;
  int beam_cost = 0;
  int transition_cost = 0;
  bool gold_in_beam = false;
  double top_score = 0.0;
  std::size_t gold_rank = 0;
};

inline std::string format_trace(const TransitionTrace& t) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%d,%d,%d,%.17g,%zu", t.step, t.beam_cost, t.transition_cost,
                t.gold_in_beam ? 1 : 0, t.top_score, t.gold_rank);
  return buf;
}

}  // namespace beamtrain
