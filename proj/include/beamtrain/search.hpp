#pragma once

// Left-to-right labeling search tree with Hamming costs.

#include <memory>
#include <span>
#include <vector>

#include "beamtrain/errors.hpp"

namespace beamtrain {

using Label = int;

/// Immutable singly linked prefix; children share their parent's chain.
struct PrefixLink {
  std::shared_ptr<const PrefixLink> parent;
  Label label;
};

/// A labeled prefix (a node of the search tree).
///
/// `completion_cost` is the Hamming distance of the prefix to the gold prefix
/// of the same length, which for Hamming cost is also the cost of the best
/// complete output reachable from here. It is maintained incrementally.
struct Hypothesis {
  std::shared_ptr<const PrefixLink> tail;
  std::size_t depth = 0;
  double acc_score = 0.0;
  int completion_cost = 0;

  static Hypothesis root() { return {}; }

  /// Child obtained by appending `label`. With empty `gold` the cost is left unchanged.
  Hypothesis extend(Label label, std::span<const Label> gold, double score) const {
    Hypothesis child;
    child.tail = std::make_shared<const PrefixLink>(PrefixLink{tail, label});
    child.depth = depth + 1;
    child.acc_score = score;
    child.completion_cost = completion_cost;
    if (!gold.empty()) {
      require(depth < gold.size(), "extending a terminal hypothesis");
      child.completion_cost += (gold[depth] != label) ? 1 : 0;
    }
    return child;
  }

  Label last_label() const {
    require(tail != nullptr, "root hypothesis has no label");
    return tail->label;
  }

  /// Materializes the label sequence, root first.
  std::vector<Label> labels() const {
    std::vector<Label> out(depth);
    const PrefixLink* link = tail.get();
    for (std::size_t i = depth; i-- > 0;) {
      out[i] = link->label;
      link = link->parent.get();
    }
    return out;
  }
};

/// Number of positions where `prefix` disagrees with `gold`.
inline int completion_cost(std::span<const Label> prefix, std::span<const Label> gold) {
  require(prefix.size() <= gold.size(), "completion_cost: prefix longer than gold");
  int mistakes = 0;
  for (std::size_t i = 0; i < prefix.size(); ++i) mistakes += (prefix[i] != gold[i]) ? 1 : 0;
  return mistakes;
}

/// Cost-minimizing next label from any state: the gold label at the next position.
inline Label oracle_neighbor(const Hypothesis& v, std::span<const Label> gold) {
  require(v.depth < gold.size(), "oracle_neighbor on a terminal hypothesis");
  return gold[v.depth];
}

inline bool is_terminal(const Hypothesis& v, std::size_t h) {
  require(v.depth <= h, "hypothesis deeper than the sequence");
  return v.depth == h;
}

}  // namespace beamtrain
