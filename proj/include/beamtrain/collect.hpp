#pragma once

// Data collection strategies: which beam to visit next at training time.

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "beamtrain/beam.hpp"
#include "beamtrain/errors.hpp"

namespace beamtrain {

enum class Strategy { Stop, Reset, ResetMultiple, Continue, Oracle };

inline constexpr Strategy kAllStrategies[] = {Strategy::Stop, Strategy::Reset, Strategy::ResetMultiple,
                                              Strategy::Continue, Strategy::Oracle};

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Stop: return "stop";
    case Strategy::Reset: return "reset";
    case Strategy::ResetMultiple: return "reset_multiple";
    case Strategy::Continue: return "continue";
    case Strategy::Oracle: return "oracle";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies) {
    if (to_string(s) == name) return s;
  }
  throw UsageError("unknown strategy '" + std::string(name) + "'");
}

/// `chosen` lists the neighbor indices forming `next_beam`, in member order.
/// `cost_increased` always refers to the score-induced successor.
struct StepOutcome {
  std::optional<Beam> next_beam;
  std::vector<std::size_t> chosen;
  bool halt = false;
  bool cost_increased = false;
};

/// Neighbor indices the strategy moves to. Empty with halt=true under Stop.
inline std::vector<std::size_t> select_next(Strategy strategy, int current_cost, const NeighborSet& ns,
                                            std::size_t k, bool& cost_increased, bool& halt) {
  require(ns.ranked(), "next_beam requires a ranked neighbor set");
  auto by_score = top_k_by_score(ns, k);
  cost_increased = indices_cost(ns, by_score) > current_cost;
  halt = false;
  const std::size_t best = ns.sigma_star[0];
  switch (strategy) {
    case Strategy::Continue:
      return by_score;
    case Strategy::Stop:
      if (cost_increased) {
        halt = true;
        return {};
      }
      return by_score;
    case Strategy::Reset:
      if (cost_increased) return {best};
      return by_score;
    case Strategy::ResetMultiple: {
      if (!cost_increased) return by_score;
      std::vector<std::size_t> out{best};
      for (std::size_t j = 0; j + 1 < std::min(k, ns.size()); ++j) {
        const std::size_t i = ns.sigma_hat[j];
        if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
      }
      return out;
    }
    case Strategy::Oracle: {
      const std::size_t m = std::min(k, ns.size());
      return {ns.sigma_star.begin(), ns.sigma_star.begin() + static_cast<std::ptrdiff_t>(m)};
    }
  }
  throw ContractViolation("unhandled strategy");
}

inline StepOutcome next_beam(Strategy strategy, const Beam& current, const NeighborSet& ns, std::size_t k,
                             std::span<const Label> gold) {
  StepOutcome out;
  out.chosen = select_next(strategy, beam_cost(current), ns, k, out.cost_increased, out.halt);
  if (!out.halt) out.next_beam = beam_from_indices(current, ns, out.chosen, k, gold);
  return out;
}

}  // namespace beamtrain
