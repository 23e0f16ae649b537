#pragma once

// Beam-aware training: roll out a trajectory through the beam search space
// under a collection strategy, incur a surrogate loss at each expanded beam,
// and take one SGD step on the summed losses per example.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "beamtrain/beam.hpp"
#include "beamtrain/collect.hpp"
#include "beamtrain/corpus.hpp"
#include "beamtrain/errors.hpp"
#include "beamtrain/losses.hpp"
#include "beamtrain/model.hpp"
#include "beamtrain/ndiff.hpp"

namespace beamtrain {

enum class UpdateMode { Always, OnCostIncrease };

inline std::string_view to_string(UpdateMode m) { return m == UpdateMode::Always ? "always" : "on_cost_increase"; }

inline UpdateMode parse_update_mode(std::string_view name) {
  if (name == "always") return UpdateMode::Always;
  if (name == "on_cost_increase") return UpdateMode::OnCostIncrease;
  throw UsageError("unknown update_mode '" + std::string(name) + "'");
}

/// Rollout knobs shared by training and the trace tool.
struct RolloutOptions {
  Strategy strategy = Strategy::Continue;
  LossKind loss = LossKind::LogLossNeighbors;
  std::size_t k = 1;
  bool accumulate = true;
  UpdateMode update_mode = UpdateMode::Always;
  bool stop_gradient_prefix = false;
  LossOptions loss_options;
};

struct RunConfig {
  ModelVariant model = ModelVariant::Simplified;
  ModelDims dims;
  RolloutOptions rollout;
  std::vector<std::size_t> k_eval;  // empty means {k_train}
  std::size_t epochs = 16;
  double lr_start = 1e-1;
  double lr_end = 1e-5;
  std::uint64_t seed = 1;

  void validate() const {
    if (rollout.k < 1) throw UsageError("k must be >= 1");
    for (auto k : k_eval) {
      if (k < 1) throw UsageError("k_eval entries must be >= 1");
    }
    if (!(lr_start >= lr_end && lr_end > 0.0)) throw UsageError("learning rates must satisfy lr_start >= lr_end > 0");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
  }

  std::vector<std::size_t> eval_beams() const { return k_eval.empty() ? std::vector{rollout.k} : k_eval; }
};

struct RolloutStats {
  std::size_t steps = 0;            // expanded beams
  std::size_t losses_included = 0;  // beams whose loss enters the total
  std::size_t cost_increases = 0;
  bool halted = false;
  std::vector<Beam> beams;  // visited beams, root first (filled when requested)
};

struct Rollout {
  ndiff::Var total_loss;  // invalid when no loss was included
  double loss_value = 0.0;
  std::vector<double> step_losses;  // per expanded beam, included or not
  RolloutStats stats;
};

// ---------------------------------------------------------------------------

/// One search step shared by rollouts and decoding: scores every child of
/// every member and returns the ranked neighbor set with its score node.
struct ScoredStep {
  NeighborSet ns;
  ndiff::Var scores;
};

inline ScoredStep score_beam(ndiff::Tape& tape, const Scorer& scorer, const Beam& beam,
                             std::span<const HypothesisState> states, ndiff::Var context,
                             std::span<const Label> gold, bool accumulate) {
  ScoredStep step;
  step.ns = expand(beam, gold, scorer.label_count());
  std::vector<ndiff::Var> parts;
  parts.reserve(beam.size());
  for (std::size_t m = 0; m < beam.size(); ++m) {
    parts.push_back(scorer.score_neighbors(tape, context, states[m], accumulate).scores);
  }
  step.scores = parts.size() == 1 ? parts.front() : tape.concat(parts);
  const auto& sv = tape.value(step.scores);
  step.ns.scores.assign(sv.storage().begin(), sv.storage().end());
  rank(step.ns);
  return step;
}

/// LM states (and running scores) for the members of the next beam.
inline std::vector<HypothesisState> successor_states(ndiff::Tape& tape, const Scorer& scorer, const ScoredStep& step,
                                                     std::span<const HypothesisState> states,
                                                     std::span<const std::size_t> chosen, bool accumulate,
                                                     bool stop_gradient, bool need_lm) {
  std::vector<HypothesisState> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) {
    const auto& item = step.ns.items[i];
    HypothesisState hs;
    if (need_lm) hs.lm_state = scorer.advance(tape, states[item.parent].lm_state, item.label);
    if (accumulate) {
      hs.acc_score = tape.select(step.scores, i);
      if (stop_gradient) hs.acc_score = tape.detach(hs.acc_score);
    }
    out.push_back(hs);
  }
  return out;
}

/// Training-time trajectory for one example and the sum of its included losses.
inline Rollout rollout_and_loss(ndiff::Tape& tape, const Scorer& scorer, const Sentence& sent,
                                const RolloutOptions& opt, bool keep_beams = false) {
  require(sent.size() >= 1, "empty sentence");
  require(opt.k >= 1, "beam size must be >= 1");
  const std::span<const Label> gold(sent.labels);
  const auto context = scorer.encode_sentence(tape, sent);
  Rollout out;
  std::vector<ndiff::Var> included;
  Beam beam = Beam::root(opt.k);
  std::vector<HypothesisState> states{{scorer.root_state(tape), {}}};
  if (keep_beams) out.stats.beams.push_back(beam);

  const std::size_t h = sent.size();
  for (std::size_t depth = 0; depth < h; ++depth) {
    auto step = score_beam(tape, scorer, beam, states, context[depth], gold, opt.accumulate);
    const Ranking ranking{step.ns.sigma_hat, step.ns.sigma_star};
    const auto eval = evaluate_loss(opt.loss, step.ns.scores, step.ns.costs, ranking, opt.k, opt.loss_options);
    auto outcome = next_beam(opt.strategy, beam, step.ns, opt.k, gold);
    ++out.stats.steps;
    out.step_losses.push_back(eval.value);
    if (outcome.cost_increased) ++out.stats.cost_increases;
    if (opt.update_mode == UpdateMode::Always || outcome.cost_increased) {
      included.push_back(tape.inject(step.scores, eval.value, eval.grad));
      out.loss_value += eval.value;
      ++out.stats.losses_included;
    }
    if (outcome.halt) {
      out.stats.halted = true;
      break;
    }
    const bool need_lm = depth + 1 < h;
    states = successor_states(tape, scorer, step, states, outcome.chosen, opt.accumulate, opt.stop_gradient_prefix,
                              need_lm);
    beam = std::move(*outcome.next_beam);
    if (keep_beams) out.stats.beams.push_back(beam);
  }
  if (!included.empty()) out.total_loss = included.size() == 1 ? included.front() : tape.add_all(included);
  if (!std::isfinite(out.loss_value)) throw NumericError("non-finite training loss");
  return out;
}

struct DecodeResult {
  std::vector<Label> labels;
  double score = 0.0;
  std::vector<TransitionTrace> trace;  // filled only when gold is given
};

/// Beam-search decoding (always Continue). Gold labels, when given, are used
/// only for the diagnostic trace; the search never reads them.
inline DecodeResult decode_with_trace(const Scorer& scorer, const Sentence& sent, std::size_t k, bool accumulate,
                                      std::span<const Label> gold = {}) {
  require(k >= 1, "beam size must be >= 1");
  ndiff::Tape tape(&scorer.params());
  const auto context = scorer.encode_sentence(tape, sent);
  Beam beam = Beam::root(k);
  std::vector<HypothesisState> states{{scorer.root_state(tape), {}}};
  DecodeResult out;
  const std::size_t h = sent.size();
  for (std::size_t depth = 0; depth < h; ++depth) {
    auto step = score_beam(tape, scorer, beam, states, context[depth], gold, accumulate);
    auto chosen = top_k_by_score(step.ns, k);
    Beam next = beam_from_indices(beam, step.ns, chosen, k, gold);
    if (!gold.empty()) {
      TransitionTrace t;
      t.step = depth + 1;
      t.beam_cost = beam_cost(next);
      t.transition_cost = transition_cost(beam, next);
      t.gold_in_beam = t.beam_cost == 0;
      t.top_score = step.ns.scores[step.ns.sigma_hat[0]];
      for (std::size_t r = 0; r < step.ns.size(); ++r) {
        if (step.ns.costs[step.ns.sigma_hat[r]] == 0) {
          t.gold_rank = r + 1;
          break;
        }
      }
      out.trace.push_back(t);
    }
    states = successor_states(tape, scorer, step, states, chosen, accumulate, false, depth + 1 < h);
    beam = std::move(next);
  }
  out.labels = beam[0].labels();
  out.score = beam[0].acc_score;
  return out;
}

inline std::vector<Label> decode(const Scorer& scorer, const Sentence& sent, std::size_t k, bool accumulate = true) {
  return decode_with_trace(scorer, sent, k, accumulate).labels;
}

/// Token-level accuracy over a corpus.
inline double accuracy(std::span<const std::vector<Label>> preds, std::span<const std::vector<Label>> golds) {
  require(preds.size() == golds.size(), "accuracy: corpus size mismatch");
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i].size() == golds[i].size(), "accuracy: sentence length mismatch");
    for (std::size_t j = 0; j < preds[i].size(); ++j) correct += preds[i][j] == golds[i][j] ? 1 : 0;
    total += golds[i].size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

inline double evaluate_accuracy(const Scorer& scorer, std::span<const Sentence> corpus, std::size_t k,
                                bool accumulate) {
  std::vector<std::vector<Label>> preds, golds;
  preds.reserve(corpus.size());
  golds.reserve(corpus.size());
  for (const auto& s : corpus) {
    preds.push_back(decode(scorer, s, k, accumulate));
    golds.push_back(s.labels);
  }
  return accuracy(preds, golds);
}

/// Cosine decay from lr_start at step 0 to lr_end at step total_steps-1.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_start, double lr_end) {
  if (total_steps < 2) return lr_start;
  require(step < total_steps, "cosine_lr: step out of range");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * t));
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_acc = 0.0;
  double dev_acc = 0.0;
  double lr_last = 0.0;
  double seconds = 0.0;
};

struct RunResult {
  std::vector<EpochMetrics> epochs;
  double best_dev_acc = -1.0;
  std::size_t best_epoch = 0;
  std::map<std::size_t, double> final_acc;  // k_eval -> dev accuracy of the best model
  double wall_seconds = 0.0;
  Scorer best_model;
};

/// Called after every epoch (e.g. to stream metrics).
using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Training accuracy is measured on a fixed prefix of the training set of
/// at most this many sentences (or |dev|, whichever is larger).
inline constexpr std::size_t kTrainAccSample = 200;

inline RunResult train_run(const RunConfig& config, std::span<const Sentence> train, std::span<const Sentence> dev,
                           const ModelConfig& model_config, const EpochCallback& on_epoch = {}) {
  config.validate();
  require(!train.empty() && !dev.empty(), "train_run needs nonempty train and dev sets");
  using clock = std::chrono::steady_clock;
  const auto run_start = clock::now();

  Scorer scorer = Scorer::init(model_config, config.seed);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t total_steps = config.epochs * train.size();
  const std::span<const Sentence> train_sample =
      train.first(std::min(train.size(), std::max(kTrainAccSample, dev.size())));
  RunResult result;
  result.best_model = scorer;
  std::size_t step = 0;
  double lr = config.lr_start;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t idx : order) {
      lr = cosine_lr(step, total_steps, config.lr_start, config.lr_end);
      ndiff::Tape tape(&scorer.params());
      Rollout r;
      try {
        r = rollout_and_loss(tape, scorer, train[idx], config.rollout);
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << e.what() << " (epoch " << epoch << ", example " << idx << ", step " << step << ")";
        throw NumericError(msg.str());
      }
      ++step;
      if (!r.total_loss.valid()) continue;
      tape.backward(r.total_loss);
      auto grads = tape.parameter_gradients();
      for (const auto& g : grads) {
        if (!g.all_finite()) {
          std::ostringstream msg;
          msg << "non-finite gradient (epoch " << epoch << ", example " << idx << ", step " << step - 1 << ")";
          throw NumericError(msg.str());
        }
      }
      scorer.params().sgd_step(grads, lr);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_acc = evaluate_accuracy(scorer, train_sample, config.rollout.k, config.rollout.accumulate);
    m.dev_acc = evaluate_accuracy(scorer, dev, config.rollout.k, config.rollout.accumulate);
    m.lr_last = lr;
    m.seconds = std::chrono::duration<double>(clock::now() - epoch_start).count();
    if (m.dev_acc > result.best_dev_acc) {
      result.best_dev_acc = m.dev_acc;
      result.best_epoch = epoch;
      result.best_model = scorer;
    }
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  for (std::size_t k : config.eval_beams()) {
    result.final_acc[k] = k == config.rollout.k
                              ? result.best_dev_acc
                              : evaluate_accuracy(result.best_model, dev, k, config.rollout.accumulate);
  }
  result.wall_seconds = std::chrono::duration<double>(clock::now() - run_start).count();
  return result;
}

}  // namespace beamtrain
