#pragma once

// Neighbor scoring functions.
//
// main:       word+POS embeddings -> forward/backward LSTMs -> combiner -> context
// simplified: context is the raw word+POS embedding of the current position
//
// Both feed (context, label-LM state) through a second combiner and an output
// layer that yields one incremental score per label. The label LM is an LSTM
// over label embeddings, started from a reserved begin-of-sequence label.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "beamtrain/corpus.hpp"
#include "beamtrain/errors.hpp"
#include "beamtrain/ndiff.hpp"
#include "beamtrain/search.hpp"

namespace beamtrain {

enum class ModelVariant { Main, Simplified };

inline std::string_view to_string(ModelVariant v) { return v == ModelVariant::Main ? "main" : "simplified"; }

inline ModelVariant parse_model_variant(std::string_view name) {
  if (name == "main") return ModelVariant::Main;
  if (name == "simplified") return ModelVariant::Simplified;
  throw UsageError("unknown model '" + std::string(name) + "'");
}

struct ModelDims {
  std::size_t word_dim = 16;
  std::size_t pos_dim = 4;
  std::size_t label_dim = 16;
  std::size_t hidden_dim = 32;

  /// Dimensions of a full-size supertagger.
  static ModelDims supertagger_scale() { return {64, 16, 64, 256}; }
};

struct ModelConfig {
  ModelVariant variant = ModelVariant::Simplified;
  ModelDims dims;
  std::size_t word_count = 0;
  std::size_t pos_count = 0;
  std::size_t label_count = 0;
};

/// Label-LM state of one hypothesis, plus its accumulated score node when
/// score accumulation is on.
struct HypothesisState {
  ndiff::Var lm_state;
  ndiff::Var acc_score;
};

/// Per-label scores of one beam member's children.
struct NeighborScores {
  ndiff::Var incremental;  // s~ for every label
  ndiff::Var scores;       // what the beam ranks: parent score + s~, or s~ alone
};

class Scorer {
 public:
  Scorer() = default;

  /// Fresh parameters: Glorot-uniform matrices, zero biases, U(-0.1, 0.1) embeddings.
  static Scorer init(const ModelConfig& config, std::uint64_t seed) {
    require(config.word_count > 0 && config.pos_count > 0 && config.label_count > 0, "model needs nonempty vocabularies");
    Scorer s;
    s.config_ = config;
    std::mt19937_64 rng(seed);
    const auto& d = config.dims;
    const std::size_t H = d.hidden_dim;
    const std::size_t in_dim = d.word_dim + d.pos_dim;
    auto emb = [&](std::size_t rows, std::size_t cols) {
      ndiff::Tensor t(rows, cols);
      std::uniform_real_distribution<double> u(-0.1, 0.1);
      for (auto& v : t.values()) v = u(rng);
      return t;
    };
    auto mat = [&](std::size_t rows, std::size_t cols) {
      ndiff::Tensor t(rows, cols);
      const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> u(-a, a);
      for (auto& v : t.values()) v = u(rng);
      return t;
    };
    auto zeros = [](std::size_t n) { return ndiff::Tensor(n, 1); };

    auto& p = s.params_;
    p.add("word_emb", emb(config.word_count, d.word_dim));
    p.add("pos_emb", emb(config.pos_count, d.pos_dim));
    p.add("label_emb", emb(config.label_count + 1, d.label_dim));  // last row: begin-of-sequence
    std::size_t ctx_dim = in_dim;
    if (config.variant == ModelVariant::Main) {
      p.add("enc_fwd.W", mat(4 * H, in_dim + H));
      p.add("enc_fwd.b", zeros(4 * H));
      p.add("enc_bwd.W", mat(4 * H, in_dim + H));
      p.add("enc_bwd.b", zeros(4 * H));
      p.add("comb1.Wf", mat(H, H));
      p.add("comb1.Wb", mat(H, H));
      p.add("comb1.b", zeros(H));
      ctx_dim = H;
    }
    p.add("lm.W", mat(4 * H, d.label_dim + H));
    p.add("lm.b", zeros(4 * H));
    p.add("comb2.Wc", mat(H, ctx_dim));
    p.add("comb2.Wl", mat(H, H));
    p.add("comb2.b", zeros(H));
    p.add("out.W", mat(config.label_count, H));
    p.add("out.b", zeros(config.label_count));
    s.bind();
    return s;
  }

  const ModelConfig& config() const noexcept { return config_; }
  const ndiff::ParameterSet& params() const noexcept { return params_; }
  ndiff::ParameterSet& params() noexcept { return params_; }
  std::size_t label_count() const noexcept { return config_.label_count; }
  Label bos_label() const noexcept { return static_cast<Label>(config_.label_count); }

  /// One context vector per position.
  std::vector<ndiff::Var> encode_sentence(ndiff::Tape& tape, const Sentence& sent) const {
    const std::size_t h = sent.size();
    std::vector<ndiff::Var> inputs(h);
    const auto wemb = tape.param(ids_.word_emb);
    const auto pemb = tape.param(ids_.pos_emb);
    for (std::size_t t = 0; t < h; ++t) {
      require(sent.tokens[t] >= 0 && static_cast<std::size_t>(sent.tokens[t]) < config_.word_count, "word id out of range");
      require(sent.pos_tags[t] >= 0 && static_cast<std::size_t>(sent.pos_tags[t]) < config_.pos_count, "pos id out of range");
      inputs[t] = tape.concat(tape.embed_lookup(wemb, static_cast<std::size_t>(sent.tokens[t])),
                              tape.embed_lookup(pemb, static_cast<std::size_t>(sent.pos_tags[t])));
    }
    if (config_.variant == ModelVariant::Simplified) return inputs;

    const std::size_t H = config_.dims.hidden_dim;
    std::vector<ndiff::Var> fwd(h), bwd(h);
    auto run = [&](std::size_t W, std::size_t b, bool reverse, std::vector<ndiff::Var>& out) {
      auto state = tape.constant(ndiff::Tensor(2 * H, 1));
      for (std::size_t step = 0; step < h; ++step) {
        const std::size_t t = reverse ? h - 1 - step : step;
        state = tape.lstm_step(tape.param(W), tape.param(b), inputs[t], state);
        out[t] = tape.slice(state, 0, H);
      }
    };
    run(ids_.enc_fwd_W, ids_.enc_fwd_b, false, fwd);
    run(ids_.enc_bwd_W, ids_.enc_bwd_b, true, bwd);
    std::vector<ndiff::Var> ctx(h);
    for (std::size_t t = 0; t < h; ++t) {
      auto a = tape.affine(tape.param(ids_.comb1_Wf), fwd[t], tape.param(ids_.comb1_b));
      auto b = tape.affine(tape.param(ids_.comb1_Wb), bwd[t]);
      ctx[t] = tape.relu(tape.add(a, b));
    }
    return ctx;
  }

  /// LM state after consuming the begin-of-sequence label.
  ndiff::Var root_state(ndiff::Tape& tape) const {
    auto zero = tape.constant(ndiff::Tensor(2 * config_.dims.hidden_dim, 1));
    return advance(tape, zero, bos_label());
  }

  /// LM state after additionally consuming `label`.
  ndiff::Var advance(ndiff::Tape& tape, ndiff::Var lm_state, Label label) const {
    require(label >= 0 && static_cast<std::size_t>(label) <= config_.label_count, "label id out of range");
    auto x = tape.embed_lookup(tape.param(ids_.label_emb), static_cast<std::size_t>(label));
    return tape.lstm_step(tape.param(ids_.lm_W), tape.param(ids_.lm_b), x, lm_state);
  }

  /// Incremental scores for every label given the position context and LM state.
  ndiff::Var incremental_scores(ndiff::Tape& tape, ndiff::Var context, ndiff::Var lm_state) const {
    auto lm_h = tape.slice(lm_state, 0, config_.dims.hidden_dim);
    auto a = tape.affine(tape.param(ids_.comb2_Wc), context, tape.param(ids_.comb2_b));
    auto b = tape.affine(tape.param(ids_.comb2_Wl), lm_h);
    auto hidden = tape.relu(tape.add(a, b));
    return tape.affine(tape.param(ids_.out_W), hidden, tape.param(ids_.out_b));
  }

  /// Scores of all children of one hypothesis. With accumulation the child
  /// score is the parent's running score plus the increment; the root's
  /// running score is zero and is not materialized.
  NeighborScores score_neighbors(ndiff::Tape& tape, ndiff::Var context, const HypothesisState& state,
                                 bool accumulate) const {
    NeighborScores out;
    out.incremental = incremental_scores(tape, context, state.lm_state);
    out.scores = (accumulate && state.acc_score.valid()) ? tape.scalar_accumulate(state.acc_score, out.incremental)
                                                         : out.incremental;
    return out;
  }

  // ---- persistence ------------------------------------------------------

  std::map<std::string, std::string> checkpoint_meta() const {
    const auto& d = config_.dims;
    return {
        {"variant", std::string(to_string(config_.variant))},
        {"word_dim", std::to_string(d.word_dim)},
        {"pos_dim", std::to_string(d.pos_dim)},
        {"label_dim", std::to_string(d.label_dim)},
        {"hidden_dim", std::to_string(d.hidden_dim)},
        {"word_count", std::to_string(config_.word_count)},
        {"pos_count", std::to_string(config_.pos_count)},
        {"label_count", std::to_string(config_.label_count)},
    };
  }

  void save(std::ostream& out, std::map<std::string, std::string> extra_meta = {}) const {
    auto meta = checkpoint_meta();
    meta.merge(extra_meta);
    ndiff::save_checkpoint(out, params_, meta);
  }

  static Scorer from_checkpoint(const ndiff::Checkpoint& ck) {
    auto get = [&](const std::string& key) -> const std::string& {
      auto it = ck.meta.find(key);
      if (it == ck.meta.end()) throw DataError("checkpoint is missing meta '" + key + "'");
      return it->second;
    };
    auto num = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(get(key))); };
    ModelConfig cfg;
    cfg.variant = parse_model_variant(get("variant"));
    cfg.dims = {num("word_dim"), num("pos_dim"), num("label_dim"), num("hidden_dim")};
    cfg.word_count = num("word_count");
    cfg.pos_count = num("pos_count");
    cfg.label_count = num("label_count");
    Scorer s = init(cfg, 0);
    if (ck.params.size() != s.params_.size()) throw DataError("checkpoint parameter count does not match its variant");
    for (std::size_t p = 0; p < s.params_.size(); ++p) {
      auto it = ck.params.find(s.params_.name(p));
      if (it == ck.params.end()) throw DataError("checkpoint is missing parameter '" + s.params_.name(p) + "'");
      if (!it->second.same_shape(s.params_.value(p))) {
        throw DataError("checkpoint parameter '" + s.params_.name(p) + "' has the wrong shape");
      }
      s.params_.value(p) = it->second;
    }
    return s;
  }

 private:
  struct Ids {
    std::size_t word_emb = 0, pos_emb = 0, label_emb = 0;
    std::size_t enc_fwd_W = 0, enc_fwd_b = 0, enc_bwd_W = 0, enc_bwd_b = 0;
    std::size_t comb1_Wf = 0, comb1_Wb = 0, comb1_b = 0;
    std::size_t lm_W = 0, lm_b = 0;
    std::size_t comb2_Wc = 0, comb2_Wl = 0, comb2_b = 0;
    std::size_t out_W = 0, out_b = 0;
  };

  void bind() {
    auto& p = params_;
    ids_.word_emb = p.index("word_emb");
    ids_.pos_emb = p.index("pos_emb");
    ids_.label_emb = p.index("label_emb");
    if (config_.variant == ModelVariant::Main) {
      ids_.enc_fwd_W = p.index("enc_fwd.W");
      ids_.enc_fwd_b = p.index("enc_fwd.b");
      ids_.enc_bwd_W = p.index("enc_bwd.W");
      ids_.enc_bwd_b = p.index("enc_bwd.b");
      ids_.comb1_Wf = p.index("comb1.Wf");
      ids_.comb1_Wb = p.index("comb1.Wb");
      ids_.comb1_b = p.index("comb1.b");
    }
    ids_.lm_W = p.index("lm.W");
    ids_.lm_b = p.index("lm.b");
    ids_.comb2_Wc = p.index("comb2.Wc");
    ids_.comb2_Wl = p.index("comb2.Wl");
    ids_.comb2_b = p.index("comb2.b");
    ids_.out_W = p.index("out.W");
    ids_.out_b = p.index("out.b");
  }

  ModelConfig config_;
  ndiff::ParameterSet params_;
  Ids ids_;
};

}  // namespace beamtrain
