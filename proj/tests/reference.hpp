#pragma once

// Independent implementations used as test oracles. Nothing here goes through
// the tape, the beam machinery or the surrogate losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "beamtrain/corpus.hpp"
#include "beamtrain/losses.hpp"
#include "beamtrain/model.hpp"

namespace ref {

using Vec = std::vector<double>;

/// Minimum Hamming cost over all completions, by enumeration.
inline int brute_completion_cost(const std::vector<int>& prefix, const std::vector<int>& gold, int labels) {
  const std::size_t h = gold.size();
  std::vector<int> seq(prefix);
  int best = std::numeric_limits<int>::max();
  std::function<void()> rec = [&]() {
    if (seq.size() == h) {
      int c = 0;
      for (std::size_t i = 0; i < h; ++i) c += seq[i] != gold[i];
      best = std::min(best, c);
      return;
    }
    for (int l = 0; l < labels; ++l) {
      seq.push_back(l);
      rec();
      seq.pop_back();
    }
  };
  rec();
  return best;
}

/// Every sequence of length h over `labels` symbols, in lexicographic order.
inline std::vector<std::vector<int>> all_sequences(std::size_t h, int labels) {
  std::vector<std::vector<int>> out;
  std::vector<int> seq(h, 0);
  while (true) {
    out.push_back(seq);
    std::size_t i = h;
    while (i > 0) {
      --i;
      if (++seq[i] < labels) break;
      seq[i] = 0;
      if (i == 0) return out;
    }
    if (h == 0) return out;
  }
}

/// Read-only view of named parameters plus gradient accumulators.
struct Params {
  const beamtrain::ndiff::ParameterSet* set;
  std::map<std::string, Vec> grad;

  explicit Params(const beamtrain::ndiff::ParameterSet& p) : set(&p) {
    for (std::size_t i = 0; i < p.size(); ++i) grad[p.name(i)] = Vec(p.value(i).size(), 0.0);
  }
  const beamtrain::ndiff::Tensor& w(const std::string& name) const { return set->value(set->index(name)); }
  Vec& g(const std::string& name) { return grad.at(name); }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = W x (+ b); W row-major R x C.
inline Vec matvec(const beamtrain::ndiff::Tensor& W, const Vec& x) {
  Vec y(W.rows(), 0.0);
  for (std::size_t r = 0; r < W.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < W.cols(); ++c) s += W.at(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

// dW += dy x^T, returns W^T dy.
inline Vec matvec_back(const beamtrain::ndiff::Tensor& W, Vec& dW, const Vec& x, const Vec& dy) {
  Vec dx(W.cols(), 0.0);
  for (std::size_t r = 0; r < W.rows(); ++r) {
    for (std::size_t c = 0; c < W.cols(); ++c) {
      dW[r * W.cols() + c] += dy[r] * x[c];
      dx[c] += W.at(r, c) * dy[r];
    }
  }
  return dx;
}

inline Vec row(const beamtrain::ndiff::Tensor& T, std::size_t r) {
  return Vec(T.data() + r * T.cols(), T.data() + (r + 1) * T.cols());
}

inline Vec cat(const Vec& a, const Vec& b) {
  Vec out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

struct LstmCache {
  Vec in, c_prev, i, f, o, g, c, tc, h;
};

inline LstmCache lstm_forward(const Params& P, const std::string& W, const std::string& b, const Vec& x,
                              const Vec& h_prev, const Vec& c_prev) {
  const std::size_t H = h_prev.size();
  LstmCache k;
  k.in = cat(x, h_prev);
  k.c_prev = c_prev;
  Vec pre = matvec(P.w(W), k.in);
  const auto& bv = P.w(b);
  for (std::size_t j = 0; j < 4 * H; ++j) pre[j] += bv[j];
  k.i.resize(H), k.f.resize(H), k.o.resize(H), k.g.resize(H), k.c.resize(H), k.tc.resize(H), k.h.resize(H);
  for (std::size_t j = 0; j < H; ++j) {
    k.i[j] = sigmoid(pre[j]);
    k.f[j] = sigmoid(pre[H + j]);
    k.o[j] = sigmoid(pre[2 * H + j]);
    k.g[j] = std::tanh(pre[3 * H + j]);
    k.c[j] = k.f[j] * c_prev[j] + k.i[j] * k.g[j];
    k.tc[j] = std::tanh(k.c[j]);
    k.h[j] = k.o[j] * k.tc[j];
  }
  return k;
}

// Given dh, dc of the outputs, accumulates parameter gradients and returns
// (dx, dh_prev, dc_prev).
struct LstmGrad {
  Vec dx, dh_prev, dc_prev;
};

inline LstmGrad lstm_backward(Params& P, const std::string& W, const std::string& b, const LstmCache& k,
                              const Vec& dh, const Vec& dc_out) {
  const std::size_t H = k.h.size();
  Vec dpre(4 * H);
  LstmGrad out;
  out.dc_prev.resize(H);
  for (std::size_t j = 0; j < H; ++j) {
    const double dout = dh[j] * k.tc[j];
    const double dc = dc_out[j] + dh[j] * k.o[j] * (1.0 - k.tc[j] * k.tc[j]);
    dpre[j] = dc * k.g[j] * k.i[j] * (1.0 - k.i[j]);
    dpre[H + j] = dc * k.c_prev[j] * k.f[j] * (1.0 - k.f[j]);
    dpre[2 * H + j] = dout * k.o[j] * (1.0 - k.o[j]);
    dpre[3 * H + j] = dc * k.i[j] * (1.0 - k.g[j] * k.g[j]);
    out.dc_prev[j] = dc * k.f[j];
  }
  auto& db = P.g(b);
  for (std::size_t j = 0; j < 4 * H; ++j) db[j] += dpre[j];
  Vec din = matvec_back(P.w(W), P.g(W), k.in, dpre);
  const std::size_t X = k.in.size() - H;
  out.dx.assign(din.begin(), din.begin() + static_cast<std::ptrdiff_t>(X));
  out.dh_prev.assign(din.begin() + static_cast<std::ptrdiff_t>(X), din.end());
  return out;
}

inline void add_row_grad(Vec& g, std::size_t cols, std::size_t r, const Vec& d, std::size_t offset = 0) {
  for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += d[offset + c];
}

struct ContextPass {
  std::vector<Vec> x;                 // embedded inputs
  std::vector<LstmCache> fwd, bwd;    // main only
  std::vector<Vec> pre1;              // main only, combiner pre-activation
  std::vector<Vec> ctx;
};

inline ContextPass contexts(const Params& P, const beamtrain::ModelConfig& cfg, const beamtrain::Sentence& s) {
  ContextPass cp;
  const std::size_t h = s.size();
  const std::size_t H = cfg.dims.hidden_dim;
  for (std::size_t t = 0; t < h; ++t) {
    cp.x.push_back(cat(row(P.w("word_emb"), static_cast<std::size_t>(s.tokens[t])),
                       row(P.w("pos_emb"), static_cast<std::size_t>(s.pos_tags[t]))));
  }
  if (cfg.variant == beamtrain::ModelVariant::Simplified) {
    cp.ctx = cp.x;
    return cp;
  }
  cp.fwd.resize(h);
  cp.bwd.resize(h);
  Vec hz(H, 0.0), cz(H, 0.0);
  for (std::size_t t = 0; t < h; ++t) {
    cp.fwd[t] = lstm_forward(P, "enc_fwd.W", "enc_fwd.b", cp.x[t], t ? cp.fwd[t - 1].h : hz, t ? cp.fwd[t - 1].c : cz);
  }
  for (std::size_t t = h; t-- > 0;) {
    cp.bwd[t] = lstm_forward(P, "enc_bwd.W", "enc_bwd.b", cp.x[t], t + 1 < h ? cp.bwd[t + 1].h : hz,
                             t + 1 < h ? cp.bwd[t + 1].c : cz);
  }
  for (std::size_t t = 0; t < h; ++t) {
    Vec a = matvec(P.w("comb1.Wf"), cp.fwd[t].h);
    Vec b = matvec(P.w("comb1.Wb"), cp.bwd[t].h);
    const auto& bias = P.w("comb1.b");
    Vec pre(H), ctx(H);
    for (std::size_t j = 0; j < H; ++j) {
      pre[j] = a[j] + b[j] + bias[j];
      ctx[j] = std::max(0.0, pre[j]);
    }
    cp.pre1.push_back(pre);
    cp.ctx.push_back(ctx);
  }
  return cp;
}

inline void contexts_backward(Params& P, const beamtrain::ModelConfig& cfg, const beamtrain::Sentence& s,
                              const ContextPass& cp, const std::vector<Vec>& dctx) {
  const std::size_t h = s.size();
  const std::size_t H = cfg.dims.hidden_dim;
  const std::size_t wd = cfg.dims.word_dim, pd = cfg.dims.pos_dim;
  std::vector<Vec> dx(h);
  if (cfg.variant == beamtrain::ModelVariant::Simplified) {
    dx = dctx;
  } else {
    std::vector<Vec> dhf(h, Vec(H, 0.0)), dhb(h, Vec(H, 0.0));
    for (std::size_t t = 0; t < h; ++t) {
      Vec dpre(H);
      for (std::size_t j = 0; j < H; ++j) dpre[j] = cp.pre1[t][j] > 0.0 ? dctx[t][j] : 0.0;
      auto& db = P.g("comb1.b");
      for (std::size_t j = 0; j < H; ++j) db[j] += dpre[j];
      dhf[t] = matvec_back(P.w("comb1.Wf"), P.g("comb1.Wf"), cp.fwd[t].h, dpre);
      dhb[t] = matvec_back(P.w("comb1.Wb"), P.g("comb1.Wb"), cp.bwd[t].h, dpre);
    }
    for (std::size_t t = 0; t < h; ++t) dx[t] = Vec(wd + pd, 0.0);
    Vec dh(H, 0.0), dc(H, 0.0);
    for (std::size_t t = h; t-- > 0;) {
      for (std::size_t j = 0; j < H; ++j) dh[j] += dhf[t][j];
      auto g = lstm_backward(P, "enc_fwd.W", "enc_fwd.b", cp.fwd[t], dh, dc);
      for (std::size_t j = 0; j < wd + pd; ++j) dx[t][j] += g.dx[j];
      dh = g.dh_prev;
      dc = g.dc_prev;
    }
    dh.assign(H, 0.0);
    dc.assign(H, 0.0);
    for (std::size_t t = 0; t < h; ++t) {
      for (std::size_t j = 0; j < H; ++j) dh[j] += dhb[t][j];
      auto g = lstm_backward(P, "enc_bwd.W", "enc_bwd.b", cp.bwd[t], dh, dc);
      for (std::size_t j = 0; j < wd + pd; ++j) dx[t][j] += g.dx[j];
      dh = g.dh_prev;
      dc = g.dc_prev;
    }
  }
  for (std::size_t t = 0; t < h; ++t) {
    add_row_grad(P.g("word_emb"), wd, static_cast<std::size_t>(s.tokens[t]), dx[t], 0);
    add_row_grad(P.g("pos_emb"), pd, static_cast<std::size_t>(s.pos_tags[t]), dx[t], wd);
  }
}

struct OutputCache {
  Vec pre, z, scores;
};

inline OutputCache output_forward(const Params& P, const Vec& ctx, const Vec& lm_h) {
  OutputCache o;
  Vec a = matvec(P.w("comb2.Wc"), ctx);
  Vec b = matvec(P.w("comb2.Wl"), lm_h);
  const auto& bias = P.w("comb2.b");
  o.pre.resize(a.size());
  o.z.resize(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    o.pre[j] = a[j] + b[j] + bias[j];
    o.z[j] = std::max(0.0, o.pre[j]);
  }
  o.scores = matvec(P.w("out.W"), o.z);
  const auto& ob = P.w("out.b");
  for (std::size_t j = 0; j < o.scores.size(); ++j) o.scores[j] += ob[j];
  return o;
}

/// Label-LM state sequence for a given label path: states[t] is the state
/// before labelling position t.
inline std::vector<LstmCache> lm_states(const Params& P, const beamtrain::ModelConfig& cfg,
                                        const std::vector<int>& labels) {
  const std::size_t H = cfg.dims.hidden_dim;
  std::vector<LstmCache> states;
  Vec hz(H, 0.0), cz(H, 0.0);
  states.push_back(lstm_forward(P, "lm.W", "lm.b", row(P.w("label_emb"), cfg.label_count), hz, cz));
  for (std::size_t t = 0; t + 1 < labels.size(); ++t) {
    states.push_back(lstm_forward(P, "lm.W", "lm.b", row(P.w("label_emb"), static_cast<std::size_t>(labels[t])),
                                  states.back().h, states.back().c));
  }
  return states;
}

/// Sum over positions of the incremental score of `labels`.
inline double sequence_score(const beamtrain::Scorer& scorer, const beamtrain::Sentence& s,
                             const std::vector<int>& labels) {
  Params P(scorer.params());
  const auto& cfg = scorer.config();
  auto cp = contexts(P, cfg, s);
  auto states = lm_states(P, cfg, labels);
  double total = 0.0;
  for (std::size_t t = 0; t < s.size(); ++t) {
    total += output_forward(P, cp.ctx[t], states[t].h).scores[static_cast<std::size_t>(labels[t])];
  }
  return total;
}

struct MlResult {
  double loss = 0.0;
  std::map<std::string, Vec> grad;
};

/// Teacher-forced negative log-likelihood sum_t [logsumexp(s_t) - s_t[y_t]]
/// and its gradient with respect to every parameter.
inline MlResult teacher_forcing_nll(const beamtrain::Scorer& scorer, const beamtrain::Sentence& s) {
  Params P(scorer.params());
  const auto& cfg = scorer.config();
  const std::size_t h = s.size();
  const std::size_t H = cfg.dims.hidden_dim;
  const std::size_t L = cfg.label_count;
  auto cp = contexts(P, cfg, s);
  auto states = lm_states(P, cfg, s.labels);
  MlResult res;
  std::vector<OutputCache> outs;
  std::vector<Vec> dscore(h);
  for (std::size_t t = 0; t < h; ++t) {
    outs.push_back(output_forward(P, cp.ctx[t], states[t].h));
    const auto& sc = outs.back().scores;
    double mx = *std::max_element(sc.begin(), sc.end());
    double z = 0.0;
    for (double v : sc) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    const auto y = static_cast<std::size_t>(s.labels[t]);
    res.loss += lse - sc[y];
    dscore[t].resize(L);
    for (std::size_t l = 0; l < L; ++l) dscore[t][l] = std::exp(sc[l] - lse) - (l == y ? 1.0 : 0.0);
  }
  std::vector<Vec> dctx(h), dlm_h(h);
  for (std::size_t t = 0; t < h; ++t) {
    auto& ob = P.g("out.b");
    for (std::size_t l = 0; l < L; ++l) ob[l] += dscore[t][l];
    Vec dz = matvec_back(P.w("out.W"), P.g("out.W"), outs[t].z, dscore[t]);
    Vec dpre(H);
    for (std::size_t j = 0; j < H; ++j) dpre[j] = outs[t].pre[j] > 0.0 ? dz[j] : 0.0;
    auto& cb = P.g("comb2.b");
    for (std::size_t j = 0; j < H; ++j) cb[j] += dpre[j];
    dctx[t] = matvec_back(P.w("comb2.Wc"), P.g("comb2.Wc"), cp.ctx[t], dpre);
    dlm_h[t] = matvec_back(P.w("comb2.Wl"), P.g("comb2.Wl"), states[t].h, dpre);
  }
  // LM backward: states[t] consumed label t-1 (BOS for t = 0).
  Vec dh(H, 0.0), dc(H, 0.0);
  const std::size_t ld = cfg.dims.label_dim;
  for (std::size_t t = h; t-- > 0;) {
    for (std::size_t j = 0; j < H; ++j) dh[j] += dlm_h[t][j];
    auto g = lstm_backward(P, "lm.W", "lm.b", states[t], dh, dc);
    const std::size_t input_label = t == 0 ? L : static_cast<std::size_t>(s.labels[t - 1]);
    add_row_grad(P.g("label_emb"), ld, input_label, g.dx);
    dh = g.dh_prev;
    dc = g.dc_prev;
  }
  contexts_backward(P, cfg, s, cp, dctx);
  res.grad = std::move(P.grad);
  return res;
}

/// Random sentence over a model's vocabularies.
inline beamtrain::Sentence random_sentence(std::mt19937_64& rng, const beamtrain::ModelConfig& cfg, std::size_t h) {
  beamtrain::Sentence s;
  std::uniform_int_distribution<int> w(0, static_cast<int>(cfg.word_count) - 1);
  std::uniform_int_distribution<int> p(0, static_cast<int>(cfg.pos_count) - 1);
  std::uniform_int_distribution<int> l(0, static_cast<int>(cfg.label_count) - 1);
  for (std::size_t t = 0; t < h; ++t) {
    s.tokens.push_back(w(rng));
    s.pos_tags.push_back(p(rng));
    s.labels.push_back(l(rng));
  }
  return s;
}

/// Small model config for fast tests.
inline beamtrain::ModelConfig tiny_config(beamtrain::ModelVariant variant, std::size_t labels = 3) {
  beamtrain::ModelConfig cfg;
  cfg.variant = variant;
  cfg.dims = {5, 3, 4, 6};
  cfg.word_count = 7;
  cfg.pos_count = 3;
  cfg.label_count = labels;
  return cfg;
}

/// Perturbs every parameter so biases and embeddings are all nonzero.
inline void jitter(beamtrain::Scorer& scorer, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  auto& ps = scorer.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (auto& v : ps.value(i).values()) v += n(rng);
  }
}

inline double relative_error(double a, double b) {
  const double d = std::abs(a - b);
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : d / s;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double s = std::sqrt(std::max(na, nb));
  return s == 0.0 ? 0.0 : std::sqrt(d) / s;
}

using beamtrain::LossKind;

// Direct transcriptions of the loss definitions, with their own sorting.
struct LossCase {
  std::vector<double> s;
  std::vector<int> c;
  std::size_t k;

  std::vector<std::size_t> by_score() const {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
    return idx;
  }
  std::size_t best() const {
    std::size_t b = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (c[i] < c[b] || (c[i] == c[b] && s[i] > s[b])) b = i;
    }
    return b;
  }
  std::size_t last() const { return by_score()[std::min(k, s.size()) - 1]; }
  double slack(double margin, std::size_t a) const { return s[a] - s[best()] + margin; }

  double value(LossKind kind) const {
    const auto b = best();
    auto lse = [&](const std::vector<std::size_t>& subset) {
      double m = -INFINITY, z = 0.0;
      for (auto i : subset) m = std::max(m, s[i]);
      for (auto i : subset) z += std::exp(s[i] - m);
      return m + std::log(z);
    };
    switch (kind) {
      case LossKind::PerceptronFirst: return std::max(0.0, slack(0.0, by_score()[0]));
      case LossKind::PerceptronLast: return std::max(0.0, slack(0.0, last()));
      case LossKind::MarginLast: return std::max(0.0, slack(1.0, last()));
      case LossKind::CostSensitiveMarginLast: return (c[last()] - c[b]) * std::max(0.0, slack(1.0, last()));
      case LossKind::LogLossNeighbors: {
        std::vector<std::size_t> all(s.size());
        std::iota(all.begin(), all.end(), 0);
        return lse(all) - s[b];
      }
      case LossKind::LogLossBeam: {
        std::vector<std::size_t> subset{b};
        auto order = by_score();
        for (std::size_t j = 0; j < std::min(k, s.size()); ++j) {
          if (order[j] != b) subset.push_back(order[j]);
        }
        return lse(subset) - s[b];
      }
    }
    return NAN;
  }

  // Distance to the nearest non-differentiable point of `kind`.
  double kink_distance(LossKind kind) const {
    double d = INFINITY;
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t j = i + 1; j < s.size(); ++j) d = std::min(d, std::abs(s[i] - s[j]));
    }
    switch (kind) {
      case LossKind::PerceptronFirst: return std::min(d, std::abs(slack(0.0, by_score()[0])));
      case LossKind::PerceptronLast: return std::min(d, std::abs(slack(0.0, last())));
      case LossKind::MarginLast:
      case LossKind::CostSensitiveMarginLast: return std::min(d, std::abs(slack(1.0, last())));
      default: return d;
    }
  }
};

inline LossCase random_loss_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_dist(1, 12);
  std::uniform_int_distribution<int> c_dist(0, 3);
  std::normal_distribution<double> s_dist(0.0, 2.0);
  LossCase r;
  const int n = n_dist(rng);
  for (int i = 0; i < n; ++i) {
    r.s.push_back(s_dist(rng));
    r.c.push_back(c_dist(rng));
  }
  r.k = std::uniform_int_distribution<std::size_t>(1, static_cast<std::size_t>(n) + 2)(rng);
  return r;
}

}  // namespace ref
