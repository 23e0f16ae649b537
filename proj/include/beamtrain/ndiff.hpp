#pragma once

// Small dense tensors and a reverse-mode tape.
//
// A Tape records operations in append order; backward() walks it once in
// reverse. Parameters live in a ParameterSet and enter a tape by reference,
// so a tape per training example costs no parameter copies.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "beamtrain/errors.hpp"

namespace beamtrain::ndiff {

/// Row-major matrix of doubles; a column vector has cols() == 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Tensor vector(std::vector<double> values) {
    Tensor t;
    t.rows_ = values.size();
    t.cols_ = 1;
    t.data_ = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return vector({v}); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require(same_shape(o), "tensor += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Named learnable tensors. Iteration order is insertion order; the
/// checkpoint format orders by name.
class ParameterSet {
 public:
  std::size_t add(const std::string& name, Tensor init) {
    require(!index_.contains(name), "duplicate parameter name");
    index_.emplace(name, values_.size());
    names_.push_back(name);
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  /// Plain SGD: theta -= lr * grad.
  void sgd_step(const std::vector<Tensor>& grads, double lr) {
    require(grads.size() == values_.size(), "sgd_step: gradient count mismatch");
    for (std::size_t p = 0; p < values_.size(); ++p) {
      if (grads[p].empty()) continue;
      require(grads[p].same_shape(values_[p]), "sgd_step: gradient shape mismatch");
      double* w = values_[p].data();
      const double* g = grads[p].data();
      for (std::size_t i = 0; i < values_[p].size(); ++i) w[i] -= lr * g[i];
    }
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

inline constexpr std::string_view kCheckpointMagic = "beamtrain-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint: a versioned header, sorted "meta" lines, then one
/// "param <name> <rows> <cols>" line per parameter (sorted by name) followed by
/// its values at full round-trip precision.
inline void save_checkpoint(std::ostream& out, const ParameterSet& params,
                            const std::map<std::string, std::string>& meta) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << '\n';
  std::vector<std::size_t> order(params.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return params.name(a) < params.name(b); });
  char buf[32];
  for (std::size_t p : order) {
    const Tensor& t = params.value(p);
    out << "param " << params.name(p) << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t[i]);
      if (i) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> params;
};

inline Checkpoint load_checkpoint(std::istream& in, const std::string& source = "<checkpoint>") {
  Checkpoint ck;
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };
  if (!next_line()) throw ParseError(source, 1, "empty checkpoint");
  {
    char magic[64] = {};
    int version = 0;
    if (std::sscanf(line.c_str(), "%63s %d", magic, &version) != 2 || kCheckpointMagic != magic) {
      throw ParseError(source, line_no, "not a checkpoint file");
    }
    if (version != kCheckpointVersion) {
      throw ParseError(source, line_no, "unsupported checkpoint version " + std::to_string(version));
    }
  }
  while (next_line()) {
    if (line.empty()) continue;
    if (line.rfind("meta ", 0) == 0) {
      auto rest = line.substr(5);
      auto sp = rest.find(' ');
      if (sp == std::string::npos) throw ParseError(source, line_no, "malformed meta line");
      ck.meta[rest.substr(0, sp)] = rest.substr(sp + 1);
      continue;
    }
    if (line.rfind("param ", 0) != 0) throw ParseError(source, line_no, "expected 'param' record");
    char name[256] = {};
    std::size_t rows = 0, cols = 0;
    if (std::sscanf(line.c_str(), "param %255s %zu %zu", name, &rows, &cols) != 3) {
      throw ParseError(source, line_no, "malformed param header");
    }
    if (!next_line()) throw ParseError(source, line_no, "missing values");
    Tensor t(rows, cols);
    const char* p = line.c_str();
    for (std::size_t i = 0; i < t.size(); ++i) {
      char* end = nullptr;
      t[i] = std::strtod(p, &end);
      if (end == p) throw ParseError(source, line_no, "too few values for " + std::string(name));
      p = end;
    }
    ck.params[name] = std::move(t);
  }
  return ck;
}

/// Handle to a tape node.
struct Var {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

class Tape {
 public:
  explicit Tape(const ParameterSet* params = nullptr) : params_(params) {
    if (params_) param_nodes_.assign(params_->size(), Var::npos);
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// Leaf bound to parameter `p`; repeated calls return the same node.
  Var param(std::size_t p) {
    require(params_ != nullptr && p < params_->size(), "tape has no such parameter");
    if (param_nodes_[p] == Var::npos) {
      Node n;
      n.op = Op::Param;
      n.ref = &params_->value(p);
      n.param = static_cast<long>(p);
      param_nodes_[p] = push(std::move(n)).id;
    }
    return {param_nodes_[p]};
  }

  /// Leaf holding a copy of `value`. Gradients reaching it can be read with grad().
  Var constant(Tensor value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var scalar_constant(double v) { return constant(Tensor::scalar(v)); }

  /// Constant copy of `x`: gradients stop here.
  Var detach(Var x) { return constant(value(x)); }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.value;
  }

  double scalar(Var v) const {
    const Tensor& t = value(v);
    require(t.size() == 1, "scalar(): node is not a scalar");
    return t[0];
  }

  // ---- operations -------------------------------------------------------

  /// Row `i` of a matrix as a column vector (embedding lookup).
  Var select_row(Var table, std::size_t i) {
    const Tensor& t = value(table);
    require(i < t.rows(), "select_row: index out of range");
    Tensor out(t.cols(), 1);
    std::copy_n(t.data() + i * t.cols(), t.cols(), out.data());
    return push_op(Op::SelectRow, {table.id}, std::move(out), i);
  }

  Var embed_lookup(Var table, std::size_t id) { return select_row(table, id); }

  /// W x + b. Pass an invalid Var for b to omit the bias.
  Var affine(Var W, Var x, Var b = {}) {
    const Tensor& w = value(W);
    const Tensor& xv = value(x);
    require(xv.cols() == 1 && w.cols() == xv.rows(), "affine: shape mismatch");
    Tensor out(w.rows(), 1);
    if (b.valid()) {
      const Tensor& bv = value(b);
      require(bv.size() == w.rows(), "affine: bias shape mismatch");
      std::copy_n(bv.data(), bv.size(), out.data());
    }
    matvec_add(w, xv.data(), out.data());
    return push_op(Op::Affine, b.valid() ? std::vector{W.id, x.id, b.id} : std::vector{W.id, x.id}, std::move(out));
  }

  Var relu(Var x) { return unary(Op::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; }); }
  Var sigmoid(Var x) { return unary(Op::Sigmoid, x, [](double v) { return sigmoid_fn(v); }); }
  Var tanh(Var x) { return unary(Op::Tanh, x, [](double v) { return std::tanh(v); }); }

  Var add(Var x, Var y) { return binary(Op::Add, x, y, [](double a, double b) { return a + b; }); }
  Var sub(Var x, Var y) { return binary(Op::Sub, x, y, [](double a, double b) { return a - b; }); }
  Var pointwise_mul(Var x, Var y) { return binary(Op::Mul, x, y, [](double a, double b) { return a * b; }); }

  Var scale(Var x, double c) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    Node n;
    n.op = Op::Scale;
    n.inputs = {x.id};
    n.value = std::move(out);
    n.coef = c;
    return push(std::move(n));
  }

  /// Stacks column vectors.
  Var concat(std::span<const Var> parts) {
    std::size_t total = 0;
    std::vector<std::size_t> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
      require(value(p).cols() == 1, "concat: inputs must be vectors");
      total += value(p).size();
      ids.push_back(p.id);
    }
    Tensor out(total, 1);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& v = value(p);
      std::copy_n(v.data(), v.size(), out.data() + off);
      off += v.size();
    }
    return push_op(Op::Concat, std::move(ids), std::move(out));
  }

  Var concat(Var x, Var y) {
    const Var parts[] = {x, y};
    return concat(parts);
  }

  /// Contiguous slice [offset, offset+len) of a vector.
  Var slice(Var x, std::size_t offset, std::size_t len) {
    const Tensor& v = value(x);
    require(offset + len <= v.size(), "slice: out of range");
    Tensor out(len, 1);
    std::copy_n(v.data() + offset, len, out.data());
    return push_op(Op::Slice, {x.id}, std::move(out), offset);
  }

  /// Element `i` of a vector as a scalar.
  Var select(Var x, std::size_t i) { return slice(x, i, 1); }

  /// running + increments, with a scalar `running` broadcast over the vector.
  Var scalar_accumulate(Var running, Var increments) {
    const Tensor& r = value(running);
    require(r.size() == 1, "scalar_accumulate: running value must be scalar");
    Tensor out = value(increments);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += r[0];
    return push_op(Op::Accumulate, {running.id, increments.id}, std::move(out));
  }

  Var sum(Var x) {
    const Tensor& v = value(x);
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i];
    return push_op(Op::Sum, {x.id}, Tensor::scalar(s));
  }

  /// Sum of scalars (an empty list gives 0).
  Var add_all(std::span<const Var> scalars) {
    if (scalars.empty()) return scalar_constant(0.0);
    return sum(concat(scalars));
  }

  /// Stabilized log(sum(exp(x))).
  Var logsumexp(Var x) {
    const Tensor& v = value(x);
    require(!v.empty(), "logsumexp of empty vector");
    double mx = -INFINITY;
    for (std::size_t i = 0; i < v.size(); ++i) mx = std::max(mx, v[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) z += std::exp(v[i] - mx);
    const double lse = mx + std::log(z);
    Tensor soft(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) soft[i] = std::exp(v[i] - lse);
    Node n;
    n.op = Op::LogSumExp;
    n.inputs = {x.id};
    n.value = Tensor::scalar(lse);
    n.aux = std::move(soft);
    return push(std::move(n));
  }

  /// Scalar node with an externally computed value and gradient w.r.t. `x`.
  Var inject(Var x, double v, std::span<const double> grad) {
    require(grad.size() == value(x).size(), "inject: gradient size mismatch");
    Node n;
    n.op = Op::Inject;
    n.inputs = {x.id};
    n.value = Tensor::scalar(v);
    n.aux = Tensor::vector({grad.begin(), grad.end()});
    return push(std::move(n));
  }

  /// One LSTM step. `W` is 4H x (X+H) with gate blocks [input; forget; output;
  /// candidate], `b` has 4H entries, `state` is [h; c] with 2H entries. Returns
  /// the new [h; c].
  Var lstm_step(Var W, Var b, Var x, Var state) {
    const Tensor& w = value(W);
    const Tensor& bv = value(b);
    const Tensor& xv = value(x);
    const Tensor& sv = value(state);
    const std::size_t H = sv.size() / 2;
    const std::size_t X = xv.size();
    require(sv.size() == 2 * H && w.rows() == 4 * H && w.cols() == X + H && bv.size() == 4 * H,
            "lstm_step: shape mismatch");
    std::vector<double> in(X + H);
    std::copy_n(xv.data(), X, in.data());
    std::copy_n(sv.data(), H, in.data() + X);
    std::vector<double> pre(bv.data(), bv.data() + 4 * H);
    matvec_add(w, in.data(), pre.data());
    // aux: i, f, o, g, tanh(c)
    Tensor aux(5 * H, 1);
    Tensor out(2 * H, 1);
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = sigmoid_fn(pre[j]);
      const double fg = sigmoid_fn(pre[H + j]);
      const double og = sigmoid_fn(pre[2 * H + j]);
      const double gg = std::tanh(pre[3 * H + j]);
      const double c = fg * sv[H + j] + ig * gg;
      const double tc = std::tanh(c);
      aux[j] = ig;
      aux[H + j] = fg;
      aux[2 * H + j] = og;
      aux[3 * H + j] = gg;
      aux[4 * H + j] = tc;
      out[j] = og * tc;
      out[H + j] = c;
    }
    Node n;
    n.op = Op::LstmStep;
    n.inputs = {W.id, b.id, x.id, state.id};
    n.value = std::move(out);
    n.aux = std::move(aux);
    return push(std::move(n));
  }

  Var recurrent_cell_step(Var W, Var b, Var x, Var state) { return lstm_step(W, b, x, state); }

  // ---- reverse pass -----------------------------------------------------

  /// Gradients of scalar `root` w.r.t. every node; read them with grad().
  void backward(Var root) {
    require(value(root).size() == 1, "backward: root must be a scalar");
    grads_.assign(nodes_.size(), Tensor{});
    grads_[root.id] = Tensor(1, 1, 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      if (grads_[i].empty()) continue;
      backprop(i);
    }
  }

  /// Gradient w.r.t. a node after backward(); zeros if no path reached it.
  Tensor grad(Var v) const {
    if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
    const Tensor& val = value(v);
    return Tensor(val.rows(), val.cols());
  }

  /// Gradients aligned with the ParameterSet; untouched parameters get zeros.
  std::vector<Tensor> parameter_gradients() const {
    require(params_ != nullptr, "tape has no parameter set");
    std::vector<Tensor> out;
    out.reserve(params_->size());
    for (std::size_t p = 0; p < params_->size(); ++p) {
      const std::size_t id = param_nodes_[p];
      if (id != Var::npos && id < grads_.size() && !grads_[id].empty()) {
        out.push_back(grads_[id]);
      } else {
        const Tensor& v = params_->value(p);
        out.emplace_back(v.rows(), v.cols());
      }
    }
    return out;
  }

 private:
  enum class Op {
    Leaf, Param, SelectRow, Affine, Relu, Sigmoid, Tanh, Add, Sub, Mul, Scale,
    Concat, Slice, Accumulate, Sum, LogSumExp, Inject, LstmStep,
  };

  struct Node {
    Op op = Op::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor aux;
    const Tensor* ref = nullptr;
    long param = -1;
    std::size_t index = 0;
    double coef = 0.0;
  };

  static double sigmoid_fn(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  }

  static void matvec_add(const Tensor& w, const double* x, double* y) {
    const std::size_t R = w.rows(), C = w.cols();
    const double* row = w.data();
    for (std::size_t r = 0; r < R; ++r, row += C) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += row[c] * x[c];
      y[r] += acc;
    }
  }

  Var push(Node n) {
#ifndef NDEBUG
    if (!n.ref && !n.value.all_finite()) throw NumericError("non-finite value on tape");
#endif
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  Var push_op(Op op, std::vector<std::size_t> inputs, Tensor out, std::size_t index = 0) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(out);
    n.index = index;
    return push(std::move(n));
  }

  template <class F>
  Var unary(Op op, Var x, F f) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
    return push_op(op, {x.id}, std::move(out));
  }

  template <class F>
  Var binary(Op op, Var x, Var y, F f) {
    const Tensor& a = value(x);
    const Tensor& b = value(y);
    require(a.same_shape(b), "elementwise op: shape mismatch");
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return push_op(op, {x.id, y.id}, std::move(out));
  }

  Tensor& grad_buffer(std::size_t id) {
    Tensor& g = grads_[id];
    if (g.empty()) {
      const Tensor& v = value(Var{id});
      g = Tensor(v.rows(), v.cols());
    }
    return g;
  }

  void backprop(std::size_t i) {
    const Node& n = nodes_[i];
    const Tensor& g = grads_[i];
    const Tensor& y = n.ref ? *n.ref : n.value;
    switch (n.op) {
      case Op::Leaf:
      case Op::Param:
        break;
      case Op::SelectRow: {
        Tensor& gt = grad_buffer(n.inputs[0]);
        double* row = gt.data() + n.index * gt.cols();
        for (std::size_t c = 0; c < g.size(); ++c) row[c] += g[c];
        break;
      }
      case Op::Affine: {
        const Tensor& w = value(Var{n.inputs[0]});
        const Tensor& x = value(Var{n.inputs[1]});
        Tensor& gw = grad_buffer(n.inputs[0]);
        Tensor& gx = grad_buffer(n.inputs[1]);
        const std::size_t R = w.rows(), C = w.cols();
        for (std::size_t r = 0; r < R; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          double* gwr = gw.data() + r * C;
          const double* wr = w.data() + r * C;
          for (std::size_t c = 0; c < C; ++c) {
            gwr[c] += gr * x[c];
            gx[c] += gr * wr[c];
          }
        }
        if (n.inputs.size() == 3) grad_buffer(n.inputs[2]) += g;
        break;
      }
      case Op::Relu: {
        Tensor& gx = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) gx[j] += y[j] > 0.0 ? g[j] : 0.0;
        break;
      }
      case Op::Sigmoid: {
        Tensor& gx = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) gx[j] += g[j] * y[j] * (1.0 - y[j]);
        break;
      }
      case Op::Tanh: {
        Tensor& gx = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) gx[j] += g[j] * (1.0 - y[j] * y[j]);
        break;
      }
      case Op::Add: {
        grad_buffer(n.inputs[0]) += g;
        grad_buffer(n.inputs[1]) += g;
        break;
      }
      case Op::Sub: {
        grad_buffer(n.inputs[0]) += g;
        Tensor& gb = grad_buffer(n.inputs[1]);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] -= g[j];
        break;
      }
      case Op::Mul: {
        const Tensor& a = value(Var{n.inputs[0]});
        const Tensor& b = value(Var{n.inputs[1]});
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * b[j];
        Tensor& gb = grad_buffer(n.inputs[1]);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * a[j];
        break;
      }
      case Op::Scale: {
        Tensor& gx = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) gx[j] += n.coef * g[j];
        break;
      }
      case Op::Concat: {
        std::size_t off = 0;
        for (std::size_t in : n.inputs) {
          Tensor& gi = grad_buffer(in);
          for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[off + j];
          off += gi.size();
        }
        break;
      }
      case Op::Slice: {
        Tensor& gx = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) gx[n.index + j] += g[j];
        break;
      }
      case Op::Accumulate: {
        double total = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) total += g[j];
        grad_buffer(n.inputs[0])[0] += total;
        grad_buffer(n.inputs[1]) += g;
        break;
      }
      case Op::Sum: {
        Tensor& gx = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += g[0];
        break;
      }
      case Op::LogSumExp:
      case Op::Inject: {
        Tensor& gx = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += g[0] * n.aux[j];
        break;
      }
      case Op::LstmStep: {
        const Tensor& w = value(Var{n.inputs[0]});
        const Tensor& xv = value(Var{n.inputs[2]});
        const Tensor& sv = value(Var{n.inputs[3]});
        const std::size_t H = sv.size() / 2;
        const std::size_t X = xv.size();
        const Tensor& a = n.aux;
        std::vector<double> dpre(4 * H);
        Tensor& gs = grad_buffer(n.inputs[3]);
        for (std::size_t j = 0; j < H; ++j) {
          const double ig = a[j], fg = a[H + j], og = a[2 * H + j], gg = a[3 * H + j], tc = a[4 * H + j];
          const double dh = g[j];
          const double dc = g[H + j] + dh * og * (1.0 - tc * tc);
          dpre[j] = dc * gg * ig * (1.0 - ig);
          dpre[H + j] = dc * sv[H + j] * fg * (1.0 - fg);
          dpre[2 * H + j] = dh * tc * og * (1.0 - og);
          dpre[3 * H + j] = dc * ig * (1.0 - gg * gg);
          gs[H + j] += dc * fg;
        }
        Tensor& gw = grad_buffer(n.inputs[0]);
        Tensor& gb = grad_buffer(n.inputs[1]);
        Tensor& gx = grad_buffer(n.inputs[2]);
        const std::size_t C = X + H;
        for (std::size_t r = 0; r < 4 * H; ++r) {
          const double d = dpre[r];
          gb[r] += d;
          if (d == 0.0) continue;
          double* gwr = gw.data() + r * C;
          const double* wr = w.data() + r * C;
          for (std::size_t c = 0; c < X; ++c) {
            gwr[c] += d * xv[c];
            gx[c] += d * wr[c];
          }
          for (std::size_t c = 0; c < H; ++c) {
            gwr[X + c] += d * sv[c];
            gs[c] += d * wr[X + c];
          }
        }
        break;
      }
    }
  }

  const ParameterSet* params_;
  std::vector<std::size_t> param_nodes_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

}  // namespace beamtrain::ndiff
