#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedvc/kernels.hpp"

namespace fedvc {

// Dense row-major tensor, rank 1 or 2 in practice.
template <typename S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;
  TensorT(std::vector<int> shp, S fill = S(0)) : shape(std::move(shp)) {
    data.assign(numel_of(shape), fill);
  }
  TensorT(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
    if ((long)data.size() != numel_of(shape))
      throw std::invalid_argument("TensorT: data size does not match shape");
  }

  static long numel_of(const std::vector<int>& shp) {
    long n = 1;
    for (int d : shp) {
      if (d <= 0) throw std::invalid_argument("TensorT: dimensions must be positive");
      n *= d;
    }
    return n;
  }

  long numel() const { return (long)data.size(); }
  int rank() const { return (int)shape.size(); }
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

  S& at(int i, int j) { return data[(size_t)i * cols() + j]; }
  const S& at(int i, int j) const { return data[(size_t)i * cols() + j]; }
  S& operator[](size_t i) { return data[i]; }
  const S& operator[](size_t i) const { return data[i]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  template <typename T>
  TensorT<T> cast() const {
    TensorT<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = T(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// Handle into a tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind {
  kInput,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kAddRowvec,
  kRelu,
  kSquare,
  kScale,
  kSum,
  kMean,
  kSoftmaxRows,
  kCrossEntropy,
  kPairwiseSqdist,
  kStopGradient,
};

// Reverse-mode tape. One tape per forward pass; not thread safe, each worker
// owns its own instance.
template <typename S>
class TapeT {
 public:
  Var input(TensorT<S> value, bool requires_grad = false) {
    return push(OpKind::kInput, {}, std::move(value), requires_grad);
  }

  Var matmul(Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.rank() == 2 && tb.rank() == 2, "matmul: rank-2 operands required");
    require(ta.shape[1] == tb.shape[0], "matmul: inner dimensions disagree");
    TensorT<S> out({ta.shape[0], tb.shape[1]});
    kern::matmul(ta.data.data(), tb.data.data(), out.data.data(), ta.shape[0], ta.shape[1], tb.shape[1]);
    return push(OpKind::kMatmul, {a, b}, std::move(out));
  }

  Var add(Var a, Var b) { return binary(OpKind::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(OpKind::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(OpKind::kMul, a, b); }

  // a is n x c, v is a length-c vector (or 1 x c) added to every row.
  Var add_rowvec(Var a, Var v) {
    const auto& ta = val(a);
    const auto& tv = val(v);
    require(ta.rank() == 2, "add_rowvec: matrix operand required");
    require(tv.numel() == ta.shape[1], "add_rowvec: vector length must match columns");
    TensorT<S> out = ta;
    for (int i = 0; i < ta.shape[0]; ++i)
      for (int j = 0; j < ta.shape[1]; ++j) out.at(i, j) += tv[(size_t)j];
    return push(OpKind::kAddRowvec, {a, v}, std::move(out));
  }

  Var relu(Var a) {
    TensorT<S> out = val(a);
    for (auto& x : out.data) x = x > S(0) ? x : S(0);
    return push(OpKind::kRelu, {a}, std::move(out));
  }

  Var square(Var a) {
    TensorT<S> out = val(a);
    for (auto& x : out.data) x = x * x;
    return push(OpKind::kSquare, {a}, std::move(out));
  }

  Var scale(Var a, double c) {
    TensorT<S> out = val(a);
    for (auto& x : out.data) x = S(double(x) * c);
    Var v = push(OpKind::kScale, {a}, std::move(out));
    nodes_[v.id].scalar = c;
    return v;
  }

  Var sum(Var a) {
    double acc = 0.0;
    for (auto x : val(a).data) acc += double(x);
    return push(OpKind::kSum, {a}, TensorT<S>({1}, {S(acc)}));
  }

  Var mean(Var a) {
    double acc = 0.0;
    for (auto x : val(a).data) acc += double(x);
    return push(OpKind::kMean, {a}, TensorT<S>({1}, {S(acc / double(val(a).numel()))}));
  }

  Var softmax_rows(Var a) {
    const auto& ta = val(a);
    require(ta.rank() == 2, "softmax_rows: matrix operand required");
    TensorT<S> out({ta.shape[0], ta.shape[1]});
    for (int i = 0; i < ta.shape[0]; ++i) {
      double mx = -1e300;
      for (int j = 0; j < ta.shape[1]; ++j) mx = std::max(mx, double(ta.at(i, j)));
      double denom = 0.0;
      for (int j = 0; j < ta.shape[1]; ++j) denom += std::exp(double(ta.at(i, j)) - mx);
      for (int j = 0; j < ta.shape[1]; ++j)
        out.at(i, j) = S(std::exp(double(ta.at(i, j)) - mx) / denom);
    }
    return push(OpKind::kSoftmaxRows, {a}, std::move(out));
  }

  // Mean over the batch of -log softmax(logits)[label].
  Var cross_entropy(Var logits, const std::vector<int>& labels) {
    const auto& tl = val(logits);
    require(tl.rank() == 2, "cross_entropy: rank-2 logits required");
    require((int)labels.size() == tl.shape[0], "cross_entropy: one label per row required");
    for (int y : labels)
      require(y >= 0 && y < tl.shape[1], "cross_entropy: label out of range");
    double total = 0.0;
    for (int i = 0; i < tl.shape[0]; ++i) {
      double mx = -1e300;
      for (int j = 0; j < tl.shape[1]; ++j) mx = std::max(mx, double(tl.at(i, j)));
      double denom = 0.0;
      for (int j = 0; j < tl.shape[1]; ++j) denom += std::exp(double(tl.at(i, j)) - mx);
      total += -(double(tl.at(i, labels[i])) - mx - std::log(denom));
    }
    Var v = push(OpKind::kCrossEntropy, {logits}, TensorT<S>({1}, {S(total / tl.shape[0])}));
    nodes_[v.id].labels = labels;
    return v;
  }

  // z is n x d, c is m x d; out[i][j] = ||z_i - c_j||^2.
  Var pairwise_sqdist(Var z, Var c) {
    const auto& tz = val(z);
    const auto& tc = val(c);
    require(tz.rank() == 2 && tc.rank() == 2, "pairwise_sqdist: rank-2 operands required");
    require(tz.shape[1] == tc.shape[1], "pairwise_sqdist: dimension mismatch");
    TensorT<S> out({tz.shape[0], tc.shape[0]});
    kern::pairwise_sqdist(tz.data.data(), tc.data.data(), out.data.data(), tz.shape[0], tc.shape[0], tz.shape[1]);
    return push(OpKind::kPairwiseSqdist, {z, c}, std::move(out));
  }

  // Identity forward; backward treats the operand as a constant.
  Var stop_gradient(Var a) {
    Var v = push(OpKind::kStopGradient, {a}, val(a));
    nodes_[v.id].needs_grad = false;
    return v;
  }

  const TensorT<S>& value(Var v) const { return val(v); }

  const TensorT<S>& grad(Var v) const {
    check(v);
    if (grads_.empty()) throw std::logic_error("Tape: backward() has not run");
    return grads_[v.id];
  }

  void backward(Var loss) {
    check(loss);
    require(val(loss).numel() == 1, "backward: loss must be scalar");
    grads_.clear();
    grads_.resize(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) grads_[i] = TensorT<S>(nodes_[i].value.shape, S(0));
    grads_[loss.id].data[0] = S(1);
    for (int u = loss.id; u >= 0; --u) {
      if (!nodes_[u].needs_grad) continue;
      propagate(u);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> in;
    TensorT<S> value;
    bool needs_grad = false;
    double scalar = 0.0;
    std::vector<int> labels;
  };

  std::vector<Node> nodes_;
  std::vector<TensorT<S>> grads_;

  static void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("Tape: ") + msg);
  }

  void check(Var v) const {
    if (!v.valid() || v.id >= (int)nodes_.size()) throw std::invalid_argument("Tape: invalid Var");
  }

  const TensorT<S>& val(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }

  Var push(OpKind kind, std::vector<Var> inputs, TensorT<S> value, bool rg = false) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.needs_grad = rg;
    for (Var v : inputs) {
      check(v);
      n.in.push_back(v.id);
      if (nodes_[v.id].needs_grad) n.needs_grad = true;
    }
    if (kind == OpKind::kStopGradient) n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return Var{(int)nodes_.size() - 1};
  }

  Var binary(OpKind kind, Var a, Var b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.same_shape(tb), "elementwise op: shape mismatch");
    TensorT<S> out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) {
      switch (kind) {
        case OpKind::kAdd: out.data[i] = ta.data[i] + tb.data[i]; break;
        case OpKind::kSub: out.data[i] = ta.data[i] - tb.data[i]; break;
        case OpKind::kMul: out.data[i] = ta.data[i] * tb.data[i]; break;
        default: require(false, "binary: bad op");
      }
    }
    return push(kind, {a, b}, std::move(out));
  }

  bool wants(int id) const { return nodes_[id].needs_grad; }

  void propagate(int u) {
    Node& n = nodes_[u];
    const TensorT<S>& g = grads_[u];
    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kStopGradient:
        break;
      case OpKind::kMatmul: {
        int a = n.in[0], b = n.in[1];
        const auto& ta = nodes_[a].value;
        const auto& tb = nodes_[b].value;
        if (wants(a)) {
          TensorT<S> ga(ta.shape);
          kern::matmul_nt(g.data.data(), tb.data.data(), ga.data.data(), ta.shape[0], tb.shape[1], ta.shape[1]);
          accumulate(a, ga);
        }
        if (wants(b)) {
          TensorT<S> gb(tb.shape);
          kern::matmul_tn(ta.data.data(), g.data.data(), gb.data.data(), tb.shape[0], ta.shape[0], tb.shape[1]);
          accumulate(b, gb);
        }
        break;
      }
      case OpKind::kAdd:
        addinto(n.in[0], g, 1.0);
        addinto(n.in[1], g, 1.0);
        break;
      case OpKind::kSub:
        addinto(n.in[0], g, 1.0);
        addinto(n.in[1], g, -1.0);
        break;
      case OpKind::kMul: {
        int a = n.in[0], b = n.in[1];
        if (wants(a))
          for (size_t i = 0; i < g.data.size(); ++i) grads_[a].data[i] += g.data[i] * nodes_[b].value.data[i];
        if (wants(b))
          for (size_t i = 0; i < g.data.size(); ++i) grads_[b].data[i] += g.data[i] * nodes_[a].value.data[i];
        break;
      }
      case OpKind::kAddRowvec: {
        int a = n.in[0], v = n.in[1];
        addinto(a, g, 1.0);
        if (wants(v)) {
          int rows = g.rows(), cols = g.cols();
          for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) acc += double(g.at(i, j));
            grads_[v].data[(size_t)j] += S(acc);
          }
        }
        break;
      }
      case OpKind::kRelu: {
        int a = n.in[0];
        if (wants(a))
          for (size_t i = 0; i < g.data.size(); ++i)
            if (nodes_[a].value.data[i] > S(0)) grads_[a].data[i] += g.data[i];
        break;
      }
      case OpKind::kSquare: {
        int a = n.in[0];
        if (wants(a))
          for (size_t i = 0; i < g.data.size(); ++i)
            grads_[a].data[i] += S(2) * nodes_[a].value.data[i] * g.data[i];
        break;
      }
      case OpKind::kScale:
        addinto(n.in[0], g, n.scalar);
        break;
      case OpKind::kSum: {
        int a = n.in[0];
        if (wants(a))
          for (auto& x : grads_[a].data) x += g.data[0];
        break;
      }
      case OpKind::kMean: {
        int a = n.in[0];
        if (wants(a)) {
          S w = S(double(g.data[0]) / double(nodes_[a].value.numel()));
          for (auto& x : grads_[a].data) x += w;
        }
        break;
      }
      case OpKind::kSoftmaxRows: {
        int a = n.in[0];
        if (!wants(a)) break;
        const auto& s = n.value;
        int rows = s.rows(), cols = s.cols();
        for (int i = 0; i < rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < cols; ++j) dot += double(g.at(i, j)) * double(s.at(i, j));
          for (int j = 0; j < cols; ++j)
            grads_[a].at(i, j) += S(double(s.at(i, j)) * (double(g.at(i, j)) - dot));
        }
        break;
      }
      case OpKind::kCrossEntropy: {
        int a = n.in[0];
        if (!wants(a)) break;
        const auto& tl = nodes_[a].value;
        int rows = tl.rows(), cols = tl.cols();
        double go = double(g.data[0]) / rows;
        for (int i = 0; i < rows; ++i) {
          double mx = -1e300;
          for (int j = 0; j < cols; ++j) mx = std::max(mx, double(tl.at(i, j)));
          double denom = 0.0;
          for (int j = 0; j < cols; ++j) denom += std::exp(double(tl.at(i, j)) - mx);
          for (int j = 0; j < cols; ++j) {
            double p = std::exp(double(tl.at(i, j)) - mx) / denom;
            double ind = (j == n.labels[i]) ? 1.0 : 0.0;
            grads_[a].at(i, j) += S((p - ind) * go);
          }
        }
        break;
      }
      case OpKind::kPairwiseSqdist: {
        int zi = n.in[0], ci = n.in[1];
        const auto& tz = nodes_[zi].value;
        const auto& tc = nodes_[ci].value;
        int nn = tz.rows(), mm = tc.rows(), dd = tz.cols();
        if (wants(zi)) {
          for (int i = 0; i < nn; ++i)
            for (int t = 0; t < dd; ++t) {
              double acc = 0.0;
              for (int j = 0; j < mm; ++j)
                acc += double(g.at(i, j)) * 2.0 * (double(tz.at(i, t)) - double(tc.at(j, t)));
              grads_[zi].at(i, t) += S(acc);
            }
        }
        if (wants(ci)) {
          for (int j = 0; j < mm; ++j)
            for (int t = 0; t < dd; ++t) {
              double acc = 0.0;
              for (int i = 0; i < nn; ++i)
                acc += double(g.at(i, j)) * 2.0 * (double(tc.at(j, t)) - double(tz.at(i, t)));
              grads_[ci].at(j, t) += S(acc);
            }
        }
        break;
      }
    }
  }

  void accumulate(int id, const TensorT<S>& delta) {
    auto& dst = grads_[id];
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += delta.data[i];
  }

  void addinto(int id, const TensorT<S>& g, double w) {
    if (!wants(id)) return;
    auto& dst = grads_[id];
    if (w == 1.0) {
      for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
    } else {
      for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += S(double(g.data[i]) * w);
    }
  }
};

using Tape = TapeT<float>;

}  // namespace fedvc
