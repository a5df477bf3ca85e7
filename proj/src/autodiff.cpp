#include "vaetk/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vaetk/errors.hpp"

namespace vaetk::ad {

const char* name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::MatMul: return "matmul";
    case OpKind::Exp: return "exp";
    case OpKind::Expm1: return "expm1";
    case OpKind::Log: return "log";
    case OpKind::Relu: return "relu";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Square: return "square";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Reshape: return "reshape";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Transpose: return "transpose";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::Narrow: return "narrow";
    case OpKind::Upsample: return "upsample";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Var / Gradients / Graph

const Array& Var::value() const {
  if (!graph_) throw ContractError("use of an unbound Var");
  return graph_->value(id_);
}

bool Var::requires_grad() const { return graph_->requires_grad(id_); }

const Array& Gradients::operator[](Var v) const {
  if (!has(v))
    throw ContractError("no gradient recorded for node " + std::to_string(v.id()));
  return grads_[v.id()];
}

bool Gradients::has(Var v) const { return v.id() < present_.size() && present_[v.id()]; }

Var Graph::leaf(Array value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(OpKind kind, Array value, std::vector<std::size_t> parents,
                  BackwardFn backward) {
  bool needs = false;
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("parent node does not exist");
    needs = needs || nodes_[p].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(value), std::move(parents), needs,
                        needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(Var loss) const {
  if (&loss.graph() != this) throw ContractError("loss belongs to another graph");
  const Array& lv = nodes_.at(loss.id()).value;
  if (lv.size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " +
                        to_string(lv.shape()));

  Gradients out;
  out.grads_.resize(nodes_.size());
  out.present_.assign(nodes_.size(), false);
  if (nodes_[loss.id()].requires_grad) {
    out.grads_[loss.id()] = Array(lv.shape(), 1.0);
    out.present_[loss.id()] = true;
  }

  std::vector<Array*> slots;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!out.present_[id]) continue;
    const Node& node = nodes_[id];
    if (!node.backward) continue;
    slots.assign(node.parents.size(), nullptr);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      auto p = node.parents[k];
      if (!nodes_[p].requires_grad) continue;
      if (!out.present_[p]) {
        out.grads_[p] = Array(nodes_[p].value.shape(), 0.0);
        out.present_[p] = true;
      }
      slots[k] = &out.grads_[p];
    }
    node.backward(out.grads_[id], slots);
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].kind == OpKind::Leaf && nodes_[id].requires_grad && !out.present_[id]) {
      out.grads_[id] = Array(nodes_[id].value.shape(), 0.0);
      out.present_[id] = true;
    }
  }
  return out;
}

double Graph::min_abs_relu_input() const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& node : nodes_) {
    if (node.kind != OpKind::Relu) continue;
    for (double v : nodes_[node.parents[0]].value.data()) best = std::min(best, std::abs(v));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Array helpers

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

// Strides of `src` viewed inside `target`, zero along broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& target) {
  if (src.size() > target.size())
    throw DimensionError("cannot broadcast " + to_string(src) + " to " + to_string(target));
  const std::size_t off = target.size() - src.size();
  std::vector<std::size_t> strides(target.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    if (src[i] != target[i + off] && src[i] != 1)
      throw DimensionError("cannot broadcast " + to_string(src) + " to " +
                           to_string(target));
    strides[i + off] = src[i] == 1 ? 0 : s;
    s *= src[i];
  }
  return strides;
}

// Calls fn(target_index, source_offset) for every element of target.
template <typename Fn>
void for_each_broadcast(const Shape& src, const Shape& target, Fn&& fn) {
  const auto strides = broadcast_strides(src, target);
  const std::size_t total = numel(target);
  const std::size_t r = target.size();
  if (r == 0) {
    fn(std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  const std::size_t inner = target[r - 1];
  const std::size_t inner_stride = strides[r - 1];
  for (std::size_t t = 0; t < total; t += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(t + j, off + j * inner_stride);
    // advance the odometer over all but the last axis
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      off += strides[ax];
      if (idx[ax] < target[ax]) break;
      off -= strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

void check_same_graph(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("use of an unbound Var");
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
}

void accumulate(Array* slot, const Array& g) {
  if (!slot) return;
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

template <typename Fwd, typename Bwd>
Var unary(OpKind kind, Var a, Fwd fwd, Bwd dfdx) {
  const Array& x = a.value();
  Array out(x.shape());
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = fwd(xs[i]);
  Graph& g = a.graph();
  const std::size_t ia = a.id();
  const std::size_t self = g.size();
  return g.record(kind, std::move(out), {ia},
                  [&g, ia, self, dfdx](const Array& gout, std::span<Array* const> slots) {
                    auto xs = g.value(ia).data();
                    auto ys = g.value(self).data();
                    auto gs = gout.data();
                    auto dst = slots[0]->data();
                    for (std::size_t i = 0; i < dst.size(); ++i)
                      dst[i] += gs[i] * dfdx(xs[i], ys[i]);
                  });
}

}  // namespace

Array broadcast_array(const Array& a, const Shape& target) {
  if (a.shape() == target) return a;
  Array out(target);
  auto src = a.data();
  auto dst = out.data();
  for_each_broadcast(a.shape(), target,
                     [&](std::size_t t, std::size_t s) { dst[t] = src[s]; });
  return out;
}

Array sum_to(const Array& a, const Shape& target) {
  if (a.shape() == target) return a;
  Array out(target);
  auto src = a.data();
  auto dst = out.data();
  for_each_broadcast(target, a.shape(),
                     [&](std::size_t t, std::size_t s) { dst[s] += src[t]; });
  return out;
}

Array matmul(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot contract " + to_string(a.shape()) + " with " +
                         to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array out(Shape{m, n});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  return out;
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  if (stride == 0) throw SpecError("conv stride must be positive");
  if (in + 2 * padding < kernel)
    throw DimensionError("conv kernel " + std::to_string(kernel) +
                         " larger than padded input " + std::to_string(in + 2 * padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting

namespace {

enum class Binary { Add, Sub, Mul, Div };

Var binary(Binary op, Var a, Var b) {
  check_same_graph(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  const Shape shape = broadcast_shape(av.shape(), bv.shape());
  const Array ab = broadcast_array(av, shape);
  const Array bb = broadcast_array(bv, shape);
  Array out(shape);
  auto x = ab.data();
  auto y = bb.data();
  auto o = out.data();
  switch (op) {
    case Binary::Add:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      break;
    case Binary::Sub:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      break;
    case Binary::Mul:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      break;
    case Binary::Div:
      for (std::size_t i = 0; i < o.size(); ++i) {
        if (y[i] == 0.0) throw DomainError("div: division by zero");
        o[i] = x[i] / y[i];
      }
      break;
  }
  static constexpr OpKind kinds[] = {OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div};
  Graph& g = a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(
      kinds[static_cast<int>(op)], std::move(out), {ia, ib},
      [&g, op, ia, ib, shape](const Array& gout, std::span<Array* const> slots) {
        const Array& av = g.value(ia);
        const Array& bv = g.value(ib);
        auto gs = gout.data();
        if (slots[0]) {
          Array ga(shape);
          auto d = ga.data();
          switch (op) {
            case Binary::Add:
            case Binary::Sub:
              ga = gout;
              break;
            case Binary::Mul: {
              const Array bb = broadcast_array(bv, shape);
              for (std::size_t i = 0; i < d.size(); ++i) d[i] = gs[i] * bb[i];
              break;
            }
            case Binary::Div: {
              const Array bb = broadcast_array(bv, shape);
              for (std::size_t i = 0; i < d.size(); ++i) d[i] = gs[i] / bb[i];
              break;
            }
          }
          accumulate(slots[0], sum_to(ga, av.shape()));
        }
        if (slots[1]) {
          Array gb(shape);
          auto d = gb.data();
          switch (op) {
            case Binary::Add:
              gb = gout;
              break;
            case Binary::Sub:
              for (std::size_t i = 0; i < d.size(); ++i) d[i] = -gs[i];
              break;
            case Binary::Mul: {
              const Array ab = broadcast_array(av, shape);
              for (std::size_t i = 0; i < d.size(); ++i) d[i] = gs[i] * ab[i];
              break;
            }
            case Binary::Div: {
              const Array ab = broadcast_array(av, shape);
              const Array bb = broadcast_array(bv, shape);
              for (std::size_t i = 0; i < d.size(); ++i)
                d[i] = -gs[i] * ab[i] / (bb[i] * bb[i]);
              break;
            }
          }
          accumulate(slots[1], sum_to(gb, bv.shape()));
        }
      });
}

}  // namespace

Var add(Var a, Var b) { return binary(Binary::Add, a, b); }
Var sub(Var a, Var b) { return binary(Binary::Sub, a, b); }
Var mul(Var a, Var b) { return binary(Binary::Mul, a, b); }
Var div(Var a, Var b) { return binary(Binary::Div, a, b); }

Var matmul(Var a, Var b) {
  check_same_graph(a, b);
  Array out = matmul(a.value(), b.value());
  Graph& g = a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(OpKind::MatMul, std::move(out), {ia, ib},
                  [&g, ia, ib](const Array& gout, std::span<Array* const> slots) {
                    const Array& av = g.value(ia);
                    const Array& bv = g.value(ib);
                    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
                    if (slots[0])
                      gemm_nt(gout.data().data(), bv.data().data(),
                              slots[0]->data().data(), m, n, k);
                    if (slots[1])
                      gemm_tn(av.data().data(), gout.data().data(),
                              slots[1]->data().data(), m, k, n);
                  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

Var exp(Var a) {
  return unary(OpKind::Exp, a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var expm1(Var a) {
  return unary(OpKind::Expm1, a, [](double x) { return std::expm1(x); },
               [](double, double y) { return y + 1.0; });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  return unary(OpKind::Log, a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(OpKind::Square, a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var add_scalar(Var a, double c) {
  return unary(OpKind::AddScalar, a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double c) {
  return unary(OpKind::MulScalar, a, [c](double x) { return x * c; },
               [c](double, double) { return c; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Graph& g = a.graph();
  return g.record(OpKind::Sum, Array::scalar(total), {a.id()},
                  [](const Array& gout, std::span<Array* const> slots) {
                    const double gv = gout[0];
                    for (double& d : slots[0]->data()) d += gv;
                  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Graph& g = a.graph();
  return g.record(OpKind::Mean, Array::scalar(total / n), {a.id()},
                  [n](const Array& gout, std::span<Array* const> slots) {
                    const double gv = gout[0] / n;
                    for (double& d : slots[0]->data()) d += gv;
                  });
}

namespace {

Var reduce_axis(OpKind kind, Var a, int axis, bool keepdim) {
  const Array& x = a.value();
  const std::size_t ax = normalize_axis(axis, x.rank());
  const Shape& in = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= in[i];
  for (std::size_t i = ax + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = in[ax];
  const double scale = kind == OpKind::Mean ? 1.0 / static_cast<double>(len) : 1.0;

  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (i != ax)
      out_shape.push_back(in[i]);
    else if (keepdim)
      out_shape.push_back(1);
  }
  Array out(out_shape);
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) os[o * inner + i] += xs[(o * len + l) * inner + i];
  if (scale != 1.0)
    for (double& v : os) v *= scale;

  Graph& g = a.graph();
  return g.record(kind, std::move(out), {a.id()},
                  [outer, len, inner, scale](const Array& gout, std::span<Array* const> slots) {
                    auto gs = gout.data();
                    auto dst = slots[0]->data();
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t l = 0; l < len; ++l)
                        for (std::size_t i = 0; i < inner; ++i)
                          dst[(o * len + l) * inner + i] += gs[o * inner + i] * scale;
                  });
}

}  // namespace

Var sum(Var a, int axis, bool keepdim) { return reduce_axis(OpKind::Sum, a, axis, keepdim); }
Var mean(Var a, int axis, bool keepdim) { return reduce_axis(OpKind::Mean, a, axis, keepdim); }

// ---------------------------------------------------------------------------
// Shape ops

Var broadcast_to(Var a, const Shape& shape) {
  Array out = broadcast_array(a.value(), shape);
  Graph& g = a.graph();
  const Shape src = a.shape();
  return g.record(OpKind::Broadcast, std::move(out), {a.id()},
                  [src](const Array& gout, std::span<Array* const> slots) {
                    accumulate(slots[0], sum_to(gout, src));
                  });
}

Var reshape(Var a, const Shape& shape) {
  Array out = a.value().reshaped(shape);
  Graph& g = a.graph();
  return g.record(OpKind::Reshape, std::move(out), {a.id()},
                  [](const Array& gout, std::span<Array* const> slots) {
                    auto gs = gout.data();
                    auto dst = slots[0]->data();
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gs[i];
                  });
}

Var transpose(Var a) {
  const Array& x = a.value();
  if (x.rank() != 2)
    throw DimensionError("transpose expects a rank-2 array, got " + to_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Array out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  Graph& g = a.graph();
  return g.record(OpKind::Transpose, std::move(out), {a.id()},
                  [r, c](const Array& gout, std::span<Array* const> slots) {
                    Array& dst = *slots[0];
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) dst.at(i, j) += gout.at(j, i);
                  });
}

Var narrow(Var a, int axis, std::size_t start, std::size_t length) {
  const Array& x = a.value();
  const std::size_t ax = normalize_axis(axis, x.rank());
  const Shape& in = x.shape();
  if (length == 0 || start + length > in[ax])
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside extent " +
                         std::to_string(in[ax]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= in[i];
  for (std::size_t i = ax + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = in[ax];
  Shape out_shape = in;
  out_shape[ax] = length;
  Array out(out_shape);
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((o * len + start) * inner),
                length * inner, os.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  Graph& g = a.graph();
  return g.record(OpKind::Narrow, std::move(out), {a.id()},
                  [outer, len, inner, start, length](const Array& gout,
                                                     std::span<Array* const> slots) {
                    auto gs = gout.data();
                    auto dst = slots[0]->data();
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t k = 0; k < length * inner; ++k)
                        dst[(o * len + start) * inner + k] += gs[o * length * inner + k];
                  });
}

Var upsample_nearest(Var x, std::size_t factor) {
  const Array& xv = x.value();
  if (xv.rank() != 4)
    throw DimensionError("upsample expects [N, C, H, W], got " + to_string(xv.shape()));
  if (factor == 0) throw ContractError("upsample factor must be positive");
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  Array out(Shape{xv.dim(0), xv.dim(1), oh, ow});
  auto xs = xv.data();
  auto os = out.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        os[(p * oh + i) * ow + j] = xs[(p * h + i / factor) * w + j / factor];
  Graph& g = x.graph();
  return g.record(OpKind::Upsample, std::move(out), {x.id()},
                  [planes, h, w, factor](const Array& gout, std::span<Array* const> slots) {
                    const std::size_t oh = h * factor, ow = w * factor;
                    auto gs = gout.data();
                    auto dst = slots[0]->data();
                    for (std::size_t p = 0; p < planes; ++p)
                      for (std::size_t i = 0; i < oh; ++i)
                        for (std::size_t j = 0; j < ow; ++j)
                          dst[(p * h + i / factor) * w + j / factor] +=
                              gs[(p * oh + i) * ow + j];
                  });
}

// ---------------------------------------------------------------------------
// conv2d as im2col + matmul

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

// cols: [C*kh*kw, oh*ow] for image `img` of the batch.
void im2col(const ConvGeom& g, const double* img, double* cols) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const std::size_t row = (ch * g.kh + ki) * g.kw + kj;
        double* dst = cols + row * g.positions();
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<std::ptrdiff_t>(g.h) &&
                                jj < static_cast<std::ptrdiff_t>(g.w);
            dst[oi * g.ow + oj] =
                inside ? img[(ch * g.h + static_cast<std::size_t>(ii)) * g.w +
                             static_cast<std::size_t>(jj)]
                       : 0.0;
          }
        }
      }
}

void col2im(const ConvGeom& g, const double* cols, double* img) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const std::size_t row = (ch * g.kh + ki) * g.kw + kj;
        const double* src = cols + row * g.positions();
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(ch * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)] +=
                src[oi * g.ow + oj];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var weight, std::size_t stride, std::size_t padding) {
  check_same_graph(x, weight);
  const Array& xv = x.value();
  const Array& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 4)
    throw DimensionError("conv2d expects x [N, C, H, W] and weight [O, C, kh, kw], got " +
                         to_string(xv.shape()) + " and " + to_string(wv.shape()));
  if (xv.dim(1) != wv.dim(1))
    throw DimensionError("conv2d: input has " + std::to_string(xv.dim(1)) +
                         " channels, weight expects " + std::to_string(wv.dim(1)));
  ConvGeom geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3),
               stride,    padding,   0,         0};
  geo.oh = conv_out_extent(geo.h, geo.kh, stride, padding);
  geo.ow = conv_out_extent(geo.w, geo.kw, stride, padding);

  Array out(Shape{geo.n, geo.o, geo.oh, geo.ow});
  std::vector<double> cols(geo.patch() * geo.positions());
  const std::size_t img_size = geo.c * geo.h * geo.w;
  const std::size_t out_size = geo.o * geo.positions();
  for (std::size_t b = 0; b < geo.n; ++b) {
    im2col(geo, xv.data().data() + b * img_size, cols.data());
    gemm_nn(wv.data().data(), cols.data(), out.data().data() + b * out_size, geo.o,
            geo.patch(), geo.positions());
  }

  Graph& g = x.graph();
  const std::size_t ix = x.id(), iw = weight.id();
  return g.record(
      OpKind::Conv2d, std::move(out), {ix, iw},
      [&g, ix, iw, geo](const Array& gout, std::span<Array* const> slots) {
        const Array& xv = g.value(ix);
        const Array& wv = g.value(iw);
        const std::size_t img_size = geo.c * geo.h * geo.w;
        const std::size_t out_size = geo.o * geo.positions();
        std::vector<double> cols(geo.patch() * geo.positions());
        for (std::size_t b = 0; b < geo.n; ++b) {
          const double* gb = gout.data().data() + b * out_size;
          if (slots[1]) {
            im2col(geo, xv.data().data() + b * img_size, cols.data());
            gemm_nt(gb, cols.data(), slots[1]->data().data(), geo.o, geo.positions(),
                    geo.patch());
          }
          if (slots[0]) {
            std::fill(cols.begin(), cols.end(), 0.0);
            gemm_tn(wv.data().data(), gb, cols.data(), geo.o, geo.patch(), geo.positions());
            col2im(geo, cols.data(), slots[0]->data().data() + b * img_size);
          }
        }
      });
}

// ---------------------------------------------------------------------------

Var apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw ContractError(std::string(name(kind)) + " takes " + std::to_string(n) +
                          " inputs, got " + std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::Leaf: throw ContractError("leaves are created with Graph::leaf");
    case OpKind::Add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::Sub: need(2); return sub(inputs[0], inputs[1]);
    case OpKind::Mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::Div: need(2); return div(inputs[0], inputs[1]);
    case OpKind::MatMul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::Exp: need(1); return exp(inputs[0]);
    case OpKind::Expm1: need(1); return expm1(inputs[0]);
    case OpKind::Log: need(1); return log(inputs[0]);
    case OpKind::Relu: need(1); return relu(inputs[0]);
    case OpKind::Square: need(1); return square(inputs[0]);
    case OpKind::Sum:
      need(1);
      return attrs.axis < 0 ? sum(inputs[0]) : sum(inputs[0], attrs.axis, attrs.keepdim);
    case OpKind::Mean:
      need(1);
      return attrs.axis < 0 ? mean(inputs[0]) : mean(inputs[0], attrs.axis, attrs.keepdim);
    case OpKind::Broadcast: need(1); return broadcast_to(inputs[0], attrs.shape);
    case OpKind::Reshape: need(1); return reshape(inputs[0], attrs.shape);
    case OpKind::Conv2d: need(2); return conv2d(inputs[0], inputs[1], attrs.stride, attrs.padding);
    case OpKind::Transpose: need(1); return transpose(inputs[0]);
    case OpKind::AddScalar: need(1); return add_scalar(inputs[0], attrs.scalar);
    case OpKind::MulScalar: need(1); return mul_scalar(inputs[0], attrs.scalar);
    case OpKind::Narrow:
      need(1);
      return narrow(inputs[0], attrs.axis, attrs.start, attrs.length);
    case OpKind::Upsample: need(1); return upsample_nearest(inputs[0], attrs.factor);
  }
  throw ContractError("unknown op kind");
}

}  // namespace vaetk::ad
