#pragma once

// Reverse-mode automatic differentiation over dense double arrays.
//
// A Graph records every operation in insertion order, so parents always
// precede children and a single reverse sweep computes all gradients.
// Graphs are single-threaded; separate graphs may live on separate threads.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "vaetk/array.hpp"

namespace vaetk::ad {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Exp,
  Expm1,
  Log,
  Relu,
  Sum,
  Mean,
  Square,
  Broadcast,
  Reshape,
  Conv2d,
  Transpose,
  AddScalar,
  MulScalar,
  Narrow,
  Upsample,
};

const char* name(OpKind kind);

// Attributes for ops that take them. Unused fields are ignored.
struct OpAttrs {
  Shape shape;            // Broadcast, Reshape
  int axis = -1;          // Sum, Mean (-1 = all elements), Narrow
  bool keepdim = false;   // Sum, Mean over an axis
  std::size_t stride = 1;   // Conv2d
  std::size_t padding = 0;  // Conv2d
  double scalar = 0.0;    // AddScalar, MulScalar
  std::size_t start = 0;  // Narrow
  std::size_t length = 0; // Narrow
  std::size_t factor = 2; // Upsample
};

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Graph& graph() const { return *graph_; }
  bool requires_grad() const;
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of a backward sweep. Every requires_grad leaf has an entry, zero if
/// it did not participate in the loss.
class Gradients {
 public:
  const Array& operator[](Var v) const;
  bool has(Var v) const;

 private:
  friend class Graph;
  std::vector<Array> grads_;
  std::vector<bool> present_;
};

class Graph {
 public:
  // Called with the output gradient and one accumulator per parent; the
  // accumulator pointer is null when that parent does not need a gradient.
  using BackwardFn =
      std::function<void(const Array& grad_out, std::span<Array* const> parent_grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Array value, bool requires_grad = true);
  Var constant(Array value) { return leaf(std::move(value), false); }

  // Registers the result of an operation. Used by the op implementations.
  Var record(OpKind kind, Array value, std::vector<std::size_t> parents,
             BackwardFn backward);

  Gradients backward(Var loss) const;

  std::size_t size() const { return nodes_.size(); }
  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::span<const std::size_t> parents(std::size_t id) const {
    return nodes_.at(id).parents;
  }

  // Smallest |input| seen by any ReLU node; +inf when there is none.
  double min_abs_relu_input() const;

 private:
  struct Node {
    OpKind kind;
    Array value;
    std::vector<std::size_t> parents;
    bool requires_grad;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // stable references across appends
};

// Generic dispatch over the op set.
Var apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var matmul(Var a, Var b);
Var exp(Var a);
Var expm1(Var a);
Var log(Var a);
Var relu(Var a);
Var square(Var a);
Var sum(Var a);
Var sum(Var a, int axis, bool keepdim = false);
Var mean(Var a);
Var mean(Var a, int axis, bool keepdim = false);
Var broadcast_to(Var a, const Shape& shape);
Var reshape(Var a, const Shape& shape);
Var transpose(Var a);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);
Var narrow(Var a, int axis, std::size_t start, std::size_t length);
Var upsample_nearest(Var x, std::size_t factor);
// x: [N, C, H, W], weight: [O, C, kh, kw] -> [N, O, Ho, Wo].
Var conv2d(Var x, Var weight, std::size_t stride, std::size_t padding);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator*(Var a, double c) { return mul_scalar(a, c); }
inline Var operator*(double c, Var a) { return mul_scalar(a, c); }

// Array-level helpers shared with code that does not need a graph.
Shape broadcast_shape(const Shape& a, const Shape& b);
Array broadcast_array(const Array& a, const Shape& target);
Array sum_to(const Array& a, const Shape& target);
Array matmul(const Array& a, const Array& b);
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding);

}  // namespace vaetk::ad
