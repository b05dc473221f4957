#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fous::ad {

using Array = Eigen::ArrayXd;
using Shape = std::vector<long>;

long shape_size(const Shape& s);

struct Node {
  Array value;
  Array grad;
  Shape shape;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // adds into parent grads
  bool requires_grad = false;
  std::uint64_t pass = 0;  // id of the backward pass that last touched this node
  std::uint64_t id = 0;    // creation order, keeps traversal deterministic
};

/// Handle to a node in the dynamically built computation graph.
/// Values are flat double arrays; `shape` is advisory except for the
/// 2-D ops (matmul, transpose) which require it.
class Var {
 public:
  Var() = default;

  static Var constant(Array v, Shape shape);
  static Var constant(double v);
  static Var leaf(Array v, Shape shape);  // trainable parameter

  bool valid() const { return n_ != nullptr; }
  const Array& value() const { return n_->value; }
  Array& mutable_value() { return n_->value; }
  const Shape& shape() const { return n_->shape; }
  long size() const { return n_->value.size(); }
  bool requires_grad() const { return n_->requires_grad; }

  /// Gradient from the most recent backward pass through this node;
  /// zero if the node was not part of that pass.
  Array grad() const;

  /// Runs reverse-mode accumulation from this scalar node.
  /// Returns the pass id (see Node::pass).
  std::uint64_t backward();

  std::shared_ptr<Node> node() const { return n_; }

 private:
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}
  std::shared_ptr<Node> n_;

  friend Var make_op(Array value, Shape shape, std::vector<Var> parents,
                     std::function<void(Node&)> backprop);
};

Var make_op(Array value, Shape shape, std::vector<Var> parents,
            std::function<void(Node&)> backprop);

std::uint64_t last_pass();

// Elementwise / scalar ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var log_op(const Var& a);
Var exp_op(const Var& a);
Var sqrt_op(const Var& a);

// Structural ops.
Var reshape(const Var& a, Shape shape);
Var matmul(const Var& a, const Var& b);  // (m,k) x (k,n)
Var transpose(const Var& a);             // 2-D
Var sum(const Var& a);
Var mean(const Var& a);
/// out[i] = a[idx[i]]; idx entries of -1 read as 0.0 and get no gradient.
Var gather(const Var& a, std::shared_ptr<const std::vector<long>> idx, Shape shape);
Var gather(const Var& a, std::vector<long> idx, Shape shape);
Var concat(const std::vector<Var>& parts, Shape shape);

/// Identity forward, negated gradient backward.
Var gradient_reverse(const Var& a);

/// Stable log(sum(exp(a))) over the whole array.
Var logsumexp(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

void check_finite(const Array& a, const std::string& message);

}  // namespace fous::ad
