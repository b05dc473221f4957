#include "fous/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_set>

namespace fous::ad {

namespace {
std::atomic<std::uint64_t> g_node_counter{1};
std::atomic<std::uint64_t> g_pass_counter{0};

std::shared_ptr<Node> new_node(Array value, Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  if (shape_size(shape) != value.size())
    throw std::invalid_argument("shape does not match value size");
  n->value = std::move(value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  n->id = g_node_counter.fetch_add(1);
  return n;
}
}  // namespace

long shape_size(const Shape& s) {
  long total = 1;
  for (long d : s) total *= d;
  return total;
}

void check_finite(const Array& a, const std::string& message) {
  if (!a.isFinite().all()) throw std::runtime_error(message);
}

Var Var::constant(Array v, Shape shape) {
  return Var(new_node(std::move(v), std::move(shape), false));
}

Var Var::constant(double v) {
  Array a(1);
  a[0] = v;
  return Var(new_node(std::move(a), {1}, false));
}

Var Var::leaf(Array v, Shape shape) {
  auto n = new_node(std::move(v), std::move(shape), true);
  return Var(n);
}

Array Var::grad() const {
  if (n_->pass == g_pass_counter.load() && n_->grad.size() == n_->value.size())
    return n_->grad;
  return Array::Zero(n_->value.size());
}

std::uint64_t last_pass() { return g_pass_counter.load(); }

Var make_op(Array value, Shape shape, std::vector<Var> parents,
            std::function<void(Node&)> backprop) {
  auto n = new_node(std::move(value), std::move(shape), false);
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    if (p.node()->requires_grad) n->requires_grad = true;
  }
  n->backprop = std::move(backprop);
  return Var(n);
}

std::uint64_t Var::backward() {
  if (size() != 1) throw std::invalid_argument("backward requires a scalar");
  const std::uint64_t pass = g_pass_counter.fetch_add(1) + 1;

  // Iterative topological sort (graphs can be deep at training scale).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  visited.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (!visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    n->grad = Array::Zero(n->value.size());
    n->pass = pass;
  }
  n_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->requires_grad) n->backprop(*n);
  }
  return pass;
}

namespace {
Var binary_same_size(const Var& a, const Var& b, Array value,
                     std::function<void(Node&)> bp) {
  if (a.size() != b.size())
    throw std::invalid_argument("elementwise operands differ in size");
  return make_op(std::move(value), a.shape(), {a, b}, std::move(bp));
}
}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_same_size(a, b, a.value() + b.value(), [](Node& n) {
    n.parents[0]->grad += n.grad;
    n.parents[1]->grad += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  return binary_same_size(a, b, a.value() - b.value(), [](Node& n) {
    n.parents[0]->grad += n.grad;
    n.parents[1]->grad -= n.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  return binary_same_size(a, b, a.value() * b.value(), [](Node& n) {
    n.parents[0]->grad += n.grad * n.parents[1]->value;
    n.parents[1]->grad += n.grad * n.parents[0]->value;
  });
}

Var div(const Var& a, const Var& b) {
  return binary_same_size(a, b, a.value() / b.value(), [](Node& n) {
    const Array& bv = n.parents[1]->value;
    n.parents[0]->grad += n.grad / bv;
    n.parents[1]->grad -= n.grad * n.parents[0]->value / (bv * bv);
  });
}

Var neg(const Var& a) {
  return make_op(-a.value(), a.shape(), {a},
                 [](Node& n) { n.parents[0]->grad -= n.grad; });
}

Var add_scalar(const Var& a, double s) {
  return make_op(a.value() + s, a.shape(), {a},
                 [](Node& n) { n.parents[0]->grad += n.grad; });
}

Var mul_scalar(const Var& a, double s) {
  return make_op(a.value() * s, a.shape(), {a},
                 [s](Node& n) { n.parents[0]->grad += n.grad * s; });
}

Var relu(const Var& a) {
  return make_op(a.value().max(0.0), a.shape(), {a}, [](Node& n) {
    n.parents[0]->grad +=
        n.grad * (n.parents[0]->value > 0.0).cast<double>();
  });
}

Var sigmoid(const Var& a) {
  Array v = 1.0 / (1.0 + (-a.value()).exp());
  return make_op(std::move(v), a.shape(), {a}, [](Node& n) {
    n.parents[0]->grad += n.grad * n.value * (1.0 - n.value);
  });
}

Var log_op(const Var& a) {
  return make_op(a.value().log(), a.shape(), {a}, [](Node& n) {
    n.parents[0]->grad += n.grad / n.parents[0]->value;
  });
}

Var exp_op(const Var& a) {
  return make_op(a.value().exp(), a.shape(), {a}, [](Node& n) {
    n.parents[0]->grad += n.grad * n.value;
  });
}

Var sqrt_op(const Var& a) {
  return make_op(a.value().sqrt(), a.shape(), {a}, [](Node& n) {
    n.parents[0]->grad += n.grad / (2.0 * n.value);
  });
}

Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw std::invalid_argument("reshape changes element count");
  return make_op(a.value(), std::move(shape), {a},
                 [](Node& n) { n.parents[0]->grad += n.grad; });
}

Var matmul(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul shape mismatch");
  const long m = a.shape()[0], k = a.shape()[1], n_cols = b.shape()[1];
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a.value().data(), m, k);
  Eigen::Map<const Mat> mb(b.value().data(), k, n_cols);
  Mat out = ma * mb;
  Array flat = Eigen::Map<const Array>(out.data(), out.size());
  return make_op(std::move(flat), {m, n_cols}, {a, b}, [m, k, n_cols](Node& n) {
    Eigen::Map<const Mat> g(n.grad.data(), m, n_cols);
    Eigen::Map<const Mat> av(n.parents[0]->value.data(), m, k);
    Eigen::Map<const Mat> bv(n.parents[1]->value.data(), k, n_cols);
    Eigen::Map<Mat> ga(n.parents[0]->grad.data(), m, k);
    Eigen::Map<Mat> gb(n.parents[1]->grad.data(), k, n_cols);
    ga += g * bv.transpose();
    gb += av.transpose() * g;
  });
}

Var transpose(const Var& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose needs 2-D");
  const long m = a.shape()[0], k = a.shape()[1];
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a.value().data(), m, k);
  Mat out = ma.transpose();
  Array flat = Eigen::Map<const Array>(out.data(), out.size());
  return make_op(std::move(flat), {k, m}, {a}, [m, k](Node& n) {
    Eigen::Map<const Mat> g(n.grad.data(), k, m);
    Eigen::Map<Mat> ga(n.parents[0]->grad.data(), m, k);
    ga += g.transpose();
  });
}

Var sum(const Var& a) {
  Array v(1);
  v[0] = a.value().sum();
  return make_op(std::move(v), {1}, {a},
                 [](Node& n) { n.parents[0]->grad += n.grad[0]; });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  Array v(1);
  v[0] = a.value().sum() * inv;
  return make_op(std::move(v), {1}, {a},
                 [inv](Node& n) { n.parents[0]->grad += n.grad[0] * inv; });
}

Var gather(const Var& a, std::shared_ptr<const std::vector<long>> idx, Shape shape) {
  if (static_cast<long>(idx->size()) != shape_size(shape))
    throw std::invalid_argument("gather index count does not match shape");
  Array v(idx->size());
  for (size_t i = 0; i < idx->size(); ++i) {
    const long j = (*idx)[i];
    v[static_cast<long>(i)] = (j < 0) ? 0.0 : a.value()[j];
  }
  return make_op(std::move(v), std::move(shape), {a}, [idx](Node& n) {
    Array& pg = n.parents[0]->grad;
    for (size_t i = 0; i < idx->size(); ++i) {
      const long j = (*idx)[i];
      if (j >= 0) pg[j] += n.grad[static_cast<long>(i)];
    }
  });
}

Var gather(const Var& a, std::vector<long> idx, Shape shape) {
  return gather(a, std::make_shared<const std::vector<long>>(std::move(idx)),
                std::move(shape));
}

Var concat(const std::vector<Var>& parts, Shape shape) {
  long total = 0;
  for (const auto& p : parts) total += p.size();
  if (total != shape_size(shape))
    throw std::invalid_argument("concat shape mismatch");
  Array v(total);
  long off = 0;
  for (const auto& p : parts) {
    v.segment(off, p.size()) = p.value();
    off += p.size();
  }
  return make_op(std::move(v), std::move(shape), parts, [](Node& n) {
    long off = 0;
    for (auto& p : n.parents) {
      p->grad += n.grad.segment(off, p->value.size());
      off += p->value.size();
    }
  });
}

Var gradient_reverse(const Var& a) {
  return make_op(a.value(), a.shape(), {a},
                 [](Node& n) { n.parents[0]->grad -= n.grad; });
}

Var logsumexp(const Var& a) {
  const double m = a.value().maxCoeff();
  Var shifted = add_scalar(a, -m);
  return add_scalar(log_op(sum(exp_op(shifted))), m);
}

}  // namespace fous::ad
