#include "flowvip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "flowvip/errors.hpp"

namespace flowvip {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Scalar* Node::input_grad(size_t i) {
  Node& in = *inputs.at(i);
  if (!in.requires_grad) return nullptr;
  if (in.grad.empty()) in.grad.assign(in.value.size(), Scalar(0));
  return in.grad.data();
}

void check_finite(std::span<const Scalar> values, const char* op) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " +
                         std::to_string(i));
    }
  }
}

Tensor make_result(Shape shape, std::vector<Scalar> value, const char* op,
                   std::vector<Tensor> inputs, BackwardFn fn) {
  if (numel_of(shape) != static_cast<int64_t>(value.size())) {
    throw ShapeError(std::string(op) + ": buffer of " + std::to_string(value.size()) +
                     " values does not fit shape " + shape_str(shape));
  }
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled && fn) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> make_node(const Shape& shape, std::vector<Scalar> values) {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::move(values);
  return node;
}

void require(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw Error("operation on an undefined tensor");
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0); }
Tensor Tensor::ones(const Shape& shape) { return full(shape, 1); }

Tensor Tensor::full(const Shape& shape, Scalar value) {
  return Tensor(make_node(shape, std::vector<Scalar>(numel_of(shape), value)));
}

Tensor Tensor::scalar(Scalar value) { return Tensor(make_node({}, {value})); }

Tensor Tensor::from(const Shape& shape, std::vector<Scalar> values) {
  if (numel_of(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                     " values do not fit shape " + shape_str(shape));
  }
  detail::check_finite(values, "Tensor::from");
  return Tensor(make_node(shape, std::move(values)));
}

Tensor Tensor::uniform(const Shape& shape, std::mt19937_64& rng, Scalar lo, Scalar hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Scalar> v(numel_of(shape));
  for (auto& x : v) x = static_cast<Scalar>(dist(rng));
  return Tensor(make_node(shape, std::move(v)));
}

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, Scalar stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Scalar> v(numel_of(shape));
  for (auto& x : v) x = static_cast<Scalar>(dist(rng));
  return Tensor(make_node(shape, std::move(v)));
}

const Shape& Tensor::shape() const {
  require(node_);
  return node_->shape;
}

int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return node_->shape[axis];
}

int64_t Tensor::numel() const {
  require(node_);
  return static_cast<int64_t>(node_->value.size());
}

std::span<const Scalar> Tensor::data() const {
  require(node_);
  return node_->value;
}

std::span<Scalar> Tensor::mutable_data() {
  require(node_);
  return node_->value;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Scalar Tensor::at(std::initializer_list<int64_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) {
    throw ShapeError("at(): index rank " + std::to_string(index.size()) + " vs shape " +
                     shape_str(s));
  }
  int64_t flat = 0;
  size_t i = 0;
  for (int64_t ix : index) {
    if (ix < 0 || ix >= s[i]) throw ShapeError("at(): index out of range for " + shape_str(s));
    flat = flat * s[i] + ix;
    ++i;
  }
  return node_->value[flat];
}

std::vector<Scalar> Tensor::to_vector() const {
  require(node_);
  return node_->value;
}

bool Tensor::requires_grad() const {
  require(node_);
  return node_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool flag) {
  require(node_);
  if (!node_->is_leaf() || node_->consumed) throw Error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const {
  require(node_);
  return !node_->grad.empty();
}

std::span<const Scalar> Tensor::grad() const {
  require(node_);
  if (node_->grad.empty()) throw Error("tensor has no gradient");
  return node_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(make_node(node_->shape, node_->grad));
}

void Tensor::zero_grad() {
  require(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  require(node_);
  return Tensor(make_node(node_->shape, node_->value));
}

const char* Tensor::op_name() const {
  require(node_);
  return node_->op;
}

void Tensor::backward() const {
  require(node_);
  if (node_->value.size() != 1) {
    throw ShapeError("backward() requires a one-element loss, got shape " + shape_str(shape()));
  }
  if (node_->consumed) throw Error("backward() called twice on the same graph");
  if (!node_->requires_grad) throw Error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        if (child->consumed) throw Error("backward() through an already-consumed graph");
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, Scalar(0));
  node_->grad[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    if (!n->grad.empty()) n->backward_fn(*n);
    // Intermediate buffers are released; leaves keep their accumulated grads.
    n->consumed = true;
    n->backward_fn = nullptr;
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
  // Drop the recorded edges so saved activations are freed with the graph.
  std::vector<std::shared_ptr<detail::Node>> keep_alive;
  for (detail::Node* n : order) {
    for (auto& in : n->inputs) keep_alive.push_back(std::move(in));
    n->inputs.clear();
  }
}

}  // namespace flowvip
