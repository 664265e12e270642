#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace flowvip {

#ifdef FLOWVIP_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;

  bool is_leaf() const { return inputs.empty(); }

  // Returns the gradient buffer of input i (zero-allocated on first use), or
  // nullptr when that input does not take part in differentiation.
  Scalar* input_grad(size_t i);
};

}  // namespace detail

/// Shared handle to a dense row-major value plus its autograd record.
///
/// Values are immutable once an operation has produced them. The only
/// sanctioned mutation is mutable_data() on leaves (parameter construction,
/// optimizer updates); doing that after a graph was recorded on top of the
/// leaf invalidates that graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, Scalar value);
  static Tensor scalar(Scalar value);
  static Tensor from(const Shape& shape, std::vector<Scalar> values);
  static Tensor uniform(const Shape& shape, std::mt19937_64& rng, Scalar lo, Scalar hi);
  static Tensor randn(const Shape& shape, std::mt19937_64& rng, Scalar stddev = 1);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t dim(int axis) const;
  int64_t numel() const;

  std::span<const Scalar> data() const;
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::initializer_list<int64_t> index) const;
  std::vector<Scalar> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Reverse-mode sweep from this one-element tensor. Each recorded graph can
  /// be swept once; a second sweep through the same nodes throws.
  void backward() const;

  /// Value copy without history.
  Tensor detach() const;

  const char* op_name() const;

  // Internal plumbing for operation implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// True while operations record backward closures (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Wraps an operation output. Records `fn` only when grad mode is on and any
/// input requires grad. Throws NumericError naming `op` on non-finite output.
Tensor make_result(Shape shape, std::vector<Scalar> value, const char* op,
                   std::vector<Tensor> inputs, BackwardFn fn);

void check_finite(std::span<const Scalar> values, const char* op);

}  // namespace detail

}  // namespace flowvip
