#pragma once

// Reverse-mode autograd core: Tensor values, the recorded graph, and backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gtn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;
  std::string op = "leaf";

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

struct GradModeState {
  bool enabled = true;
  bool finite_watch = false;
};

inline GradModeState& grad_mode() {
  thread_local GradModeState state;
  return state;
}

// Folds branch decisions of non-smooth ops (relu masks, max argmax) into a
// running hash so finite-difference checks can detect kink crossings.
struct PatternRecorder {
  std::uint64_t hash = 1469598103934665603ull;
  void mix(std::uint64_t v) {
    hash ^= v + 0x9e3779b97f4a7c15ull + (hash << 6) + (hash >> 2);
  }
};

inline PatternRecorder*& active_recorder() {
  thread_local PatternRecorder* rec = nullptr;
  return rec;
}

}  // namespace detail

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode().enabled) { detail::grad_mode().enabled = false; }
  ~NoGradGuard() { detail::grad_mode().enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// While alive, every op checks its output for NaN/Inf and throws
/// NumericError naming the op. Always on in debug builds.
class FiniteWatch {
 public:
  FiniteWatch() : prev_(detail::grad_mode().finite_watch) { detail::grad_mode().finite_watch = true; }
  ~FiniteWatch() { detail::grad_mode().finite_watch = prev_; }
  FiniteWatch(const FiniteWatch&) = delete;
  FiniteWatch& operator=(const FiniteWatch&) = delete;

 private:
  bool prev_;
};

/// Records the activation pattern of relu/max ops executed while alive.
class PatternScope {
 public:
  PatternScope() : prev_(detail::active_recorder()) { detail::active_recorder() = &rec_; }
  ~PatternScope() { detail::active_recorder() = prev_; }
  PatternScope(const PatternScope&) = delete;
  PatternScope& operator=(const PatternScope&) = delete;
  std::uint64_t hash() const { return rec_.hash; }

 private:
  detail::PatternRecorder rec_;
  detail::PatternRecorder* prev_;
};

namespace debug {
// Name of an op whose backward rule is deliberately broken (gradient scaled
// by 1.5). Used as a negative control for gradient checking. Empty = off.
inline std::string& corrupted_op() {
  thread_local std::string name;
  return name;
}
}  // namespace debug

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    if (numel_of(shape) != values.size())
      throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                       to_string(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; intended for parameter leaves (optimizer updates, loading).
  std::span<double> mutable_data() { return node_->data; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same storage identity (used to verify weight sharing).
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  /// Leaf copy of the values with no graph history.
  Tensor detach() const { return from(shape(), node_->data, false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const Node& n) {
  for (double v : n.data)
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by op '" + n.op + "'");
}

/// Builds an op result. The backward rule is kept only when grad mode is on
/// and at least one input tracks gradients.
inline Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool track = false;
  if (grad_mode().enabled)
    for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
#ifndef NDEBUG
  check_finite(*n);
#else
  if (grad_mode().finite_watch) check_finite(*n);
#endif
  return Tensor(std::move(n));
}

}  // namespace detail

/// Topologically ordered record of the operations that produced a tensor.
/// Inputs precede the ops that consume them.
struct Tape {
  std::vector<detail::Node*> order;
};

inline Tape record_tape(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<detail::Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// `loss`, then releases the recorded graph.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad() || !loss.node()->backward_fn)
    throw std::logic_error("backward() on a tensor with no recorded operations");
  Tape tape = record_tape(loss);
  loss.node()->ensure_grad()[0] += 1.0;
  const std::string& corrupted = debug::corrupted_op();
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    for (auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    if (!corrupted.empty() && n->op == corrupted)
      for (double& g : n->grad) g *= 1.5;
    n->backward_fn(*n);
  }
  for (detail::Node* n : tape.order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace gtn
