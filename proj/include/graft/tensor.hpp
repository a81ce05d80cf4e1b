#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace graft {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Incompatible tensor shapes handed to an operation.
struct ShapeError : Error {
  using Error::Error;
};
// Invalid model or run configuration.
struct ConfigError : Error {
  using Error::Error;
};
// API misuse, e.g. backward from a non-scalar.
struct UsageError : Error {
  using Error::Error;
};
// File read/write failures.
struct IoError : Error {
  using Error::Error;
};
// A stored artifact fails its integrity checks.
struct CorruptionError : Error {
  using Error::Error;
};
// A stored artifact belongs to a different model spec.
struct CompatError : Error {
  using Error::Error;
};

// Dense row-major tensor of a floating scalar type with an optional gradient
// buffer. Copies are shallow: a Tensor is a handle onto a graph node, which
// is what lets recorded backward closures accumulate into the right storage.
// Scalars are represented as shape [1]; a default-constructed Tensor is the
// "absent" value (defined() == false) used for optional operands.
template <class S>
class Tensor {
  static_assert(std::is_floating_point_v<S>);

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), S(0)); }

  static Tensor ones(Shape shape) { return Tensor(std::move(shape), S(1)); }

  static Tensor full(Shape shape, S v) { return Tensor(std::move(shape), v); }

  static Tensor scalar(S v) { return Tensor(Shape{1}, v); }

  static Tensor from_data(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != static_cast<Index>(data.size()))
      throw ShapeError("from_data: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    return t;
  }

  bool defined() const { return n_ != nullptr; }

  const Shape& shape() const { return node().shape; }
  Index ndim() const { return static_cast<Index>(node().shape.size()); }
  Index extent(Index axis) const { return node().shape[static_cast<std::size_t>(axis)]; }
  Index numel() const { return static_cast<Index>(node().value.size()); }

  const std::vector<S>& value() const { return node().value; }
  // Mutable access for initialization and finite-difference probes. Mutating
  // a tensor that already participates in a recorded graph is undefined.
  std::vector<S>& raw() { return node().value; }

  bool requires_grad() const { return n_ && n_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node().requires_grad = on;
    return *this;
  }

  std::vector<S>& grad() {
    Node& n = node();
    if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
    return n.grad;
  }
  const std::vector<S>& grad() const { return const_cast<Tensor*>(this)->grad(); }
  bool has_grad() const { return n_ && !n_->grad.empty(); }
  void zero_grad() {
    if (n_) n_->grad.clear();
  }

  S item() const {
    if (numel() != 1) throw UsageError("item: tensor has shape " + shape_str(shape()));
    return node().value[0];
  }

  // Deep copy of the value; the clone is a fresh leaf.
  Tensor clone() const {
    Tensor t = from_data(shape(), value());
    return t;
  }

  bool same_node(const Tensor& o) const { return n_ == o.n_; }

 private:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;
    bool requires_grad = false;
  };

  Tensor(Shape shape, S fill) : n_(std::make_shared<Node>()) {
    n_->shape = std::move(shape);
    n_->value.assign(static_cast<std::size_t>(shape_numel(n_->shape)), fill);
  }

  Node& node() {
    if (!n_) throw UsageError("use of undefined tensor");
    return *n_;
  }
  const Node& node() const {
    if (!n_) throw UsageError("use of undefined tensor");
    return *n_;
  }

  std::shared_ptr<Node> n_;
};

// Gradient tape. Operations executed while a Tape is active (via Scope)
// record backward closures; backward() replays them in reverse order,
// accumulating adjoints additively. Without an active tape every op is a
// plain forward computation.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_; }
  static bool recording() { return active_ != nullptr; }
  static void record(std::function<void()> fn) {
    if (active_) active_->ops_.push_back(std::move(fn));
  }

  // Seeds d(loss)/d(loss) = 1 and replays the recorded closures last-first.
  void backward(Tensor<S> loss) {
    if (loss.numel() != 1)
      throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.grad()[0] += S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
  inline static thread_local Tape* active_ = nullptr;
};

}  // namespace graft
