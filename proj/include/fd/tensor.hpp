#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace fd {

class Tape;

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool leaf = false;
  int64_t node = -1;  // id on the tape that recorded this value, -1 if none
};

}  // namespace detail

/// Dense n-dimensional double tensor. Copies are shallow: they alias the same
/// storage, which is what lets tape closures and optimizer steps see one
/// buffer. Use clone()/detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int extent(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& buffer() { return impl_->data; }
  const std::vector<double>& buffer() const { return impl_->data; }

  /// Value of a single-element tensor.
  double item() const;

  /// Mark as a trainable leaf parameter.
  Tensor& mark_parameter();
  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->leaf; }

  bool has_grad() const { return defined() && !impl_->grad.empty(); }
  /// Gradient buffer, allocated (zero-filled) on first use.
  double* grad();
  const std::vector<double>& grad_buffer() const { return impl_->grad; }
  void accumulate_grad(const double* g, int64_t n);
  void zero_grad();
  void drop_grad();

  /// Deep copy: fresh storage, keeps parameter marking.
  Tensor clone() const;
  /// Deep copy of the values as a plain constant.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

int64_t shape_size(const std::vector<int>& shape);

/// Wengert list: operations recorded in execution order. Backward replays the
/// list in reverse, so every recorded node is visited exactly once and inputs
/// always come after their consumers.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Record one op. `outputs` are the tensors the op produced (their grads are
  /// reset before each replay so repeated backward calls accumulate only into
  /// leaves); `fn` pulls output grads and pushes them into the op inputs.
  void record(std::vector<Tensor> outputs, std::function<void()> fn);

  /// Reverse sweep from a scalar root recorded on this tape.
  void backward(const Tensor& root);

  int64_t op_count() const { return static_cast<int64_t>(nodes_.size()); }

  static Tape* active();

 private:
  struct Node {
    std::vector<Tensor> outputs;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  int64_t next_node_id_ = 0;
};

/// RAII activation of a tape for define-by-run recording on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Suppress recording within a scope (e.g. frozen-teacher forward passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* prev_;
};

/// Backward through the active tape; root must be a scalar recorded on it.
void backward(const Tensor& root);

}  // namespace fd
