#include "fd/tensor.hpp"

#include <algorithm>

#include "fd/error.hpp"

namespace fd {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) {
      throw ConfigError("tensor extents must be positive");
    }
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  const int64_t n = shape_size(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(n), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  const int64_t n = shape_size(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw ConfigError("tensor data length does not match shape product");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

double Tensor::item() const {
  if (size() != 1) {
    throw UsageError("Tensor::item requires a single-element tensor");
  }
  return impl_->data[0];
}

Tensor& Tensor::mark_parameter() {
  impl_->requires_grad = true;
  impl_->leaf = true;
  return *this;
}

double* Tensor::grad() {
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
  return impl_->grad.data();
}

void Tensor::accumulate_grad(const double* g, int64_t n) {
  if (n != size()) {
    throw UsageError("gradient size mismatch");
  }
  double* dst = grad();
  for (int64_t i = 0; i < n; ++i) {
    dst[i] += g[i];
  }
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::drop_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  t.impl_->requires_grad = impl_->requires_grad;
  t.impl_->leaf = impl_->leaf;
  return t;
}

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

void Tape::record(std::vector<Tensor> outputs, std::function<void()> fn) {
  for (Tensor& t : outputs) {
    t.impl()->node = next_node_id_++;
  }
  nodes_.push_back(Node{std::move(outputs), std::move(fn)});
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw UsageError("backward root must be a scalar");
  }
  if (root.impl()->node < 0) {
    throw UsageError("backward root was not produced on a tape");
  }
  // Reset intermediate grads so a replay accumulates only into leaves.
  for (Node& node : nodes_) {
    for (Tensor& out : node.outputs) {
      if (!out.is_leaf()) {
        out.drop_grad();
      }
    }
  }
  const double one = 1.0;
  const_cast<Tensor&>(root).accumulate_grad(&one, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
  }
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradGuard::NoGradGuard() : prev_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = prev_; }

void backward(const Tensor& root) {
  Tape* tape = Tape::active();
  if (tape == nullptr) {
    throw UsageError("backward requires an active tape");
  }
  tape->backward(root);
}

}  // namespace fd
