#pragma once

#include <span>
#include <vector>

#include "fd/tensor.hpp"

namespace fd {

// Elementwise primitives. Binary ops take equal shapes or a single-element
// tensor broadcast against the other operand. Each op records its backward
// rule on the active tape when any input tracks gradients.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Copy into a new shape with the same element count.
Tensor reshape(const Tensor& x, std::vector<int> shape);

/// Cross-correlation with zero padding over NCHW input and OIkk weights.
/// Output spatial size is floor((H + 2*padding - k) / stride) + 1. Pass an
/// undefined bias tensor for a bias-free convolution.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

/// Per-channel spatial mean: NCHW -> NC11.
Tensor global_avg_pool(const Tensor& input);

/// Temperature softmax along one axis, computed with max subtraction.
Tensor softmax_t(const Tensor& logits, int axis, double temperature);

/// log(softmax_t(...)) via log-sum-exp; the stable path for loss code.
Tensor log_softmax_t(const Tensor& logits, int axis, double temperature);

Tensor concat(std::span<const Tensor> inputs, int axis);
Tensor concat(const std::vector<Tensor>& inputs, int axis);

/// Exact inverse of concat; `sizes` must sum to the axis extent.
std::vector<Tensor> split(const Tensor& input, std::span<const int> sizes,
                          int axis);

/// Replicate every pixel factor x factor (NCHW).
Tensor upsample_nearest(const Tensor& input, int factor);

/// Verification-harness hook: corrupts the sigmoid backward rule so the
/// gradient suite must fail. Never enabled outside the mutation test.
void set_inject_bad_backward(bool on);
bool inject_bad_backward_enabled();

}  // namespace fd
