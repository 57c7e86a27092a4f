#include "fd/ops.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <string>

#include "fd/error.hpp"

#ifdef FD_WITH_OPENBLAS
#include <cblas.h>
#endif

namespace fd {

namespace {

std::atomic<bool> g_inject_bad_backward{false};

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
  for (double v : t.buffer()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}
#define FD_CHECK_FINITE(t, op) debug_check_finite((t), (op))
#else
#define FD_CHECK_FINITE(t, op) ((void)0)
#endif

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) {
    return false;
  }
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) {
      return true;
    }
  }
  return false;
}

void mark_tracked(Tensor& out) { out.impl()->requires_grad = true; }

void check_axis(const Tensor& t, int axis, const char* op) {
  if (axis < 0 || axis >= t.ndim()) {
    throw ConfigError(std::string(op) + ": axis out of range");
  }
}

int64_t outer_size(const std::vector<int>& shape, int axis) {
  int64_t n = 1;
  for (int i = 0; i < axis; ++i) n *= shape[static_cast<size_t>(i)];
  return n;
}

int64_t inner_size(const std::vector<int>& shape, int axis) {
  int64_t n = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) {
    n *= shape[i];
  }
  return n;
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinaryKind kind,
                 const char* name) {
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw ConfigError(std::string(name) +
                      ": shapes must match or one side must be a scalar");
  }
  const Tensor& big = (a_scalar && !b_scalar) ? b : a;
  Tensor out(big.shape());
  const int64_t n = big.size();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t sa = a_scalar ? 0 : 1;
  const int64_t sb = b_scalar ? 0 : 1;
  switch (kind) {
    case BinaryKind::Add:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i * sa] + pb[i * sb];
      break;
    case BinaryKind::Sub:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i * sa] - pb[i * sb];
      break;
    case BinaryKind::Mul:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i * sa] * pb[i * sb];
      break;
  }
  FD_CHECK_FINITE(out, name);
  if (tracking({&a, &b})) {
    mark_tracked(out);
    Tensor a_h = a, b_h = b;
    Tape::active()->record({out}, [a = a_h, b = b_h, out, kind, sa, sb,
                                   n]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      const double* pa = a.data();
      const double* pb = b.data();
      if (a.requires_grad()) {
        if (sa == 0) {
          double acc = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            switch (kind) {
              case BinaryKind::Add:
              case BinaryKind::Sub:
                acc += gy[i];
                break;
              case BinaryKind::Mul:
                acc += gy[i] * pb[i * sb];
                break;
            }
          }
          a.accumulate_grad(&acc, 1);
        } else {
          double* ga = a.grad();
          for (int64_t i = 0; i < n; ++i) {
            switch (kind) {
              case BinaryKind::Add:
              case BinaryKind::Sub:
                ga[i] += gy[i];
                break;
              case BinaryKind::Mul:
                ga[i] += gy[i] * pb[i * sb];
                break;
            }
          }
        }
      }
      if (b.requires_grad()) {
        if (sb == 0) {
          double acc = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            switch (kind) {
              case BinaryKind::Add:
                acc += gy[i];
                break;
              case BinaryKind::Sub:
                acc -= gy[i];
                break;
              case BinaryKind::Mul:
                acc += gy[i] * pa[i * sa];
                break;
            }
          }
          b.accumulate_grad(&acc, 1);
        } else {
          double* gb = b.grad();
          for (int64_t i = 0; i < n; ++i) {
            switch (kind) {
              case BinaryKind::Add:
                gb[i] += gy[i];
                break;
              case BinaryKind::Sub:
                gb[i] -= gy[i];
                break;
              case BinaryKind::Mul:
                gb[i] += gy[i] * pa[i * sa];
                break;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  Tensor out(x.shape());
  const int64_t n = x.size();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  FD_CHECK_FINITE(out, name);
  if (tracking({&x})) {
    mark_tracked(out);
    Tensor x_h = x;
    Tape::active()->record({out}, [x = x_h, out, bwd, n]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      const double* px = x.data();
      const double* py = out.data();
      double* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) {
        gx[i] += gy[i] * bwd(px[i], py[i]);
      }
    });
  }
  return out;
}

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* A, int lda, const double* B, int ldb, double beta,
          double* C, int ldc) {
#ifdef FD_WITH_OPENBLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, A, lda, B,
              ldb, beta, C, ldc);
#else
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      C[i * ldc + j] *= beta;
    }
  }
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = alpha * (trans_a ? A[p * lda + i] : A[i * lda + p]);
      if (av == 0.0) continue;
      const double* brow = trans_b ? nullptr : B + p * ldb;
      double* crow = C + i * ldc;
      if (trans_b) {
        for (int j = 0; j < n; ++j) crow[j] += av * B[j * ldb + p];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
#endif
}

void im2col(const double* in, int C, int H, int W, int k, int stride, int pad,
            int OH, int OW, double* col) {
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        double* dst =
            col + (static_cast<int64_t>((c * k + kh) * k + kw)) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride + kh - pad;
          double* drow = dst + static_cast<int64_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::memset(drow, 0, sizeof(double) * static_cast<size_t>(OW));
            continue;
          }
          const double* srow = in + (static_cast<int64_t>(c) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride + kw - pad;
            drow[ow] = (iw >= 0 && iw < W) ? srow[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int C, int H, int W, int k, int stride,
                int pad, int OH, int OW, double* in_grad) {
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const double* src =
            col + (static_cast<int64_t>((c * k + kh) * k + kw)) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= H) continue;
          double* drow = in_grad + (static_cast<int64_t>(c) * H + ih) * W;
          const double* srow = src + static_cast<int64_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride + kw - pad;
            if (iw >= 0 && iw < W) {
              drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

std::vector<double>& scratch_a() {
  thread_local std::vector<double> buf;
  return buf;
}

std::vector<double>& scratch_b() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace

void set_inject_bad_backward(bool on) { g_inject_bad_backward = on; }
bool inject_bad_backward_enabled() { return g_inject_bad_backward; }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinaryKind::Add, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinaryKind::Sub, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinaryKind::Mul, "mul");
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  const int64_t n = a.size();
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * factor;
  FD_CHECK_FINITE(out, "scale");
  if (tracking({&a})) {
    mark_tracked(out);
    Tensor a_h = a;
    Tape::active()->record({out}, [a = a_h, out, factor, n]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      double* ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * factor;
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) {
          return 1.0 / (1.0 + std::exp(-v));
        }
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) {
        double d = y * (1.0 - y);
        if (inject_bad_backward_enabled()) {
          d *= 1.01;
        }
        return d;
      });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.buffer()) acc += v;
  Tensor out = Tensor::scalar(acc);
  FD_CHECK_FINITE(out, "sum");
  if (tracking({&x})) {
    mark_tracked(out);
    Tensor xt = x;
    Tape::active()->record({out}, [xt, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad_buffer()[0];
      double* gx = xt.grad();
      const int64_t n = xt.size();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.buffer()) acc += v;
  Tensor out = Tensor::scalar(acc * inv);
  FD_CHECK_FINITE(out, "mean");
  if (tracking({&x})) {
    mark_tracked(out);
    Tensor xt = x;
    Tape::active()->record({out}, [xt, out, inv]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad_buffer()[0] * inv;
      double* gx = xt.grad();
      const int64_t n = xt.size();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_size(shape) != x.size()) {
    throw ConfigError("reshape: element count must be preserved");
  }
  Tensor out(std::move(shape), x.buffer());
  if (tracking({&x})) {
    mark_tracked(out);
    Tensor x_h = x;
    Tape::active()->record({out}, [x = x_h, out]() mutable {
      if (!out.has_grad()) return;
      x.accumulate_grad(out.grad_buffer().data(), out.size());
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  if (input.ndim() != 4 || weight.ndim() != 4) {
    throw ConfigError("conv2d: input must be NCHW and weight OIkk");
  }
  if (stride < 1 || padding < 0) {
    throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  }
  const int N = input.extent(0), C = input.extent(1), H = input.extent(2),
            W = input.extent(3);
  const int O = weight.extent(0), I = weight.extent(1), k = weight.extent(2);
  if (weight.extent(3) != k) {
    throw ConfigError("conv2d: kernels must be square");
  }
  if (I != C) {
    throw ConfigError("conv2d: weight input channels do not match input");
  }
  if (bias.defined() && bias.size() != O) {
    throw ConfigError("conv2d: bias length must equal output channels");
  }
  const int OH = (H + 2 * padding - k) / stride + 1;
  const int OW = (W + 2 * padding - k) / stride + 1;
  if (H + 2 * padding < k || W + 2 * padding < k || OH < 1 || OW < 1) {
    throw ConfigError("conv2d: kernel does not fit the padded input");
  }

  Tensor out({N, O, OH, OW});
  const int64_t ikk = static_cast<int64_t>(I) * k * k;
  const int64_t ohw = static_cast<int64_t>(OH) * OW;
  std::vector<double>& col = scratch_a();
  col.resize(static_cast<size_t>(ikk * ohw));
  for (int n = 0; n < N; ++n) {
    const double* in_n = input.data() + static_cast<int64_t>(n) * C * H * W;
    double* out_n = out.data() + static_cast<int64_t>(n) * O * ohw;
    im2col(in_n, C, H, W, k, stride, padding, OH, OW, col.data());
    gemm(false, false, O, static_cast<int>(ohw), static_cast<int>(ikk), 1.0,
         weight.data(), static_cast<int>(ikk), col.data(),
         static_cast<int>(ohw), 0.0, out_n, static_cast<int>(ohw));
    if (bias.defined()) {
      const double* pb = bias.data();
      for (int o = 0; o < O; ++o) {
        double* row = out_n + static_cast<int64_t>(o) * ohw;
        for (int64_t i = 0; i < ohw; ++i) row[i] += pb[o];
      }
    }
  }
  FD_CHECK_FINITE(out, "conv2d");

  if (tracking({&input, &weight, &bias})) {
    mark_tracked(out);
    Tensor in_t = input, w_t = weight, b_t = bias;
    const int s = stride, p = padding;
    Tape::active()->record({out}, [in_t, w_t, b_t, out, N, C, H, W, O, k, OH,
                                   OW, s, p, ikk, ohw]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      std::vector<double>& col = scratch_a();
      std::vector<double>& dcol = scratch_b();
      const bool need_in = in_t.requires_grad();
      const bool need_w = w_t.requires_grad();
      const bool need_b = b_t.defined() && b_t.requires_grad();
      if (need_w || need_in) {
        col.resize(static_cast<size_t>(ikk * ohw));
      }
      if (need_in) {
        dcol.resize(static_cast<size_t>(ikk * ohw));
      }
      for (int n = 0; n < N; ++n) {
        const double* gy_n = gy + static_cast<int64_t>(n) * O * ohw;
        if (need_w || need_in) {
          const double* in_n =
              in_t.data() + static_cast<int64_t>(n) * C * H * W;
          im2col(in_n, C, H, W, k, s, p, OH, OW, col.data());
        }
        if (need_w) {
          gemm(false, true, O, static_cast<int>(ikk), static_cast<int>(ohw),
               1.0, gy_n, static_cast<int>(ohw), col.data(),
               static_cast<int>(ohw), 1.0, w_t.grad(), static_cast<int>(ikk));
        }
        if (need_b) {
          double* gb = b_t.grad();
          for (int o = 0; o < O; ++o) {
            const double* row = gy_n + static_cast<int64_t>(o) * ohw;
            double acc = 0.0;
            for (int64_t i = 0; i < ohw; ++i) acc += row[i];
            gb[o] += acc;
          }
        }
        if (need_in) {
          gemm(true, false, static_cast<int>(ikk), static_cast<int>(ohw), O,
               1.0, w_t.data(), static_cast<int>(ikk), gy_n,
               static_cast<int>(ohw), 0.0, dcol.data(),
               static_cast<int>(ohw));
          double* gin = in_t.grad() + static_cast<int64_t>(n) * C * H * W;
          col2im_add(dcol.data(), C, H, W, k, s, p, OH, OW, gin);
        }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.ndim() != 4) {
    throw ConfigError("global_avg_pool: input must be NCHW");
  }
  const int N = input.extent(0), C = input.extent(1), H = input.extent(2),
            W = input.extent(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  const double inv = 1.0 / static_cast<double>(hw);
  Tensor out({N, C, 1, 1});
  const double* pi = input.data();
  double* po = out.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    double acc = 0.0;
    const double* plane = pi + nc * hw;
    for (int64_t i = 0; i < hw; ++i) acc += plane[i];
    po[nc] = acc * inv;
  }
  FD_CHECK_FINITE(out, "global_avg_pool");
  if (tracking({&input})) {
    mark_tracked(out);
    Tensor in_t = input;
    Tape::active()->record({out}, [in_t, out, N, C, hw, inv]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      double* gx = in_t.grad();
      for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const double g = gy[nc] * inv;
        double* plane = gx + nc * hw;
        for (int64_t i = 0; i < hw; ++i) plane[i] += g;
      }
    });
  }
  return out;
}

namespace {

// Shared lane walk for softmax-family ops: lanes run along `axis`.
template <typename Fn>
void for_each_lane(const std::vector<int>& shape, int axis, Fn fn) {
  const int64_t outer = outer_size(shape, axis);
  const int64_t inner = inner_size(shape, axis);
  const int64_t len = shape[static_cast<size_t>(axis)];
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      fn(o * len * inner + i, inner, len);
    }
  }
}

}  // namespace

Tensor softmax_t(const Tensor& logits, int axis, double temperature) {
  check_axis(logits, axis, "softmax_t");
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax_t: temperature must be positive");
  }
  Tensor out(logits.shape());
  const double* px = logits.data();
  double* po = out.data();
  const double inv_t = 1.0 / temperature;
  for_each_lane(logits.shape(), axis,
                [&](int64_t base, int64_t stride, int64_t len) {
                  double m = -HUGE_VAL;
                  for (int64_t l = 0; l < len; ++l) {
                    m = std::max(m, px[base + l * stride] * inv_t);
                  }
                  double s = 0.0;
                  for (int64_t l = 0; l < len; ++l) {
                    const double e =
                        std::exp(px[base + l * stride] * inv_t - m);
                    po[base + l * stride] = e;
                    s += e;
                  }
                  const double inv_s = 1.0 / s;
                  for (int64_t l = 0; l < len; ++l) {
                    po[base + l * stride] *= inv_s;
                  }
                });
  FD_CHECK_FINITE(out, "softmax_t");
  if (tracking({&logits})) {
    mark_tracked(out);
    Tensor x_t = logits;
    const std::vector<int> shape = logits.shape();
    Tape::active()->record({out}, [x_t, out, shape, axis, inv_t]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      const double* py = out.data();
      double* gx = x_t.grad();
      for_each_lane(shape, axis,
                    [&](int64_t base, int64_t stride, int64_t len) {
                      double dot = 0.0;
                      for (int64_t l = 0; l < len; ++l) {
                        const int64_t idx = base + l * stride;
                        dot += gy[idx] * py[idx];
                      }
                      for (int64_t l = 0; l < len; ++l) {
                        const int64_t idx = base + l * stride;
                        gx[idx] += (gy[idx] - dot) * py[idx] * inv_t;
                      }
                    });
    });
  }
  return out;
}

Tensor log_softmax_t(const Tensor& logits, int axis, double temperature) {
  check_axis(logits, axis, "log_softmax_t");
  if (!(temperature > 0.0)) {
    throw ConfigError("log_softmax_t: temperature must be positive");
  }
  Tensor out(logits.shape());
  const double* px = logits.data();
  double* po = out.data();
  const double inv_t = 1.0 / temperature;
  for_each_lane(logits.shape(), axis,
                [&](int64_t base, int64_t stride, int64_t len) {
                  double m = -HUGE_VAL;
                  for (int64_t l = 0; l < len; ++l) {
                    m = std::max(m, px[base + l * stride] * inv_t);
                  }
                  double s = 0.0;
                  for (int64_t l = 0; l < len; ++l) {
                    s += std::exp(px[base + l * stride] * inv_t - m);
                  }
                  const double lse = m + std::log(s);
                  for (int64_t l = 0; l < len; ++l) {
                    const int64_t idx = base + l * stride;
                    po[idx] = px[idx] * inv_t - lse;
                  }
                });
  FD_CHECK_FINITE(out, "log_softmax_t");
  if (tracking({&logits})) {
    mark_tracked(out);
    Tensor x_t = logits;
    const std::vector<int> shape = logits.shape();
    Tape::active()->record({out}, [x_t, out, shape, axis, inv_t]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      const double* py = out.data();
      double* gx = x_t.grad();
      for_each_lane(shape, axis,
                    [&](int64_t base, int64_t stride, int64_t len) {
                      double gsum = 0.0;
                      for (int64_t l = 0; l < len; ++l) {
                        gsum += gy[base + l * stride];
                      }
                      for (int64_t l = 0; l < len; ++l) {
                        const int64_t idx = base + l * stride;
                        gx[idx] +=
                            (gy[idx] - std::exp(py[idx]) * gsum) * inv_t;
                      }
                    });
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> inputs, int axis) {
  if (inputs.empty()) {
    throw UsageError("concat: need at least one input");
  }
  const Tensor& first = inputs[0];
  check_axis(first, axis, "concat");
  int total_axis = 0;
  for (const Tensor& t : inputs) {
    if (t.ndim() != first.ndim()) {
      throw ConfigError("concat: rank mismatch");
    }
    for (int d = 0; d < first.ndim(); ++d) {
      if (d != axis && t.extent(d) != first.extent(d)) {
        throw ConfigError("concat: non-axis extents must match");
      }
    }
    total_axis += t.extent(axis);
  }
  std::vector<int> out_shape = first.shape();
  out_shape[static_cast<size_t>(axis)] = total_axis;
  Tensor out(out_shape);

  const int64_t outer = outer_size(out_shape, axis);
  const int64_t inner = inner_size(out_shape, axis);
  double* po = out.data();
  int64_t axis_offset = 0;
  for (const Tensor& t : inputs) {
    const int64_t seg = t.extent(axis);
    const double* pt = t.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(po + (o * total_axis + axis_offset) * inner,
                  pt + o * seg * inner,
                  sizeof(double) * static_cast<size_t>(seg * inner));
    }
    axis_offset += seg;
  }

  bool track = false;
  if (Tape::active() != nullptr) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) track = true;
    }
  }
  if (track) {
    mark_tracked(out);
    std::vector<Tensor> ins(inputs.begin(), inputs.end());
    Tape::active()->record(
        {out}, [ins, out, outer, inner, total_axis]() mutable {
          if (!out.has_grad()) return;
          const double* gy = out.grad_buffer().data();
          int64_t axis_offset = 0;
          for (Tensor& t : ins) {
            const int64_t seg = t.size() / (outer * inner);
            if (t.requires_grad()) {
              double* gt = t.grad();
              for (int64_t o = 0; o < outer; ++o) {
                const double* src =
                    gy + (o * total_axis + axis_offset) * inner;
                double* dst = gt + o * seg * inner;
                for (int64_t i = 0; i < seg * inner; ++i) dst[i] += src[i];
              }
            }
            axis_offset += seg;
          }
        });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& inputs, int axis) {
  return concat(std::span<const Tensor>(inputs.data(), inputs.size()), axis);
}

std::vector<Tensor> split(const Tensor& input, std::span<const int> sizes,
                          int axis) {
  check_axis(input, axis, "split");
  int total = 0;
  for (int s : sizes) {
    if (s <= 0) throw ConfigError("split: segment sizes must be positive");
    total += s;
  }
  if (total != input.extent(axis)) {
    throw ConfigError("split: sizes must sum to the axis extent");
  }
  const int64_t outer = outer_size(input.shape(), axis);
  const int64_t inner = inner_size(input.shape(), axis);
  const int64_t total_axis = input.extent(axis);
  const double* pi = input.data();

  std::vector<Tensor> outs;
  outs.reserve(sizes.size());
  int64_t axis_offset = 0;
  for (int s : sizes) {
    std::vector<int> shape = input.shape();
    shape[static_cast<size_t>(axis)] = s;
    Tensor part(shape);
    double* pp = part.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(pp + o * s * inner,
                  pi + (o * total_axis + axis_offset) * inner,
                  sizeof(double) * static_cast<size_t>(s) * inner);
    }
    outs.push_back(part);
    axis_offset += s;
  }

  if (tracking({&input})) {
    for (Tensor& t : outs) mark_tracked(t);
    Tensor in_t = input;
    std::vector<Tensor> outs_copy = outs;
    std::vector<int> segs(sizes.begin(), sizes.end());
    Tape::active()->record(
        outs_copy,
        [in_t, outs_copy, segs, outer, inner, total_axis]() mutable {
          bool any = false;
          for (const Tensor& t : outs_copy) {
            if (t.has_grad()) any = true;
          }
          if (!any) return;
          double* gx = in_t.grad();
          int64_t axis_offset = 0;
          for (size_t s = 0; s < outs_copy.size(); ++s) {
            const int64_t seg = segs[s];
            if (outs_copy[s].has_grad()) {
              const double* gt = outs_copy[s].grad_buffer().data();
              for (int64_t o = 0; o < outer; ++o) {
                double* dst = gx + (o * total_axis + axis_offset) * inner;
                const double* src = gt + o * seg * inner;
                for (int64_t i = 0; i < seg * inner; ++i) dst[i] += src[i];
              }
            }
            axis_offset += seg;
          }
        });
  }
  return outs;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  if (input.ndim() != 4) {
    throw ConfigError("upsample_nearest: input must be NCHW");
  }
  if (factor < 1) {
    throw ConfigError("upsample_nearest: factor must be >= 1");
  }
  const int N = input.extent(0), C = input.extent(1), H = input.extent(2),
            W = input.extent(3);
  Tensor out({N, C, H * factor, W * factor});
  const double* pi = input.data();
  double* po = out.data();
  const int OW = W * factor;
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const double* src = pi + nc * H * W;
    double* dst = po + nc * static_cast<int64_t>(H) * factor * OW;
    for (int h = 0; h < H; ++h) {
      double* row0 = dst + static_cast<int64_t>(h) * factor * OW;
      for (int w = 0; w < W; ++w) {
        const double v = src[h * W + w];
        for (int f = 0; f < factor; ++f) row0[w * factor + f] = v;
      }
      for (int f = 1; f < factor; ++f) {
        std::memcpy(row0 + static_cast<int64_t>(f) * OW, row0,
                    sizeof(double) * static_cast<size_t>(OW));
      }
    }
  }
  FD_CHECK_FINITE(out, "upsample_nearest");
  if (tracking({&input})) {
    mark_tracked(out);
    Tensor in_t = input;
    Tape::active()->record({out}, [in_t, out, N, C, H, W, factor]() mutable {
      if (!out.has_grad()) return;
      const double* gy = out.grad_buffer().data();
      double* gx = in_t.grad();
      const int OW = W * factor;
      for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const double* src = gy + nc * static_cast<int64_t>(H) * factor * OW;
        double* dst = gx + nc * H * W;
        for (int h = 0; h < H; ++h) {
          for (int fh = 0; fh < factor; ++fh) {
            const double* row =
                src + (static_cast<int64_t>(h) * factor + fh) * OW;
            for (int w = 0; w < W; ++w) {
              double acc = 0.0;
              for (int fw = 0; fw < factor; ++fw) acc += row[w * factor + fw];
              dst[h * W + w] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace fd
