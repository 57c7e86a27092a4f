#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fd/ops.hpp"
#include "fd/rng.hpp"
#include "fd/tensor.hpp"

namespace fd {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

int64_t param_count(const ParamList& params);

/// Fan-in scaled uniform init: weights in (-b, b) with b = sqrt(1/(in*k*k)),
/// biases zero.
void init_uniform_fan_in(Tensor& weight, Rng& rng);

/// 2D convolution layer with owned weight/bias parameters.
class ConvLayer {
 public:
  ConvLayer() = default;
  ConvLayer(std::string name, int in_ch, int out_ch, int kernel, int stride,
            int padding, bool with_bias = true);

  Tensor forward(const Tensor& x) const {
    return conv2d(x, weight_, bias_, stride_, padding_);
  }

  void init(Rng& rng);
  void collect(ParamList& out) const;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const std::string& name() const { return name_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return kernel_; }

 private:
  std::string name_;
  int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
  Tensor weight_, bias_;
};

/// Three-stage feature extractor: F3 at 1/4 input resolution, F4 and F5 one
/// and two halvings deeper, fused back at F3 resolution into 64 channels.
/// The depth multiplier widens every stage (teacher runs wider than student).
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(int multiplier, const std::string& prefix = "backbone");

  /// N x 3 x H x W -> N x 64 x H/4 x W/4. H and W must be divisible by 4.
  Tensor forward(const Tensor& image) const;

  void init(Rng& rng);
  void collect(ParamList& out) const;
  int multiplier() const { return multiplier_; }

  static constexpr int kFusedChannels = 64;

 private:
  int multiplier_ = 1;
  ConvLayer conv1a_, conv1b_;  // to F3 (1/4 resolution)
  ConvLayer conv2_;            // to F4
  ConvLayer conv3_;            // to F5
  ConvLayer fuse_;             // concat(F3, F4^, F5^) -> 64, 1x1
};

struct ConvLstmState {
  Tensor h;  // hidden map, entries in (-1, 1)
  Tensor c;  // cell map
};

struct ConvLstmStepResult {
  ConvLstmState state;
  Tensor hidden;       // o * tanh(c'), the default step output
  Tensor output_gate;  // o, kept for the configurable output variant
};

/// ConvLSTM cell with 3x3 gate convolutions, no peephole connections.
/// Biases live on the input-side convolutions only.
class ConvLstmCell {
 public:
  ConvLstmCell() = default;
  ConvLstmCell(int channels, const std::string& prefix = "convlstm");

  ConvLstmState zero_state(int n, int h, int w) const;
  ConvLstmStepResult step(const Tensor& x, const ConvLstmState& state) const;

  void init(Rng& rng);
  void collect(ParamList& out) const;
  int channels() const { return channels_; }

  ConvLayer& input_gate_x() { return wxi_; }
  ConvLayer& forget_gate_x() { return wxf_; }

 private:
  int channels_ = 0;
  ConvLayer wxi_, whi_, wxf_, whf_, wxo_, who_, wxg_, whg_;
};

}  // namespace fd
