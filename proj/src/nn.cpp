#include "fd/nn.hpp"

#include <cmath>

#include "fd/error.hpp"

namespace fd {

int64_t param_count(const ParamList& params) {
  int64_t n = 0;
  for (const NamedParam& p : params) {
    n += p.tensor.size();
  }
  return n;
}

void init_uniform_fan_in(Tensor& weight, Rng& rng) {
  if (weight.ndim() != 4) {
    throw ConfigError("init_uniform_fan_in expects OIkk weights");
  }
  const double fan_in = static_cast<double>(weight.extent(1)) *
                        weight.extent(2) * weight.extent(3);
  const double bound = std::sqrt(1.0 / fan_in);
  for (double& v : weight.buffer()) {
    v = rng.uniform(-bound, bound);
  }
}

ConvLayer::ConvLayer(std::string name, int in_ch, int out_ch, int kernel,
                     int stride, int padding, bool with_bias)
    : name_(std::move(name)),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {
  weight_ = Tensor({out_ch, in_ch, kernel, kernel});
  weight_.mark_parameter();
  if (with_bias) {
    bias_ = Tensor({out_ch});
    bias_.mark_parameter();
  }
}

void ConvLayer::init(Rng& rng) {
  init_uniform_fan_in(weight_, rng);
  if (bias_.defined()) {
    for (double& v : bias_.buffer()) v = 0.0;
  }
}

void ConvLayer::collect(ParamList& out) const {
  out.push_back({name_ + ".weight", weight_});
  if (bias_.defined()) {
    out.push_back({name_ + ".bias", bias_});
  }
}

Backbone::Backbone(int multiplier, const std::string& prefix)
    : multiplier_(multiplier) {
  if (multiplier < 1) {
    throw ConfigError("backbone multiplier must be >= 1");
  }
  const int c1 = 8 * multiplier;
  const int c2 = 16 * multiplier;
  const int c3 = 32 * multiplier;
  conv1a_ = ConvLayer(prefix + ".conv1a", 3, c1, 3, 2, 1);
  conv1b_ = ConvLayer(prefix + ".conv1b", c1, c2, 3, 2, 1);
  conv2_ = ConvLayer(prefix + ".conv2", c2, c3, 3, 2, 1);
  conv3_ = ConvLayer(prefix + ".conv3", c3, c3, 3, 2, 1);
  fuse_ = ConvLayer(prefix + ".fuse", c2 + c3 + c3, kFusedChannels, 1, 1, 0);
}

Tensor Backbone::forward(const Tensor& image) const {
  if (image.ndim() != 4 || image.extent(1) != 3) {
    throw ConfigError("backbone expects N x 3 x H x W input");
  }
  const int h = image.extent(2), w = image.extent(3);
  if (h % 4 != 0 || w % 4 != 0) {
    throw ConfigError("backbone input height/width must be divisible by 4");
  }
  Tensor f3 = relu(conv1b_.forward(relu(conv1a_.forward(image))));
  Tensor f4 = relu(conv2_.forward(f3));
  Tensor f5 = relu(conv3_.forward(f4));
  const int h3 = f3.extent(2), w3 = f3.extent(3);
  auto factor_to = [&](const Tensor& f) {
    const int fh = f.extent(2), fw = f.extent(3);
    if (h3 % fh != 0 || w3 % fw != 0 || h3 / fh != w3 / fw) {
      throw ConfigError(
          "backbone fusion needs pyramid sizes that divide the F3 "
          "resolution; pick input sizes whose quarter resolution halves "
          "cleanly");
    }
    return h3 / fh;
  };
  Tensor up4 = upsample_nearest(f4, factor_to(f4));
  Tensor up5 = upsample_nearest(f5, factor_to(f5));
  return fuse_.forward(concat(std::vector<Tensor>{f3, up4, up5}, 1));
}

void Backbone::init(Rng& rng) {
  conv1a_.init(rng);
  conv1b_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  fuse_.init(rng);
}

void Backbone::collect(ParamList& out) const {
  conv1a_.collect(out);
  conv1b_.collect(out);
  conv2_.collect(out);
  conv3_.collect(out);
  fuse_.collect(out);
}

ConvLstmCell::ConvLstmCell(int channels, const std::string& prefix)
    : channels_(channels) {
  auto gate = [&](const std::string& n, bool bias) {
    return ConvLayer(prefix + "." + n, channels, channels, 3, 1, 1, bias);
  };
  wxi_ = gate("wxi", true);
  whi_ = gate("whi", false);
  wxf_ = gate("wxf", true);
  whf_ = gate("whf", false);
  wxo_ = gate("wxo", true);
  who_ = gate("who", false);
  wxg_ = gate("wxg", true);
  whg_ = gate("whg", false);
}

ConvLstmState ConvLstmCell::zero_state(int n, int h, int w) const {
  return ConvLstmState{Tensor({n, channels_, h, w}), Tensor({n, channels_, h, w})};
}

ConvLstmStepResult ConvLstmCell::step(const Tensor& x,
                                      const ConvLstmState& state) const {
  if (x.shape() != state.h.shape()) {
    throw ConfigError("convlstm step: input and state must be aligned");
  }
  Tensor i = sigmoid(add(wxi_.forward(x), whi_.forward(state.h)));
  Tensor f = sigmoid(add(wxf_.forward(x), whf_.forward(state.h)));
  Tensor o = sigmoid(add(wxo_.forward(x), who_.forward(state.h)));
  Tensor g = tanh(add(wxg_.forward(x), whg_.forward(state.h)));
  Tensor c_new = add(mul(f, state.c), mul(i, g));
  Tensor h_new = mul(o, tanh(c_new));
  return ConvLstmStepResult{ConvLstmState{h_new, c_new}, h_new, o};
}

void ConvLstmCell::init(Rng& rng) {
  wxi_.init(rng);
  whi_.init(rng);
  wxf_.init(rng);
  whf_.init(rng);
  wxo_.init(rng);
  who_.init(rng);
  wxg_.init(rng);
  whg_.init(rng);
}

void ConvLstmCell::collect(ParamList& out) const {
  wxi_.collect(out);
  whi_.collect(out);
  wxf_.collect(out);
  whf_.collect(out);
  wxo_.collect(out);
  who_.collect(out);
  wxg_.collect(out);
  whg_.collect(out);
}

}  // namespace fd
