#include "fd/student.hpp"

#include <cmath>

#include "fd/error.hpp"

namespace fd {

StudentModel::StudentModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.slice_count < 1) {
    throw ConfigError("student: slice count must be >= 1");
  }
  const int n = cfg.slice_count;
  const int c = Backbone::kFusedChannels;
  backbone_ = Backbone(cfg.student_multiplier, "backbone");
  hallucinate_ = ConvLayer("hallucinate", c, c * n, 1, 1, 0);
  attn_f_ = ConvLayer("attn_f", c * n, n, 3, 1, 1);
  pred1_ = ConvLayer("pred1", c, c, 3, 1, 1);
  pred2_ = ConvLayer("pred2", c, 2, 1, 1, 0);
}

void StudentModel::init(uint64_t seed) {
  Rng rng(seed);
  backbone_.init(rng);
  hallucinate_.init(rng);
  // Same structured start as the teacher's slice attention: shared kernel on
  // the diagonal blocks so identical hallucinated maps attend uniformly.
  const int n = cfg_.slice_count;
  const int c = Backbone::kFusedChannels;
  const double bound = std::sqrt(1.0 / (c * 9.0));
  std::vector<double> shared(static_cast<size_t>(c) * 9);
  for (double& v : shared) v = rng.uniform(-bound, bound);
  std::fill(attn_f_.weight().buffer().begin(),
            attn_f_.weight().buffer().end(), 0.0);
  for (int j = 0; j < n; ++j) {
    double* dst = attn_f_.weight().data() +
                  (static_cast<int64_t>(j) * (c * n) + j * c) * 9;
    std::copy(shared.begin(), shared.end(), dst);
  }
  std::fill(attn_f_.bias().buffer().begin(), attn_f_.bias().buffer().end(),
            0.0);
  pred1_.init(rng);
  pred2_.init(rng);
}

StudentOutput StudentModel::forward(const Tensor& rgb) const {
  if (rgb.ndim() != 3 || rgb.extent(0) != 3) {
    throw UsageError("student forward: input must be a (3,H,W) tensor");
  }
  Tensor batched = reshape(rgb, {1, 3, rgb.extent(1), rgb.extent(2)});
  Tensor base = backbone_.forward(batched);

  const int n = cfg_.slice_count;
  const int c = Backbone::kFusedChannels;
  Tensor wide = hallucinate_.forward(base);
  const std::vector<int> block_sizes(static_cast<size_t>(n), c);
  StudentOutput out;
  out.hallucinated.features = split(wide, block_sizes, 1);

  Tensor attn_map = attn_f_.forward(wide);
  out.attention_logits = global_avg_pool(attn_map);
  out.attention = softmax_t(out.attention_logits, 1, 1.0);

  const std::vector<int> ones(static_cast<size_t>(n), 1);
  std::vector<Tensor> weights = split(out.attention, ones, 1);
  Tensor fused = mul(out.hallucinated.features[0], weights[0]);
  for (int i = 1; i < n; ++i) {
    fused = add(fused, mul(out.hallucinated.features[static_cast<size_t>(i)],
                           weights[static_cast<size_t>(i)]));
  }
  out.logits = pred2_.forward(relu(pred1_.forward(fused)));
  out.probs = softmax_t(out.logits, 1, 1.0);
  return out;
}

ParamList StudentModel::parameters() const {
  ParamList out;
  backbone_.collect(out);
  hallucinate_.collect(out);
  attn_f_.collect(out);
  pred1_.collect(out);
  pred2_.collect(out);
  return out;
}

ModelSizeReport model_size_report(const ParamList& params) {
  ModelSizeReport report;
  report.parameter_count = param_count(params);
  report.bytes = report.parameter_count * 4;
  return report;
}

}  // namespace fd
