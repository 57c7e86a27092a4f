#pragma once

#include <cstdint>

#include "fd/teacher.hpp"

namespace fd {

struct StudentOutput {
  FocusnessFeatures hallucinated;  // f_1^s .. f_N^s
  Tensor attention_logits;         // (1,N,1,1)
  Tensor attention;                // A_stu, softmax of the logits
  Tensor logits;                   // (1,2,h,w) saliency logits
  Tensor probs;                    // per-pixel 2-class softmax
};

/// RGB stream: one all-in-focus image in, N hallucinated focusness maps,
/// slice attention over them, and a small prediction head. No recurrence.
class StudentModel {
 public:
  StudentModel() = default;
  explicit StudentModel(const ModelConfig& cfg);

  void init(uint64_t seed);

  /// rgb: (3,H,W) with H,W divisible by 4. The student never sees focal
  /// slices or depth; this signature is the whole input surface.
  StudentOutput forward(const Tensor& rgb) const;

  ParamList parameters() const;
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  ConvLayer hallucinate_;  // 64 -> 64N, 1x1
  ConvLayer attn_f_;       // 64N -> N, 3x3
  ConvLayer pred1_;        // 64 -> 64, 3x3
  ConvLayer pred2_;        // 64 -> 2, 1x1
};

struct ModelSizeReport {
  int64_t parameter_count = 0;
  /// Storage at the 32-bit-per-parameter convention used for size columns.
  int64_t bytes = 0;
};

ModelSizeReport model_size_report(const ParamList& params);

}  // namespace fd
