#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fd/nn.hpp"

namespace fd {

struct ModelConfig {
  int slice_count = 12;       // N, focal slices per sample
  int mfsm_steps = 4;         // T, screening recurrence length
  int teacher_multiplier = 2;
  int student_multiplier = 1;
  /// When set, the screening trace records the output-gate activation o_t
  /// instead of the cell output h_t. Default keeps the cell output.
  bool mfsm_output_gate = false;
};

/// Per-slice 64-channel feature maps f_1..f_N.
struct FocusnessFeatures {
  std::vector<Tensor> features;
  int slice_count() const { return static_cast<int>(features.size()); }
};

/// Everything the screening module produced, step by step.
struct MfsmTrace {
  std::vector<Tensor> attention;  // (1,N,1,1) distribution per step
  std::vector<Tensor> hidden;
  std::vector<Tensor> cell;
  std::vector<Tensor> outputs;  // O_t maps fed into the prediction head
  int steps() const { return static_cast<int>(attention.size()); }
};

struct TeacherOutput {
  Tensor logits;  // (1,2,h,w) saliency logits
  Tensor probs;   // per-pixel 2-class softmax of logits
  MfsmTrace trace;
  FocusnessFeatures focusness;
  std::vector<Tensor> mfrm_logits;  // p_k, (1,2,h,w) each
};

/// Focal stream: shared backbone over N slices, per-slice recruiting heads,
/// and the attention + ConvLSTM screening recurrence.
class TeacherModel {
 public:
  TeacherModel() = default;
  explicit TeacherModel(const ModelConfig& cfg);

  /// Deterministic parameter init. The slice-attention convolution starts
  /// with one kernel shared across its per-slice blocks and the hidden-path
  /// weights at zero, so a fresh model attends uniformly when all slices
  /// are identical.
  void init(uint64_t seed);

  /// slices: N tensors of shape (3,H,W) with H,W divisible by 4.
  TeacherOutput forward(const std::vector<Tensor>& slices) const;

  /// Screening recurrence over precomputed focusness features. `steps` must
  /// match the configured step count (the prediction head consumes 64*T
  /// channels).
  std::pair<MfsmTrace, Tensor> mfsm_forward(const FocusnessFeatures& f,
                                            int steps) const;

  ParamList parameters() const;
  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }
  ConvLstmCell& lstm() { return lstm_; }

  /// Drop gradient tracking on every parameter (distillation contract).
  void freeze();
  bool frozen() const;

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  std::vector<ConvLayer> mfrm_heads_;  // 64 -> 2, 1x1, one per slice
  ConvLayer attn_f_;                   // 64N -> N, 3x3
  ConvLayer attn_h_;                   // 64 -> N, 3x3, bias-free
  ConvLstmCell lstm_;
  ConvLayer head_;                     // 64T -> 2, 1x1
};

/// Recruiting loss over the projected per-slice maps p_k:
///   sum_k [ CE(p_k, Y) - lambda * min(1, sum_{i != k} MSE(p_k, p_i)) ].
/// The diversity sum is capped at 1 before scaling so the loss stays bounded
/// below. Mask must already live on the prediction grid.
Tensor mfrm_loss(const std::vector<Tensor>& mfrm_logits, const Tensor& mask,
                 double lambda);

/// Teacher attention target for distillation: the step-averaged attention
/// distribution, or the final step's when `final_step` is set.
Tensor teacher_attention_reference(const MfsmTrace& trace,
                                   bool final_step = false);

}  // namespace fd
