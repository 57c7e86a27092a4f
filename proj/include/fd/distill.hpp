#pragma once

#include "fd/student.hpp"
#include "fd/teacher.hpp"

namespace fd {

struct DistillConfig {
  double kd_temperature = 20.0;  // softening temperature for every KD loss
  double lambda = 10.0;          // recruiting-loss diversity weight
  double alpha = 1.0;            // CE weight inside the screened loss
  bool t2_rescale = false;       // multiply KD losses by temperature^2
  /// Use the final-step attention instead of the step average as the
  /// teacher-side target of the attentive loss.
  bool afd_reference_final = false;

  void validate() const;
};

enum class StopGradient { None, First, Second };

/// Mean over pixels of -log softmax(logits)[class]; channel 1 is salient.
/// The mask must be strictly binary and spatially aligned with the logits.
Tensor ce_loss(const Tensor& logits, const Tensor& mask);

/// Mean squared difference over all entries.
Tensor mse_loss(const Tensor& a, const Tensor& b);

/// Temperature KL divergence between softmax distributions taken along
/// `axis`, averaged over all remaining positions. `stop_gradient_on` marks
/// which operand is a constant target.
Tensor kl_divergence_t(const Tensor& p_logits, const Tensor& q_logits,
                       int axis, double temperature,
                       StopGradient stop_gradient_on,
                       bool t2_rescale = false);

/// Multi-focusness distillation: mean over slices of the channelwise KL
/// between hallucinated and teacher features. Teacher side is constant.
Tensor loss_mfd(const FocusnessFeatures& student,
                const FocusnessFeatures& teacher, const DistillConfig& cfg);

/// Attentive distillation: KL between the student's slice attention and the
/// teacher's reference distribution (re-sharpened through log so both sides
/// pass through the same temperature softmax).
Tensor loss_afd(const Tensor& student_attention_logits,
                const Tensor& teacher_attention, const DistillConfig& cfg);

/// Screened distillation: per-pixel class KL to the teacher plus
/// alpha-weighted CE against the ground truth.
Tensor loss_sfd(const Tensor& student_logits, const Tensor& teacher_logits,
                const Tensor& mask, const DistillConfig& cfg);

/// Stage-2 objective: unweighted sum of the three distillation losses.
/// Only student parameters receive gradient.
Tensor student_objective(const StudentOutput& student,
                         const TeacherOutput& teacher, const Tensor& mask,
                         const DistillConfig& cfg);

}  // namespace fd
