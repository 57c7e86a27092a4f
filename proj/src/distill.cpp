#include "fd/distill.hpp"

#include <cmath>

#include "fd/error.hpp"

namespace fd {

void DistillConfig::validate() const {
  if (!(kd_temperature > 0.0)) {
    throw ConfigError("distill config: kd_temperature must be positive");
  }
  if (lambda < 0.0 || alpha < 0.0) {
    throw ConfigError("distill config: lambda and alpha must be >= 0");
  }
}

Tensor ce_loss(const Tensor& logits, const Tensor& mask) {
  if (logits.ndim() != 4 || logits.extent(1) != 2) {
    throw UsageError("ce_loss: logits must be (N,2,H,W)");
  }
  if (mask.ndim() != 4 || mask.extent(1) != 1 ||
      mask.extent(0) != logits.extent(0) ||
      mask.extent(2) != logits.extent(2) ||
      mask.extent(3) != logits.extent(3)) {
    throw UsageError("ce_loss: mask must be (N,1,H,W) aligned with logits");
  }
  for (double v : mask.buffer()) {
    if (v != 0.0 && v != 1.0) {
      throw UsageError("ce_loss: mask values must be exactly 0 or 1");
    }
  }
  Tensor lsm = log_softmax_t(logits, 1, 1.0);
  const std::vector<int> two_ones{1, 1};
  std::vector<Tensor> classes = split(lsm, two_ones, 1);
  Tensor picked = add(mul(mask, classes[1]),
                      mul(sub(Tensor::scalar(1.0), mask), classes[0]));
  return scale(mean(picked), -1.0);
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw UsageError("mse_loss: shapes must match");
  }
  Tensor diff = sub(a, b);
  return mean(mul(diff, diff));
}

Tensor kl_divergence_t(const Tensor& p_logits, const Tensor& q_logits,
                       int axis, double temperature,
                       StopGradient stop_gradient_on, bool t2_rescale) {
  if (!(temperature > 0.0)) {
    throw ConfigError("kl_divergence_t: temperature must be positive");
  }
  if (p_logits.shape() != q_logits.shape()) {
    throw UsageError("kl_divergence_t: shapes must match");
  }
  if (axis < 0 || axis >= p_logits.ndim()) {
    throw ConfigError("kl_divergence_t: axis out of range");
  }
  Tensor p_in = stop_gradient_on == StopGradient::First ? p_logits.detach()
                                                        : p_logits;
  Tensor q_in = stop_gradient_on == StopGradient::Second ? q_logits.detach()
                                                         : q_logits;
  Tensor lp = log_softmax_t(p_in, axis, temperature);
  Tensor lq = log_softmax_t(q_in, axis, temperature);
  Tensor per_entry = mul(fd::exp(lp), sub(lp, lq));
  const double positions = static_cast<double>(p_logits.size()) /
                           static_cast<double>(p_logits.extent(axis));
  Tensor out = scale(sum(per_entry), 1.0 / positions);
  if (t2_rescale) {
    out = scale(out, temperature * temperature);
  }
  return out;
}

Tensor loss_mfd(const FocusnessFeatures& student,
                const FocusnessFeatures& teacher, const DistillConfig& cfg) {
  cfg.validate();
  if (student.slice_count() != teacher.slice_count() ||
      student.slice_count() == 0) {
    throw UsageError("loss_mfd: slice counts must match and be nonzero");
  }
  Tensor total;
  for (size_t i = 0; i < student.features.size(); ++i) {
    Tensor term =
        kl_divergence_t(student.features[i], teacher.features[i], 1,
                        cfg.kd_temperature, StopGradient::Second,
                        cfg.t2_rescale);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(student.slice_count()));
}

Tensor loss_afd(const Tensor& student_attention_logits,
                const Tensor& teacher_attention, const DistillConfig& cfg) {
  cfg.validate();
  if (student_attention_logits.shape() != teacher_attention.shape()) {
    throw UsageError("loss_afd: attention lengths must match");
  }
  // The teacher side is a distribution; going back through log lets both
  // operands share the temperature-softmax path. The additive floor only
  // guards exact zeros against log's domain edge.
  Tensor teacher_logits =
      fd::log(add(teacher_attention.detach(), Tensor::scalar(1e-300)));
  return kl_divergence_t(student_attention_logits, teacher_logits, 1,
                         cfg.kd_temperature, StopGradient::Second,
                         cfg.t2_rescale);
}

Tensor loss_sfd(const Tensor& student_logits, const Tensor& teacher_logits,
                const Tensor& mask, const DistillConfig& cfg) {
  cfg.validate();
  if (student_logits.shape() != teacher_logits.shape()) {
    throw UsageError("loss_sfd: logit shapes must match");
  }
  Tensor kd = kl_divergence_t(student_logits, teacher_logits, 1,
                              cfg.kd_temperature, StopGradient::Second,
                              cfg.t2_rescale);
  return add(kd, scale(ce_loss(student_logits, mask), cfg.alpha));
}

Tensor student_objective(const StudentOutput& student,
                         const TeacherOutput& teacher, const Tensor& mask,
                         const DistillConfig& cfg) {
  cfg.validate();
  Tensor mfd = loss_mfd(student.hallucinated, teacher.focusness, cfg);
  Tensor a_tea =
      teacher_attention_reference(teacher.trace, cfg.afd_reference_final);
  Tensor afd = loss_afd(student.attention_logits, a_tea, cfg);
  Tensor sfd = loss_sfd(student.logits, teacher.logits, mask, cfg);
  return add(add(mfd, afd), sfd);
}

}  // namespace fd
