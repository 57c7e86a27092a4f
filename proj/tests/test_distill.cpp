#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd/distill.hpp"
#include "fd/error.hpp"
#include "fd/gradcheck.hpp"

using namespace fd;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.buffer()) v = rng.uniform(lo, hi);
  return t;
}

// Direct-summation references, written against the formulas rather than the
// op graph.
double ce_oracle(const Tensor& logits, const Tensor& mask) {
  const int h = logits.extent(2), w = logits.extent(3);
  double total = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double z0 = logits.data()[(0 * h + y) * w + x];
      const double z1 = logits.data()[(1 * h + y) * w + x];
      const double m = std::max(z0, z1);
      const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
      total += -(mask.data()[y * w + x] > 0.5 ? z1 - lse : z0 - lse);
    }
  }
  return total / (h * w);
}

double kl_oracle(const Tensor& p_logits, const Tensor& q_logits, int axis,
                 double temperature) {
  const auto& shape = p_logits.shape();
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const int64_t len = shape[axis];
  double total = 0.0;
  std::vector<double> p(static_cast<size_t>(len)), q(static_cast<size_t>(len));
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      auto softmax = [&](const Tensor& t, std::vector<double>& out) {
        double m = -1e300;
        for (int64_t l = 0; l < len; ++l) {
          m = std::max(m, t.data()[(o * len + l) * inner + i] / temperature);
        }
        double s = 0.0;
        for (int64_t l = 0; l < len; ++l) {
          out[l] =
              std::exp(t.data()[(o * len + l) * inner + i] / temperature - m);
          s += out[l];
        }
        for (int64_t l = 0; l < len; ++l) out[l] /= s;
      };
      softmax(p_logits, p);
      softmax(q_logits, q);
      for (int64_t l = 0; l < len; ++l) {
        total += p[l] * (std::log(p[l]) - std::log(q[l]));
      }
    }
  }
  return total / static_cast<double>(outer * inner);
}

Tensor binary_mask(int h, int w, Rng& rng) {
  Tensor mask({1, 1, h, w});
  for (double& v : mask.buffer()) v = rng.next_double() < 0.5 ? 0.0 : 1.0;
  return mask;
}

}  // namespace

TEST_CASE("ce_loss values") {
  SUBCASE("strong correct logits saturate to zero") {
    Tensor mask({1, 1, 2, 2}, {1.0, 0.0, 1.0, 1.0});
    Tensor logits({1, 2, 2, 2});
    for (int i = 0; i < 4; ++i) {
      const double cls = mask.data()[i];
      logits.data()[i] = cls > 0.5 ? -10.0 : 10.0;
      logits.data()[4 + i] = cls > 0.5 ? 10.0 : -10.0;
    }
    CHECK(ce_loss(logits, mask).item() < 1e-8);
  }
  SUBCASE("zero logits give ln 2 regardless of the mask") {
    Rng rng(3);
    Tensor logits({1, 2, 3, 3});
    Tensor mask = binary_mask(3, 3, rng);
    CHECK(ce_loss(logits, mask).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("random case matches the oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor logits = random_tensor({1, 2, 3, 3}, rng);
      Tensor mask = binary_mask(3, 3, rng);
      CHECK(ce_loss(logits, mask).item() ==
            doctest::Approx(ce_oracle(logits, mask)).epsilon(1e-12));
    }
  }
  SUBCASE("non-binary mask is a usage error") {
    Tensor logits({1, 2, 2, 2});
    Tensor mask = Tensor::full({1, 1, 2, 2}, 0.5);
    CHECK_THROWS_AS(ce_loss(logits, mask), UsageError);
  }
}

TEST_CASE("mse_loss values") {
  Tensor a({2}, {1.0, 1.0});
  Tensor b({2}, {0.0, 3.0});
  CHECK(mse_loss(a, b).item() == doctest::Approx(2.5));
  CHECK(mse_loss(a, a).item() == 0.0);
  CHECK(mse_loss(a, b).item() == doctest::Approx(mse_loss(b, a).item()));
  CHECK_THROWS_AS(mse_loss(a, Tensor({3})), UsageError);
}

TEST_CASE("kl_divergence_t values and properties") {
  Rng rng(7);
  SUBCASE("identical logits give zero") {
    for (int trial = 0; trial < 5; ++trial) {
      Tensor z = random_tensor({2, 4, 3}, rng);
      const double v =
          kl_divergence_t(z, z, 1, 20.0, StopGradient::None).item();
      CHECK(std::abs(v) < 1e-12);
    }
  }
  SUBCASE("one-hot against uniform is ln 2") {
    Tensor p({2}, {40.0, -40.0});  // effectively one-hot at temperature 1
    Tensor q({2}, {0.0, 0.0});
    Tensor p4 = reshape(p, {1, 2});
    Tensor q4 = reshape(q, {1, 2});
    CHECK(kl_divergence_t(p4, q4, 1, 1.0, StopGradient::None).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("random logits match the oracle and stay nonnegative") {
    for (int trial = 0; trial < 25; ++trial) {
      Tensor p = random_tensor({1, 2, 4, 4}, rng, -4.0, 4.0);
      Tensor q = random_tensor({1, 2, 4, 4}, rng, -4.0, 4.0);
      const double got =
          kl_divergence_t(p, q, 1, 20.0, StopGradient::None).item();
      CHECK(got == doctest::Approx(kl_oracle(p, q, 1, 20.0)).epsilon(1e-10));
      CHECK(got >= -1e-12);
    }
  }
  SUBCASE("temperature squared rescale") {
    Tensor p = random_tensor({1, 2, 2, 2}, rng);
    Tensor q = random_tensor({1, 2, 2, 2}, rng);
    const double base =
        kl_divergence_t(p, q, 1, 20.0, StopGradient::None, false).item();
    const double scaled =
        kl_divergence_t(p, q, 1, 20.0, StopGradient::None, true).item();
    CHECK(scaled == doctest::Approx(base * 400.0).epsilon(1e-12));
  }
  SUBCASE("non-positive temperature is a configuration error") {
    Tensor z({1, 2});
    CHECK_THROWS_AS(kl_divergence_t(z, z, 1, 0.0, StopGradient::None),
                    ConfigError);
  }
  SUBCASE("stop gradient selects the constant side") {
    Tensor p = random_tensor({1, 2}, rng);
    Tensor q = random_tensor({1, 2}, rng);
    p.mark_parameter();
    q.mark_parameter();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = kl_divergence_t(p, q, 1, 2.0, StopGradient::Second);
    tape.backward(loss);
    CHECK(p.has_grad());
    CHECK_FALSE(q.has_grad());
  }
}

TEST_CASE("loss_mfd") {
  Rng rng(11);
  DistillConfig cfg;
  auto features = [&](int n, int c) {
    FocusnessFeatures f;
    for (int i = 0; i < n; ++i) {
      f.features.push_back(random_tensor({1, c, 2, 2}, rng));
    }
    return f;
  };
  SUBCASE("copied features give zero") {
    FocusnessFeatures t = features(3, 8);
    FocusnessFeatures s;
    for (const Tensor& f : t.features) s.features.push_back(f.detach());
    CHECK(std::abs(loss_mfd(s, t, cfg).item()) < 1e-12);
  }
  SUBCASE("single slice reduces to one KL term") {
    FocusnessFeatures s = features(1, 8);
    FocusnessFeatures t = features(1, 8);
    const double got = loss_mfd(s, t, cfg).item();
    const double want =
        kl_oracle(s.features[0], t.features[0], 1, cfg.kd_temperature);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
  }
  SUBCASE("two random 64-channel maps match the oracle") {
    FocusnessFeatures s = features(2, 64);
    FocusnessFeatures t = features(2, 64);
    double want = 0.0;
    for (int i = 0; i < 2; ++i) {
      want +=
          kl_oracle(s.features[i], t.features[i], 1, cfg.kd_temperature);
    }
    want /= 2.0;
    CHECK(loss_mfd(s, t, cfg).item() ==
          doctest::Approx(want).epsilon(1e-10));
  }
  SUBCASE("slice count mismatch is a usage error") {
    FocusnessFeatures s = features(2, 8);
    FocusnessFeatures t = features(3, 8);
    CHECK_THROWS_AS(loss_mfd(s, t, cfg), UsageError);
  }
}

TEST_CASE("loss_afd") {
  Rng rng(13);
  DistillConfig cfg;
  SUBCASE("matching attention gives zero") {
    Tensor logits = random_tensor({1, 6, 1, 1}, rng);
    Tensor a = softmax_t(logits, 1, cfg.kd_temperature);
    // The teacher side re-sharpens through log, so feeding the softened
    // student distribution back gives KL(p||p).
    CHECK(std::abs(loss_afd(logits, a, cfg).item()) < 1e-12);
  }
  SUBCASE("uniform teacher bounds below by zero") {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor logits = random_tensor({1, 12, 1, 1}, rng, -5.0, 5.0);
      Tensor uniform = Tensor::full({1, 12, 1, 1}, 1.0 / 12.0);
      CHECK(loss_afd(logits, uniform, cfg).item() >= -1e-12);
    }
  }
  SUBCASE("random case matches the oracle") {
    Tensor logits = random_tensor({1, 12, 1, 1}, rng, -3.0, 3.0);
    Tensor teacher_raw = random_tensor({1, 12, 1, 1}, rng, -2.0, 2.0);
    Tensor a_tea = softmax_t(teacher_raw, 1, 1.0);
    Tensor log_a({1, 12, 1, 1});
    for (int64_t i = 0; i < 12; ++i) {
      log_a.data()[i] = std::log(a_tea.data()[i] + 1e-300);
    }
    const double want = kl_oracle(logits, log_a, 1, cfg.kd_temperature);
    CHECK(loss_afd(logits, a_tea, cfg).item() ==
          doctest::Approx(want).epsilon(1e-10));
  }
  SUBCASE("length mismatch is a usage error") {
    CHECK_THROWS_AS(
        loss_afd(Tensor({1, 3, 1, 1}), Tensor({1, 4, 1, 1}), cfg),
        UsageError);
  }
}

TEST_CASE("loss_sfd") {
  Rng rng(17);
  DistillConfig cfg;
  SUBCASE("alpha zero with identical logits gives zero") {
    DistillConfig c2 = cfg;
    c2.alpha = 0.0;
    Tensor z = random_tensor({1, 2, 3, 3}, rng);
    Tensor mask = binary_mask(3, 3, rng);
    CHECK(std::abs(loss_sfd(z, z, mask, c2).item()) < 1e-12);
  }
  SUBCASE("teacher and student nailed to the ground truth saturate to zero") {
    Rng r2(19);
    Tensor mask = binary_mask(3, 3, r2);
    Tensor logits({1, 2, 3, 3});
    for (int i = 0; i < 9; ++i) {
      const double cls = mask.data()[i];
      logits.data()[i] = cls > 0.5 ? -30.0 : 30.0;
      logits.data()[9 + i] = cls > 0.5 ? 30.0 : -30.0;
    }
    CHECK(loss_sfd(logits, logits, mask, cfg).item() < 1e-8);
  }
  SUBCASE("random case equals KL oracle plus alpha CE oracle") {
    Tensor s = random_tensor({1, 2, 3, 3}, rng);
    Tensor t = random_tensor({1, 2, 3, 3}, rng);
    Tensor mask = binary_mask(3, 3, rng);
    const double want =
        kl_oracle(s, t, 1, cfg.kd_temperature) + cfg.alpha * ce_oracle(s, mask);
    CHECK(loss_sfd(s, t, mask, cfg).item() ==
          doctest::Approx(want).epsilon(1e-10));
  }
}

namespace {

struct SmallPair {
  TeacherModel teacher;
  StudentModel student;
  std::vector<Tensor> slices;
  Tensor rgb;
  Tensor mask;
  SmallPair() {
    ModelConfig cfg;
    cfg.slice_count = 2;
    cfg.mfsm_steps = 2;
    cfg.teacher_multiplier = 1;
    teacher = TeacherModel(cfg);
    teacher.init(5);
    student = StudentModel(cfg);
    student.init(6);
    Rng rng(21);
    for (int i = 0; i < 2; ++i) {
      Tensor s({3, 8, 8});
      for (double& v : s.buffer()) v = rng.next_double();
      slices.push_back(s);
    }
    rgb = Tensor({3, 8, 8});
    for (double& v : rgb.buffer()) v = rng.next_double();
    mask = Tensor({1, 1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  }
};

}  // namespace

TEST_CASE("student objective") {
  SmallPair fx;
  DistillConfig cfg;

  SUBCASE("no gradient reaches teacher parameters") {
    Tape tape;
    TapeScope scope(tape);
    TeacherOutput tout = fx.teacher.forward(fx.slices);
    StudentOutput sout = fx.student.forward(fx.rgb);
    Tensor obj = student_objective(sout, tout, fx.mask, cfg);
    tape.backward(obj);
    for (NamedParam& p : fx.teacher.parameters()) {
      bool zero = true;
      if (p.tensor.has_grad()) {
        for (double g : p.tensor.grad_buffer()) {
          if (g != 0.0) zero = false;
        }
      }
      CHECK_MESSAGE(zero, p.name);
    }
    bool student_moved = false;
    for (NamedParam& p : fx.student.parameters()) {
      if (p.tensor.has_grad()) {
        for (double g : p.tensor.grad_buffer()) {
          if (g != 0.0) student_moved = true;
        }
      }
    }
    CHECK(student_moved);
  }

  SUBCASE("objective is the sum of its three parts") {
    NoGradGuard guard;
    TeacherOutput tout = fx.teacher.forward(fx.slices);
    StudentOutput sout = fx.student.forward(fx.rgb);
    const double mfd =
        loss_mfd(sout.hallucinated, tout.focusness, cfg).item();
    const double afd =
        loss_afd(sout.attention_logits,
                 teacher_attention_reference(tout.trace), cfg)
            .item();
    const double sfd = loss_sfd(sout.logits, tout.logits, fx.mask, cfg).item();
    CHECK(student_objective(sout, tout, fx.mask, cfg).item() ==
          doctest::Approx(mfd + afd + sfd).epsilon(1e-12));
  }

  SUBCASE("invariant to a constant shift of every teacher logit") {
    NoGradGuard guard;
    TeacherOutput tout = fx.teacher.forward(fx.slices);
    StudentOutput sout = fx.student.forward(fx.rgb);
    const double base = student_objective(sout, tout, fx.mask, cfg).item();
    TeacherOutput shifted = tout;
    shifted.logits = add(tout.logits, Tensor::scalar(3.7));
    const double moved =
        student_objective(sout, shifted, fx.mask, cfg).item();
    CHECK(moved == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("every distillation loss matches finite differences") {
  // Random 2-slice 4x4 problems, gradients w.r.t. the student-side logits.
  Rng rng(31);
  DistillConfig cfg;
  GradCheckOptions opts;
  opts.max_entries_per_param = 64;
  opts.seed = 3;

  SUBCASE("ce") {
    Tensor logits = random_tensor({1, 2, 4, 4}, rng);
    logits.mark_parameter();
    Tensor mask = binary_mask(4, 4, rng);
    std::vector<Tensor> params{logits};
    CHECK(finite_difference_check(
              [&]() { return ce_loss(logits, mask); }, params, opts) < 1e-5);
  }
  SUBCASE("mse") {
    Tensor a = random_tensor({2, 4, 4}, rng);
    Tensor b = random_tensor({2, 4, 4}, rng);
    a.mark_parameter();
    b.mark_parameter();
    std::vector<Tensor> params{a, b};
    CHECK(finite_difference_check([&]() { return mse_loss(a, b); }, params,
                                  opts) < 1e-5);
  }
  SUBCASE("kl") {
    Tensor p = random_tensor({1, 2, 4, 4}, rng);
    Tensor q = random_tensor({1, 2, 4, 4}, rng);
    p.mark_parameter();
    q.mark_parameter();
    std::vector<Tensor> params{p, q};
    CHECK(finite_difference_check(
              [&]() {
                return kl_divergence_t(p, q, 1, 20.0, StopGradient::None);
              },
              params, opts) < 1e-5);
  }
  SUBCASE("mfd") {
    FocusnessFeatures s, t;
    for (int i = 0; i < 2; ++i) {
      s.features.push_back(random_tensor({1, 8, 4, 4}, rng));
      t.features.push_back(random_tensor({1, 8, 4, 4}, rng));
      s.features.back().mark_parameter();
    }
    std::vector<Tensor> params{s.features[0], s.features[1]};
    CHECK(finite_difference_check([&]() { return loss_mfd(s, t, cfg); },
                                  params, opts) < 1e-5);
  }
  SUBCASE("afd") {
    Tensor logits = random_tensor({1, 6, 1, 1}, rng);
    logits.mark_parameter();
    Tensor a_tea = softmax_t(random_tensor({1, 6, 1, 1}, rng), 1, 1.0);
    std::vector<Tensor> params{logits};
    CHECK(finite_difference_check(
              [&]() { return loss_afd(logits, a_tea, cfg); }, params,
              opts) < 1e-5);
  }
  SUBCASE("sfd") {
    Tensor s = random_tensor({1, 2, 4, 4}, rng);
    s.mark_parameter();
    Tensor t = random_tensor({1, 2, 4, 4}, rng);
    Tensor mask = binary_mask(4, 4, rng);
    std::vector<Tensor> params{s};
    CHECK(finite_difference_check(
              [&]() { return loss_sfd(s, t, mask, cfg); }, params, opts) <
          1e-5);
  }
  SUBCASE("recruiting loss") {
    std::vector<Tensor> p{random_tensor({1, 2, 4, 4}, rng),
                          random_tensor({1, 2, 4, 4}, rng)};
    p[0].mark_parameter();
    p[1].mark_parameter();
    Tensor mask = binary_mask(4, 4, rng);
    std::vector<Tensor> params{p[0], p[1]};
    CHECK(finite_difference_check(
              [&]() { return mfrm_loss(p, mask, 10.0); }, params, opts) <
          1e-5);
  }
}
