#include "fd/teacher.hpp"

#include <cmath>
#include <string>

#include "fd/distill.hpp"
#include "fd/error.hpp"

namespace fd {

TeacherModel::TeacherModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.slice_count < 1 || cfg.mfsm_steps < 1) {
    throw ConfigError("teacher: slice count and step count must be >= 1");
  }
  const int n = cfg.slice_count;
  const int c = Backbone::kFusedChannels;
  backbone_ = Backbone(cfg.teacher_multiplier, "backbone");
  mfrm_heads_.reserve(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    mfrm_heads_.emplace_back("mfrm.head" + std::to_string(k), c, 2, 1, 1, 0);
  }
  attn_f_ = ConvLayer("mfsm.attn_f", c * n, n, 3, 1, 1);
  attn_h_ = ConvLayer("mfsm.attn_h", c, n, 3, 1, 1, /*with_bias=*/false);
  lstm_ = ConvLstmCell(c, "mfsm.lstm");
  head_ = ConvLayer("mfsm.head", c * cfg.mfsm_steps, 2, 1, 1, 0);
}

void TeacherModel::init(uint64_t seed) {
  Rng rng(seed);
  backbone_.init(rng);
  for (ConvLayer& head : mfrm_heads_) {
    head.init(rng);
  }
  // Slice attention: one shared kernel on each slice's own channel block,
  // zeros elsewhere and on the hidden path. Symmetric under slice
  // permutation until training breaks the tie.
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
  std::fill(attn_h_.weight().buffer().begin(),
            attn_h_.weight().buffer().end(), 0.0);
  lstm_.init(rng);
  head_.init(rng);
}

TeacherOutput TeacherModel::forward(const std::vector<Tensor>& slices) const {
  if (slices.empty()) {
    throw UsageError("teacher forward: slice list is empty");
  }
  if (static_cast<int>(slices.size()) != cfg_.slice_count) {
    throw UsageError("teacher forward: expected " +
                     std::to_string(cfg_.slice_count) + " slices, got " +
                     std::to_string(slices.size()));
  }
  FocusnessFeatures focusness;
  focusness.features.reserve(slices.size());
  for (const Tensor& slice : slices) {
    if (slice.ndim() != 3 || slice.extent(0) != 3) {
      throw UsageError("teacher forward: slices must be (3,H,W) tensors");
    }
    Tensor batched =
        reshape(slice, {1, 3, slice.extent(1), slice.extent(2)});
    focusness.features.push_back(backbone_.forward(batched));
  }

  TeacherOutput out;
  out.focusness = focusness;
  out.mfrm_logits.reserve(focusness.features.size());
  for (size_t k = 0; k < focusness.features.size(); ++k) {
    out.mfrm_logits.push_back(
        mfrm_heads_[k].forward(focusness.features[k]));
  }
  auto [trace, logits] = mfsm_forward(focusness, cfg_.mfsm_steps);
  out.trace = std::move(trace);
  out.logits = logits;
  out.probs = softmax_t(logits, 1, 1.0);
  return out;
}

std::pair<MfsmTrace, Tensor> TeacherModel::mfsm_forward(
    const FocusnessFeatures& f, int steps) const {
  if (steps != cfg_.mfsm_steps) {
    throw ConfigError(
        "mfsm_forward: step count must match the configured head");
  }
  if (f.slice_count() != cfg_.slice_count) {
    throw ConfigError("mfsm_forward: slice count mismatch");
  }
  const int n = f.slice_count();
  Tensor cat = concat(f.features, 1);
  // The slice term of the attention logits does not depend on t.
  Tensor slice_term = attn_f_.forward(cat);
  const int h = cat.extent(2), w = cat.extent(3);
  ConvLstmState state = lstm_.zero_state(1, h, w);
  const std::vector<int> ones(static_cast<size_t>(n), 1);

  MfsmTrace trace;
  for (int t = 0; t < steps; ++t) {
    Tensor logits_map = add(slice_term, attn_h_.forward(state.h));
    Tensor attention = softmax_t(global_avg_pool(logits_map), 1, 1.0);
    std::vector<Tensor> weights = split(attention, ones, 1);
    Tensor fused = mul(f.features[0], weights[0]);
    for (int i = 1; i < n; ++i) {
      fused = add(fused, mul(f.features[static_cast<size_t>(i)],
                             weights[static_cast<size_t>(i)]));
    }
    ConvLstmStepResult step = lstm_.step(fused, state);
    state = step.state;
    trace.attention.push_back(attention);
    trace.hidden.push_back(step.state.h);
    trace.cell.push_back(step.state.c);
    trace.outputs.push_back(cfg_.mfsm_output_gate ? step.output_gate
                                                  : step.hidden);
  }
  Tensor logits = head_.forward(concat(trace.outputs, 1));
  return {std::move(trace), logits};
}

ParamList TeacherModel::parameters() const {
  ParamList out;
  backbone_.collect(out);
  for (const ConvLayer& head : mfrm_heads_) {
    head.collect(out);
  }
  attn_f_.collect(out);
  attn_h_.collect(out);
  lstm_.collect(out);
  head_.collect(out);
  return out;
}

void TeacherModel::freeze() {
  for (NamedParam& p : parameters()) {
    p.tensor.impl()->requires_grad = false;
    p.tensor.impl()->leaf = false;
    p.tensor.drop_grad();
  }
}

bool TeacherModel::frozen() const {
  for (const NamedParam& p : parameters()) {
    if (p.tensor.requires_grad()) {
      return false;
    }
  }
  return true;
}

Tensor mfrm_loss(const std::vector<Tensor>& mfrm_logits, const Tensor& mask,
                 double lambda) {
  if (mfrm_logits.empty()) {
    throw UsageError("mfrm_loss: no projected slice maps");
  }
  const int n = static_cast<int>(mfrm_logits.size());
  const Tensor one = Tensor::scalar(1.0);
  Tensor total;
  for (int k = 0; k < n; ++k) {
    Tensor term = ce_loss(mfrm_logits[static_cast<size_t>(k)], mask);
    if (lambda != 0.0 && n > 1) {
      Tensor diversity;
      for (int i = 0; i < n; ++i) {
        if (i == k) continue;
        Tensor pair_mse = mse_loss(mfrm_logits[static_cast<size_t>(k)],
                                   mfrm_logits[static_cast<size_t>(i)]);
        diversity = diversity.defined() ? add(diversity, pair_mse) : pair_mse;
      }
      // min(1, x) keeps the negative diversity term bounded.
      Tensor capped = sub(one, relu(sub(one, diversity)));
      term = sub(term, scale(capped, lambda));
    }
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor teacher_attention_reference(const MfsmTrace& trace, bool final_step) {
  if (trace.attention.empty()) {
    throw UsageError("teacher_attention_reference: empty trace");
  }
  if (final_step) {
    return trace.attention.back();
  }
  Tensor acc = trace.attention.front();
  for (size_t t = 1; t < trace.attention.size(); ++t) {
    acc = add(acc, trace.attention[t]);
  }
  return scale(acc, 1.0 / static_cast<double>(trace.attention.size()));
}

}  // namespace fd
