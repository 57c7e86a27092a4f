#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace fd {

/// splitmix64 step, also used standalone to derive stream keys.
uint64_t splitmix64(uint64_t& state);

/// Hash a handful of words into one seed (for per-epoch / per-sample streams).
uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0);

/// xoshiro256++ generator. Hand-rolled so that streams are identical across
/// platforms and the state serializes into checkpoints as four words.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double next_double();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

  /// Fixed-width hex encoding of the four state words.
  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  bool operator==(const Rng& other) const { return s_ == other.s_; }

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace fd
