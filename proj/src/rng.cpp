#include "fd/rng.hpp"

#include <cstdio>

#include "fd/error.hpp"

namespace fd {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  uint64_t s = a;
  uint64_t h = splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ull;
  h ^= splitmix64(s);
  s ^= c + 0x7f4a7c159e3779b9ull;
  h ^= splitmix64(s);
  return h;
}

Rng::Rng(uint64_t seed) {
  uint64_t s = seed;
  for (auto& word : s_) {
    word = splitmix64(s);
  }
}

static inline uint64_t rotl(uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) {
    throw UsageError("Rng::uniform_int: empty range");
  }
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw unbiased for any span.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<int64_t>(x % span);
}

std::string Rng::serialize() const {
  char buf[4 * 16 + 4];
  std::snprintf(buf, sizeof(buf), "%016llx:%016llx:%016llx:%016llx",
                static_cast<unsigned long long>(s_[0]),
                static_cast<unsigned long long>(s_[1]),
                static_cast<unsigned long long>(s_[2]),
                static_cast<unsigned long long>(s_[3]));
  return std::string(buf);
}

Rng Rng::deserialize(const std::string& text) {
  unsigned long long w[4];
  if (std::sscanf(text.c_str(), "%16llx:%16llx:%16llx:%16llx", &w[0], &w[1],
                  &w[2], &w[3]) != 4) {
    throw IoError("Rng::deserialize: malformed state string");
  }
  Rng rng;
  rng.s_ = {w[0], w[1], w[2], w[3]};
  return rng;
}

}  // namespace fd
