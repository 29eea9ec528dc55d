#include "mnf/rng.hpp"

#include <cmath>
#include <numbers>

#include "mnf/errors.hpp"

namespace mnf {

namespace {
constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  inc_ = (stream << 1u) | 1u;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Rng::next_u32() {
  std::uint64_t old = state_;
  state_ = old * kMultiplier + inc_;
  auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
}

std::uint64_t Rng::next_u64() {
  std::uint64_t hi = next_u32();
  return (hi << 32u) | next_u32();
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53; }

std::uint32_t Rng::below(std::uint32_t bound) {
  if (bound == 0) throw ContractViolation("Rng::below requires a positive bound");
  // Rejection keeps the draw unbiased.
  std::uint32_t threshold = (-bound) % bound;
  for (;;) {
    auto r = next_u32();
    if (r >= threshold) return r % bound;
  }
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = uniform();
  double u2 = uniform();
  // 1 - u1 lies in (0, 1], so the log is finite.
  double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
  double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

bool Rng::bernoulli(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("bernoulli probability must lie in [0, 1]");
  return uniform() < p;
}

Rng Rng::fork(std::uint64_t id) const {
  return Rng(splitmix64(seed_ ^ splitmix64(id + 0x632BE59BD9B4E019ULL)), splitmix64(stream_ + id + 1));
}

Tensor sample_normal(Rng& rng, const Shape& shape) {
  Tensor out(shape);
  for (auto& v : out.data()) v = rng.normal();
  return out;
}

Tensor sample_bernoulli(Rng& rng, double p, const Shape& shape) {
  if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("bernoulli probability must lie in [0, 1]");
  Tensor out(shape);
  for (auto& v : out.data()) v = rng.uniform() < p ? 1.0 : 0.0;
  return out;
}

}  // namespace mnf
