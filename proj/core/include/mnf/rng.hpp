#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "mnf/tensor.hpp"

namespace mnf {

// PCG32 (XSH-RR 64/32, O'Neill 2014) with explicit stream selection.
// Normals come from Box-Muller on 53-bit uniforms, so a given (seed, stream)
// produces the same sequence on any platform with a correctly rounded libm.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "pcg32-xsh-rr";

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer on [0, bound).
  std::uint32_t below(std::uint32_t bound);
  double normal();
  bool bernoulli(double p);

  // Independent generator for sub-task `id`; the parent is not advanced.
  Rng fork(std::uint64_t id) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

// i.i.d. draws, returned detached from any tape.
Tensor sample_normal(Rng& rng, const Shape& shape);
Tensor sample_bernoulli(Rng& rng, double p, const Shape& shape);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    auto j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace mnf
