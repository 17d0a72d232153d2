#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace invsen::numkit {

/// splitmix64 finalizer; used for seeding and for deriving sub-seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derive an independent seed for a named consumer, e.g. derive_seed(seed, "key_net").
/// FNV-1a over the name, mixed with the parent seed through splitmix64.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// xoshiro256** with splitmix64 seeding. Every stream is a pure function of the
/// seed; all floating-point transforms are written out here so results do not
/// depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    /// Standard normal via the Box-Muller transform (one cached spare).
    double normal();
    /// Uniform integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound);
    bool bernoulli(double p) { return uniform() < p; }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t draws() const noexcept { return draws_; }

  private:
    std::array<std::uint64_t, 4> s_{};
    std::uint64_t seed_;
    std::uint64_t draws_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace invsen::numkit
