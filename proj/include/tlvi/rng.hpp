#pragma once

#include <cstdint>

namespace tlvi {

// splitmix64 step; also used to derive child seeds from a master seed.
std::uint64_t splitmix64(std::uint64_t x);

// xoshiro256++ behind a fixed, implementation-owned interface so that draws
// are bit-identical across compilers and standard libraries.  std::shuffle
// and std:: distributions are not portable in that sense, so nothing in this
// library uses them.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // uniform on [0, 1) with 53 random bits
    double uniform();

    // standard normal (Box-Muller, second value cached)
    double normal();

    // unbiased integer on [0, n), rejection sampled
    std::uint64_t below(std::uint64_t n);

  private:
    std::uint64_t s_[4];
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace tlvi
