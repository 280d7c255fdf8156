#pragma once

#include <cstdint>
#include <random>

namespace devrate {

//! Reproducible random stream keyed by (seed, stream, substream).
//!
//! Each key deterministically seeds its own engine, so replication k of
//! sample size n draws the same numbers no matter which thread runs it or in
//! which order.
class Stream
{
public:
  explicit Stream(std::uint64_t seed,
                  std::uint64_t stream = 0,
                  std::uint64_t substream = 0)
  {
    std::seed_seq seq{ static_cast<std::uint32_t>(seed),
                       static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(stream),
                       static_cast<std::uint32_t>(stream >> 32),
                       static_cast<std::uint32_t>(substream),
                       static_cast<std::uint32_t>(substream >> 32),
                       0x64657672u };
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  //! uniform on [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool coin() { return (engine_() >> 63) != 0; }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{ 0.0, 1.0 };
  std::uniform_real_distribution<double> uniform_{ 0.0, 1.0 };
};

} // namespace devrate
