#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

#include "peerprof/error.hpp"

namespace peerprof {

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 when n == 1
  double min = 0.0;
  double max = 0.0;
};

// Welford accumulation in the order given: two callers feeding the same
// sequence get bit-identical results, and k copies of v yield exactly v and 0.
inline SampleStats sample_stats(std::span<const double> values) {
  if (values.empty()) fail(Errc::EmptyInput, "no samples");
  SampleStats s;
  s.n = values.size();
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t k = 0;
  for (double v : values) {
    ++k;
    const double delta = v - mean;
    mean += delta / static_cast<double>(k);
    m2 += delta * (v - mean);
  }
  s.mean = mean;
  if (s.n > 1) s.std = std::sqrt(std::max(0.0, m2 / static_cast<double>(s.n - 1)));
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

}  // namespace peerprof
