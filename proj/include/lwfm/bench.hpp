#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lwfm {

struct BenchRow {
  std::size_t side = 0;        // d: pooled map side
  std::size_t n = 0;           // matrix side d^2
  double mean_seconds = 0.0;   // per hungarian_assign call
};

/// Times hungarian_assign on `trials` random n x n matching matrices
/// (n = d^2, entries uniform in [-1, 1]) for every d in `sides`.
std::vector<BenchRow> bench_assign(std::span<const std::size_t> sides,
                                   std::size_t trials, std::uint64_t seed);

/// Least-squares slope of log(mean_seconds) against log(n).
double loglog_slope(std::span<const BenchRow> rows);

}  // namespace lwfm
