#include "lwfm/bench.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "lwfm/spm.hpp"

namespace lwfm {

std::vector<BenchRow> bench_assign(std::span<const std::size_t> sides,
                                   std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("bench_assign: trials >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<BenchRow> rows;
  for (std::size_t d : sides) {
    if (d == 0) throw std::invalid_argument("bench_assign: side must be >= 1");
    const std::size_t n = d * d;
    std::vector<MatchingMatrix> inputs;
    inputs.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
      Matrix m(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) m(i, j) = unit(rng);
      }
      inputs.push_back({std::move(m)});
    }
    // Matrices are generated outside the timed region.
    volatile std::size_t sink = 0;
    const auto start = std::chrono::steady_clock::now();
    for (const MatchingMatrix& m : inputs) {
      sink = sink + hungarian_assign(m).perm[0];
    }
    const std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - start;
    rows.push_back({d, n, elapsed.count() / static_cast<double>(trials)});
  }
  return rows;
}

double loglog_slope(std::span<const BenchRow> rows) {
  if (rows.size() < 2) {
    throw std::invalid_argument("loglog_slope: need at least two sizes");
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const BenchRow& r : rows) {
    const double x = std::log(static_cast<double>(r.n));
    const double y = std::log(r.mean_seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(rows.size());
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

}  // namespace lwfm
