#include "lwfm/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lwfm {
namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) +
                                  ": values must be finite");
    }
  }
}

}  // namespace

FeatureMap::FeatureMap(std::size_t h, std::size_t w, std::size_t c)
    : FeatureMap(h, w, c, std::vector<double>(h * w * c, 0.0)) {}

FeatureMap::FeatureMap(std::size_t h, std::size_t w, std::size_t c,
                       std::vector<double> data)
    : h_(h), w_(w), c_(c), data_(std::move(data)) {
  if (h == 0 || w == 0 || c == 0) {
    throw std::invalid_argument("FeatureMap: dimensions must be >= 1");
  }
  if (data_.size() != h * w * c) {
    throw std::invalid_argument("FeatureMap: data size " +
                                std::to_string(data_.size()) +
                                " does not match h*w*c = " +
                                std::to_string(h * w * c));
  }
  require_finite(data_, "FeatureMap");
}

PixelMatrix::PixelMatrix(std::size_t n, std::size_t c)
    : PixelMatrix(n, c, std::vector<double>(n * c, 0.0)) {}

PixelMatrix::PixelMatrix(std::size_t n, std::size_t c,
                         std::vector<double> data)
    : n_(n), c_(c), data_(std::move(data)) {
  if (n == 0 || c == 0) {
    throw std::invalid_argument("PixelMatrix: dimensions must be >= 1");
  }
  if (data_.size() != n * c) {
    throw std::invalid_argument("PixelMatrix: data size mismatch");
  }
  require_finite(data_, "PixelMatrix");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Matrix: data size mismatch");
  }
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  }
  return t;
}

FeatureMap adaptive_avg_pool(const FeatureMap& m, std::size_t out_h,
                             std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || out_h > m.h() || out_w > m.w()) {
    throw std::invalid_argument(
        "adaptive_avg_pool: requested " + std::to_string(out_h) + "x" +
        std::to_string(out_w) + " from a " + std::to_string(m.h()) + "x" +
        std::to_string(m.w()) + " map");
  }
  const std::size_t h = m.h(), w = m.w(), c = m.c();
  std::vector<double> out(out_h * out_w * c, 0.0);
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t r0 = (i * h) / out_h;
    const std::size_t r1 = ((i + 1) * h + out_h - 1) / out_h;
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t c0 = (j * w) / out_w;
      const std::size_t c1 = ((j + 1) * w + out_w - 1) / out_w;
      double* cell = out.data() + (i * out_w + j) * c;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t q = c0; q < c1; ++q) {
          auto px = m.pixel(r, q);
          for (std::size_t k = 0; k < c; ++k) cell[k] += px[k];
        }
      }
      const double count = static_cast<double>((r1 - r0) * (c1 - c0));
      for (std::size_t k = 0; k < c; ++k) cell[k] /= count;
    }
  }
  return FeatureMap(out_h, out_w, c, std::move(out));
}

PixelMatrix flatten_spatial(const FeatureMap& m) {
  auto v = m.values();
  return PixelMatrix(m.pixel_count(), m.c(),
                     std::vector<double>(v.begin(), v.end()));
}

FeatureMap unflatten_spatial(const PixelMatrix& p, std::size_t h,
                             std::size_t w) {
  if (h * w != p.n()) {
    throw std::invalid_argument("unflatten_spatial: h*w must equal n");
  }
  auto v = p.values();
  return FeatureMap(h, w, p.c(), std::vector<double>(v.begin(), v.end()));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: length mismatch");
  }
  // Four independent partial sums let the compiler pipeline the loop.
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("cosine: vectors must have equal length >= 1");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na < kCosineEpsilon || nb < kCosineEpsilon) return 0.0;
  return dot(a, b) / (na * nb);
}

std::vector<double> mean_embedding(const FeatureMap& m) {
  std::vector<double> mean(m.c(), 0.0);
  for (std::size_t p = 0; p < m.pixel_count(); ++p) {
    auto px = m.pixel(p);
    for (std::size_t k = 0; k < m.c(); ++k) mean[k] += px[k];
  }
  const double n = static_cast<double>(m.pixel_count());
  for (double& v : mean) v /= n;
  return mean;
}

}  // namespace lwfm
