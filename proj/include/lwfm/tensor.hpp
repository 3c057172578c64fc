#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lwfm {

/// One image's activations at one backbone layer: an h x w x c grid stored
/// row-major as (row, column, channel). Values are finite and immutable once
/// constructed.
class FeatureMap {
 public:
  /// Zero-filled map.
  FeatureMap(std::size_t h, std::size_t w, std::size_t c);
  /// Takes ownership of `data` (size h*w*c, all finite).
  FeatureMap(std::size_t h, std::size_t w, std::size_t c,
             std::vector<double> data);

  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t c() const { return c_; }
  std::size_t pixel_count() const { return h_ * w_; }

  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * w_ + col) * c_ + ch];
  }
  std::span<const double> pixel(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * w_ + col) * c_, c_};
  }
  std::span<const double> pixel(std::size_t flat_index) const {
    return {data_.data() + flat_index * c_, c_};
  }
  std::span<const double> values() const { return data_; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t h_;
  std::size_t w_;
  std::size_t c_;
  std::vector<double> data_;
};

/// n pixel vectors of length c, the hw x c view of a FeatureMap.
class PixelMatrix {
 public:
  /// Empty 0 x 0 placeholder.
  PixelMatrix() = default;
  PixelMatrix(std::size_t n, std::size_t c);
  PixelMatrix(std::size_t n, std::size_t c, std::vector<double> data);

  std::size_t n() const { return n_; }
  std::size_t c() const { return c_; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * c_, c_};
  }
  std::span<double> row(std::size_t i) { return {data_.data() + i * c_, c_}; }
  std::span<const double> values() const { return data_; }

  friend bool operator==(const PixelMatrix&, const PixelMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t c_ = 0;
  std::vector<double> data_;
};

/// Dense row-major real matrix used for correlation and matching matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  std::span<const double> values() const { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Norm below which a vector is treated as zero by cosine().
inline constexpr double kCosineEpsilon = 1e-12;

/// Adaptive average pooling. Output cell (i, j) averages input rows
/// [floor(i*h/out_h), ceil((i+1)*h/out_h)) and the analogous column range;
/// channels are pooled independently.
FeatureMap adaptive_avg_pool(const FeatureMap& m, std::size_t out_h,
                             std::size_t out_w);

/// Row (i*w + j) of the result is the channel vector at (i, j).
PixelMatrix flatten_spatial(const FeatureMap& m);
FeatureMap unflatten_spatial(const PixelMatrix& p, std::size_t h,
                             std::size_t w);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Cosine similarity; 0.0 when either norm is below kCosineEpsilon.
double cosine(std::span<const double> a, std::span<const double> b);

/// Per-channel mean over all h*w positions.
std::vector<double> mean_embedding(const FeatureMap& m);

}  // namespace lwfm
