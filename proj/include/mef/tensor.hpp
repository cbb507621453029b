#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mef/error.hpp"

namespace mef {

/// Spatial/channel extent of one sample: height x width x channels.
struct Shape3 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  std::size_t size() const { return h * w * c; }
  bool operator==(const Shape3&) const = default;
};

/// Rank-4 extent in the (height, width, channels, batch) convention.
struct Shape4 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  std::size_t n = 0;

  std::size_t size() const { return h * w * c * n; }
  std::size_t sample_size() const { return h * w * c; }
  Shape3 sample() const { return {h, w, c}; }
  bool empty() const { return h == 0 || w == 0 || c == 0 || n == 0; }
  bool operator==(const Shape4&) const = default;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

inline std::string to_string(const Shape4& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c) + "x" +
         std::to_string(s.n);
}

/// Dense rank-4 array of doubles with dims (H, W, C, N).
///
/// Storage is sample-major: every sample occupies one contiguous block laid
/// out height-major, then width, then channel, so
/// `offset(h, w, c, n) = ((n * H + h) * W + w) * C + c`. The per-sample block
/// is therefore already in the flattening order the fully connected layer uses.
///
/// A default-constructed tensor is the "null" tensor; every layer operation
/// rejects it with `EmptyTensor`. Constructing with any zero dim is an error.
class Tensor4 {
 public:
  Tensor4() = default;

  explicit Tensor4(Shape4 shape, double fill = 0.0) : shape_(shape) {
    require(!shape.empty(), ErrorCode::EmptyTensor, "tensor dims must all be >= 1, got " + to_string(shape));
    data_.assign(shape.size(), fill);
  }

  Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    require(!shape.empty(), ErrorCode::EmptyTensor, "tensor dims must all be >= 1, got " + to_string(shape));
    require(data_.size() == shape.size(), ErrorCode::DimMismatch,
            "data length " + std::to_string(data_.size()) + " != " + to_string(shape));
  }

  const Shape4& shape() const { return shape_; }
  std::size_t height() const { return shape_.h; }
  std::size_t width() const { return shape_.w; }
  std::size_t channels() const { return shape_.c; }
  std::size_t batch() const { return shape_.n; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t offset(std::size_t h, std::size_t w, std::size_t c, std::size_t n) const {
    return ((n * shape_.h + h) * shape_.w + w) * shape_.c + c;
  }

  double& operator()(std::size_t h, std::size_t w, std::size_t c, std::size_t n) {
    return data_[offset(h, w, c, n)];
  }
  const double& operator()(std::size_t h, std::size_t w, std::size_t c, std::size_t n) const {
    return data_[offset(h, w, c, n)];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::span<double> sample(std::size_t n) {
    const std::size_t s = shape_.sample_size();
    return std::span<double>(data_).subspan(n * s, s);
  }
  std::span<const double> sample(std::size_t n) const {
    const std::size_t s = shape_.sample_size();
    return std::span<const double>(data_).subspan(n * s, s);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor4&) const = default;

 private:
  Shape4 shape_{};
  std::vector<double> data_;
};

inline void require_nonempty(const Tensor4& t, const char* what) {
  require(!t.empty(), ErrorCode::EmptyTensor, std::string(what) + " is empty");
}

}  // namespace mef
