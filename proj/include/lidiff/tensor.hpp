#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "lidiff/error.hpp"

namespace lidiff {

/// Dense NCHW tensor. Vectors use (N, F, 1, 1).
template <typename S>
struct Tensor {
  std::array<std::size_t, 4> shape{0, 0, 0, 0};
  std::vector<S> data;

  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, S fill = S(0))
      : shape{n, c, h, w}, data(n * c * h * w, fill) {}

  std::size_t n() const { return shape[0]; }
  std::size_t c() const { return shape[1]; }
  std::size_t h() const { return shape[2]; }
  std::size_t w() const { return shape[3]; }
  std::size_t plane() const { return shape[2] * shape[3]; }
  std::size_t per_item() const { return shape[1] * shape[2] * shape[3]; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  S* item(std::size_t b) { return data.data() + b * per_item(); }
  const S* item(std::size_t b) const { return data.data() + b * per_item(); }
  S* channel(std::size_t b, std::size_t ch) { return item(b) + ch * plane(); }
  const S* channel(std::size_t b, std::size_t ch) const { return item(b) + ch * plane(); }

  S& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
    return data[((b * shape[1] + ch) * shape[2] + y) * shape[3] + x];
  }
  S operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return data[((b * shape[1] + ch) * shape[2] + y) * shape[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

template <typename S>
std::string shape_string(const Tensor<S>& t) {
  return std::to_string(t.n()) + "x" + std::to_string(t.c()) + "x" + std::to_string(t.h()) + "x" +
         std::to_string(t.w());
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  require(a.same_shape(b), Errc::shape,
          std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace lidiff
