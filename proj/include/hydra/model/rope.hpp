#pragma once

#include <cmath>
#include <cstddef>

#include "hydra/numkit/tensor.hpp"

namespace hydra {

/// Rotary position encoding over adjacent column pairs (2j, 2j+1) of a
/// [n x W] matrix. Row t sits at position `first_position + t`; pair j
/// rotates by angle position * base^(-2j / W).
template <class T>
Tensor<T> apply_rope(const Tensor<T>& z, double base, std::size_t first_position = 0,
                     bool inverse = false) {
  if (z.rank() != 2) throw ShapeError("rope: input must be rank 2, got " + shape_str(z.shape()));
  const std::size_t n = z.rows(), w = z.cols();
  if (w % 2 != 0) throw ShapeError("rope: width " + std::to_string(w) + " is odd");
  Tensor<T> out(z.shape());
  const std::size_t pairs = w / 2;
  for (std::size_t j = 0; j < pairs; ++j) {
    const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(w));
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = static_cast<double>(first_position + t) * freq;
      const T c = static_cast<T>(std::cos(angle));
      const T s = static_cast<T>(inverse ? -std::sin(angle) : std::sin(angle));
      const T x0 = z(t, 2 * j), x1 = z(t, 2 * j + 1);
      out(t, 2 * j) = x0 * c - x1 * s;
      out(t, 2 * j + 1) = x0 * s + x1 * c;
    }
  }
  return out;
}

/// Gradient of apply_rope: the transpose of a rotation is the inverse rotation.
template <class T>
Tensor<T> apply_rope_backward(const Tensor<T>& dz, double base, std::size_t first_position = 0) {
  return apply_rope(dz, base, first_position, /*inverse=*/true);
}

}  // namespace hydra
