#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace triqa {

/// Raised when tensor shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 4-D extent in (batch, channel, height, width) order.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  /// True for (n, d, 1, 1) shapes, the layout used for feature vectors.
  constexpr bool is_vector() const { return h == 1 && w == 1; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

/// Dense row-major (n, c, h, w) array. Gradients live on the autograd node
/// that owns a tensor, not on the tensor itself.
template <typename T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(Shape s, T fill = T{0}) : shape(s), data(s.numel(), fill) {}
  BasicTensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
    }
  }

  std::size_t numel() const { return data.size(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape.c + c) * shape.h + h) * shape.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data[index(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[index(n, c, h, w)];
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool all_finite() const;
};

using Tensor = BasicTensor<float>;

/// Stacks (1, c, h, w) tensors along the batch axis.
template <typename T>
BasicTensor<T> stack_batch(const std::vector<const BasicTensor<T>*>& items);

/// Copies batch row `n` out as a (1, c, h, w) tensor.
template <typename T>
BasicTensor<T> batch_item(const BasicTensor<T>& x, std::size_t n);

}  // namespace triqa
