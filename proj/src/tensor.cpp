#include "triqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace triqa {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicTensor<T> stack_batch(const std::vector<const BasicTensor<T>*>& items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  const Shape first = items.front()->shape;
  Shape out_shape{0, first.c, first.h, first.w};
  for (const auto* item : items) {
    if (item->shape.c != first.c || item->shape.h != first.h || item->shape.w != first.w) {
      throw ShapeError("stack_batch: shape " + item->shape.str() + " does not match " + first.str());
    }
    out_shape.n += item->shape.n;
  }
  BasicTensor<T> out(out_shape);
  auto dst = out.data.begin();
  for (const auto* item : items) dst = std::copy(item->data.begin(), item->data.end(), dst);
  return out;
}

template <typename T>
BasicTensor<T> batch_item(const BasicTensor<T>& x, std::size_t n) {
  if (n >= x.shape.n) throw ShapeError("batch_item: index out of range for " + x.shape.str());
  const std::size_t stride = x.shape.c * x.shape.h * x.shape.w;
  BasicTensor<T> out({1, x.shape.c, x.shape.h, x.shape.w});
  std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(n * stride), stride, out.data.begin());
  return out;
}

template struct BasicTensor<float>;
template struct BasicTensor<double>;
template BasicTensor<float> stack_batch(const std::vector<const BasicTensor<float>*>&);
template BasicTensor<double> stack_batch(const std::vector<const BasicTensor<double>*>&);
template BasicTensor<float> batch_item(const BasicTensor<float>&, std::size_t);
template BasicTensor<double> batch_item(const BasicTensor<double>&, std::size_t);

}  // namespace triqa
