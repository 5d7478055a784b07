#pragma once

#include <cstddef>
#include <vector>

#include "triqa/autograd.hpp"

namespace triqa {

/// 2-D convolution. `weight` is (c_out, c_in, k, k), `bias` is (1, c_out, 1, 1).
/// Output is (n, c_out, (h + 2p - k) / stride + 1, (w + 2p - k) / stride + 1).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding);

template <typename T>
Var<T> relu(const Var<T>& x);

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// element in row-major window order.
template <typename T>
Var<T> maxpool2(const Var<T>& x);

/// Spatial mean per channel: (n, c, h, w) -> (n, c, 1, 1).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// y = x W^T + b for x of shape (n, d_in, 1, 1), W (d_out, d_in, 1, 1),
/// b (1, d_out, 1, 1).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Elementwise |a - b|. The subgradient at a == b is zero.
template <typename T>
Var<T> abs_diff(const Var<T>& a, const Var<T>& b);

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> square(const Var<T>& x);

/// Concatenation along the channel axis; batch and spatial extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts);

/// Channels [offset, offset + count) of x.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t offset, std::size_t count);

/// Sum of all elements as a (1, 1, 1, 1) scalar.
template <typename T>
Var<T> sum(const Var<T>& x);

/// Mean squared error between pred and a constant target of equal length.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const BasicTensor<T>& target);

}  // namespace triqa
