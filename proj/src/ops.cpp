#include "triqa/ops.hpp"

// Small products would otherwise take Eigen's coefficient-wise path, whose
// vectorized dot products peel to the first aligned address. That makes the
// summation order depend on where a buffer happens to live. The packed GEMM
// kernel accumulates in a fixed order.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace triqa {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

struct ConvGeometry {
  std::size_t c_in, h, w, k, out_h, out_w;
  int stride, padding;
  std::size_t patch() const { return c_in * k * k; }
  std::size_t positions() const { return out_h * out_w; }
};

// Unfolds one image (c_in, h, w) into a (c_in*k*k, out_h*out_w) row-major matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.padding + static_cast<std::ptrdiff_t>(ky);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(dst, g.out_w, T{0});
            continue;
          }
          const T* src = image + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.padding + static_cast<std::ptrdiff_t>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.padding + static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const T* src = row + oy * g.out_w;
          T* dst = image + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.padding + static_cast<std::ptrdiff_t>(kx);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  }
  if (ws.h != ws.w || ws.c != xs.c) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " incompatible with weight " + ws.str());
  }
  const auto padded_h = static_cast<std::ptrdiff_t>(xs.h) + 2 * padding - static_cast<std::ptrdiff_t>(ws.h);
  const auto padded_w = static_cast<std::ptrdiff_t>(xs.w) + 2 * padding - static_cast<std::ptrdiff_t>(ws.w);
  if (padded_h < 0 || padded_w < 0) {
    throw ShapeError("conv2d: non-positive output size for input " + xs.str() + " and weight " + ws.str());
  }
  const ConvGeometry g{xs.c, xs.h, xs.w, ws.h,
                       static_cast<std::size_t>(padded_h / stride + 1),
                       static_cast<std::size_t>(padded_w / stride + 1), stride, padding};
  const std::size_t c_out = ws.n;
  const bool direct = g.k == 1 && stride == 1 && padding == 0;

  BasicTensor<T> out({xs.n, c_out, g.out_h, g.out_w});
  std::vector<T> cols(direct ? 0 : g.patch() * g.positions());
  const ConstMatrixMap<T> w_mat(weight.value().data.data(), static_cast<Eigen::Index>(c_out),
                                static_cast<Eigen::Index>(g.patch()));
  const std::size_t in_stride = xs.c * xs.h * xs.w;
  const std::size_t out_stride = c_out * g.positions();
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* image = x.value().data.data() + n * in_stride;
    const T* col_ptr = image;
    if (!direct) {
      im2col(image, g, cols.data());
      col_ptr = cols.data();
    }
    const ConstMatrixMap<T> col_mat(col_ptr, static_cast<Eigen::Index>(g.patch()),
                                    static_cast<Eigen::Index>(g.positions()));
    MatrixMap<T> y(out.data.data() + n * out_stride, static_cast<Eigen::Index>(c_out),
                   static_cast<Eigen::Index>(g.positions()));
    y.noalias() = w_mat * col_mat;
    for (std::size_t o = 0; o < c_out; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias.value().data[o];
  }

  return make_result<T>(std::move(out), {x, weight, bias}, [g, c_out, direct, in_stride, out_stride](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    const std::size_t batch = xn.value.shape.n;
    const auto rows = static_cast<Eigen::Index>(c_out);
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto positions = static_cast<Eigen::Index>(g.positions());
    std::vector<T> cols(direct ? 0 : g.patch() * g.positions());
    std::vector<T> dcols(direct ? 0 : g.patch() * g.positions());
    for (std::size_t n = 0; n < batch; ++n) {
      const ConstMatrixMap<T> dy(self.grad.data() + n * out_stride, rows, positions);
      if (bn.requires_grad) {
        auto& db = bn.grad_buffer();
        const T* row = self.grad.data() + n * out_stride;
        for (std::size_t o = 0; o < c_out; ++o, row += g.positions()) {
          T acc = T{0};
          for (std::size_t i = 0; i < g.positions(); ++i) acc += row[i];
          db[o] += acc;
        }
      }
      if (wn.requires_grad) {
        const T* col_ptr = xn.value.data.data() + n * in_stride;
        if (!direct) {
          im2col(col_ptr, g, cols.data());
          col_ptr = cols.data();
        }
        const ConstMatrixMap<T> col_mat(col_ptr, patch, positions);
        MatrixMap<T> dw(wn.grad_buffer().data(), rows, patch);
        dw.noalias() += dy * col_mat.transpose();
      }
      if (xn.requires_grad) {
        const ConstMatrixMap<T> w_mat(wn.value.data.data(), rows, patch);
        T* dx = xn.grad_buffer().data() + n * in_stride;
        if (direct) {
          MatrixMap<T> dx_mat(dx, patch, positions);
          dx_mat.noalias() += w_mat.transpose() * dy;
        } else {
          MatrixMap<T> dcol_mat(dcols.data(), patch, positions);
          dcol_mat.noalias() = w_mat.transpose() * dy;
          col2im_add(dcols.data(), g, dx);
        }
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  BasicTensor<T> out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in[i] > T{0} ? in[i] : T{0};
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    auto& dx = xn.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xn.value.data[i] > T{0}) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> maxpool2(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + s.str());
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  BasicTensor<T> out(os);
  std::vector<std::uint32_t> argmax(os.numel());
  const auto& in = x.value().data;
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    const std::size_t in_base = plane * s.h * s.w;
    const std::size_t out_base = plane * os.h * os.w;
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        std::size_t best = in_base + (2 * oy) * s.w + 2 * ox;
        const std::size_t window[3] = {best + 1, best + s.w, best + s.w + 1};
        for (std::size_t idx : window) {
          if (in[idx] > in[best]) best = idx;
        }
        out.data[out_base + oy * os.w + ox] = in[best];
        argmax[out_base + oy * os.w + ox] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_avg_pool: empty spatial extent " + s.str());
  BasicTensor<T> out({s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < s.n * s.c; ++i) {
    double acc = 0.0;
    const T* p = x.value().data.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
    out.data[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return make_result<T>(std::move(out), {x}, [plane](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    const T scale = T{1} / static_cast<T>(plane);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T g = self.grad[i] * scale;
      T* d = dx.data() + i * plane;
      for (std::size_t j = 0; j < plane; ++j) d[j] += g;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (!xs.is_vector() || !ws.is_vector() || ws.c != xs.c) {
    throw ShapeError("linear: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("linear: bias " + bias.shape().str() + " incompatible with weight " + ws.str());
  }
  const std::size_t batch = xs.n, d_in = xs.c, d_out = ws.n;
  BasicTensor<T> out({batch, d_out, 1, 1});
  const T* xd = x.value().data.data();
  const T* wd = weight.value().data.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < d_out; ++o) {
      T acc = bias.value().data[o];
      const T* row = wd + o * d_in;
      const T* in = xd + n * d_in;
      for (std::size_t i = 0; i < d_in; ++i) acc += in[i] * row[i];
      out.data[n * d_out + o] = acc;
    }
  }
  return make_result<T>(std::move(out), {x, weight, bias}, [batch, d_in, d_out](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    const T* g = self.grad.data();
    if (xn.requires_grad) {
      auto& dx = xn.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < d_out; ++o) {
          const T go = g[n * d_out + o];
          const T* row = wn.value.data.data() + o * d_in;
          T* d = dx.data() + n * d_in;
          for (std::size_t i = 0; i < d_in; ++i) d[i] += go * row[i];
        }
      }
    }
    if (wn.requires_grad) {
      auto& dw = wn.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* in = xn.value.data.data() + n * d_in;
        for (std::size_t o = 0; o < d_out; ++o) {
          const T go = g[n * d_out + o];
          T* d = dw.data() + o * d_in;
          for (std::size_t i = 0; i < d_in; ++i) d[i] += go * in[i];
        }
      }
    }
    if (bn.requires_grad) {
      auto& db = bn.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < d_out; ++o) db[o] += g[n * d_out + o];
      }
    }
  });
}

template <typename T>
Var<T> abs_diff(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "abs_diff");
  BasicTensor<T> out(a.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = std::abs(av[i] - bv[i]);
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& an = *self.parents[0];
    Node<T>& bn = *self.parents[1];
    const std::size_t count = self.grad.size();
    for (std::size_t i = 0; i < count; ++i) {
      const T d = an.value.data[i] - bn.value.data[i];
      const T sign = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      if (sign == T{0}) continue;
      if (an.requires_grad) an.grad_buffer()[i] += sign * self.grad[i];
      if (bn.requires_grad) bn.grad_buffer()[i] -= sign * self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& an = *self.parents[0];
    Node<T>& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& da = an.grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bn.value.data[i];
    }
    if (bn.requires_grad) {
      auto& db = bn.grad_buffer();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * an.value.data[i];
    }
  });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.value().data[i] * x.value().data[i];
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    auto& dx = xn.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += T{2} * xn.value.data[i] * self.grad[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const Shape first = parts.front().shape();
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat: batch/spatial mismatch " + s.str() + " vs " + first.str());
    }
    channels.push_back(s.c);
    total += s.c;
  }
  const std::size_t plane = first.plane();
  BasicTensor<T> out({first.n, total, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    T* dst = out.data.data() + n * total * plane;
    for (const auto& p : parts) {
      const std::size_t span = p.shape().c * plane;
      const T* src = p.value().data.data() + n * span;
      dst = std::copy_n(src, span, dst);
    }
  }
  return make_result<T>(std::move(out), parts, [channels, total, plane](Node<T>& self) {
    const std::size_t batch = self.value.shape.n;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < channels.size(); ++k) {
      Node<T>& pn = *self.parents[k];
      const std::size_t span = channels[k] * plane;
      if (pn.requires_grad) {
        auto& dp = pn.grad_buffer();
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = self.grad.data() + n * total * plane + offset;
          T* dst = dp.data() + n * span;
          for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
        }
      }
      offset += span;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t offset, std::size_t count) {
  const Shape s = x.shape();
  if (offset + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                     ") outside " + s.str());
  }
  const std::size_t plane = s.plane();
  BasicTensor<T> out({s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = x.value().data.data() + (n * s.c + offset) * plane;
    std::copy_n(src, count * plane, out.data.data() + n * count * plane);
  }
  return make_result<T>(std::move(out), {x}, [offset, count, plane](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    auto& dx = xn.grad_buffer();
    const std::size_t c = xn.value.shape.c;
    for (std::size_t n = 0; n < xn.value.shape.n; ++n) {
      T* dst = dx.data() + (n * c + offset) * plane;
      const T* src = self.grad.data() + n * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.value().data) acc += static_cast<double>(v);
  BasicTensor<T> out({1, 1, 1, 1}, static_cast<T>(acc));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (auto& d : dx) d += self.grad[0];
  });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const BasicTensor<T>& target) {
  const std::size_t count = pred.value().numel();
  if (count == 0 || target.numel() != count) {
    throw ShapeError("mse_loss: prediction " + pred.shape().str() + " vs target " + target.shape.str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(pred.value().data[i]) - static_cast<double>(target.data[i]);
    acc += d * d;
  }
  BasicTensor<T> out({1, 1, 1, 1}, static_cast<T>(acc / static_cast<double>(count)));
  return make_result<T>(std::move(out), {pred}, [target_data = target.data](Node<T>& self) {
    Node<T>& pn = *self.parents[0];
    auto& dp = pn.grad_buffer();
    const T scale = T{2} / static_cast<T>(dp.size()) * self.grad[0];
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += scale * (pn.value.data[i] - target_data[i]);
  });
}

#define TRIQA_INSTANTIATE_OPS(T)                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);   \
  template Var<T> relu(const Var<T>&);                                             \
  template Var<T> maxpool2(const Var<T>&);                                         \
  template Var<T> global_avg_pool(const Var<T>&);                                  \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);             \
  template Var<T> abs_diff(const Var<T>&, const Var<T>&);                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                               \
  template Var<T> square(const Var<T>&);                                           \
  template Var<T> concat(const std::vector<Var<T>>&);                              \
  template Var<T> slice_channels(const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> sum(const Var<T>&);                                              \
  template Var<T> mse_loss(const Var<T>&, const BasicTensor<T>&);

TRIQA_INSTANTIATE_OPS(float)
TRIQA_INSTANTIATE_OPS(double)

#undef TRIQA_INSTANTIATE_OPS

}  // namespace triqa
