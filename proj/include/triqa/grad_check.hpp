#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "triqa/autograd.hpp"

namespace triqa {

struct GradCheckOptions {
  double epsilon = 1e-3;
  /// Denominator floor in the relative error.
  double floor = 1e-8;
  /// When non-zero, only this many elements per leaf are probed (chosen with `seed`).
  std::size_t max_elements_per_leaf = 0;
  std::uint64_t seed = 0;
};

/// A scalar-valued closure over a fixed set of leaves. The closure must rebuild
/// its graph from the leaves' current values on every call.
template <typename T>
struct CheckTarget {
  std::function<Var<T>()> loss;
  std::vector<Var<T>> leaves;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probed = 0;
};

namespace detail {

template <typename T>
double scalar_of(const Var<T>& v) {
  if (v.value().numel() != 1) {
    throw ShapeError("grad_check: function output must be a scalar, got " + v.shape().str());
  }
  return static_cast<double>(v.value().data[0]);
}

inline std::vector<std::size_t> probe_indices(std::size_t count, const GradCheckOptions& opts, std::size_t leaf) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opts.max_elements_per_leaf == 0 || opts.max_elements_per_leaf >= count) return idx;
  std::mt19937_64 rng(opts.seed * 1000003ULL + leaf);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(opts.max_elements_per_leaf);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Compares reverse-mode gradients of `analytic` against central differences
/// (f(x+e) - f(x-e)) / 2e evaluated on `numeric`. The two targets must expose
/// leaves of identical shapes holding the same values; they may differ in
/// precision so 32-bit gradients can be checked against 64-bit differences.
template <typename A, typename N>
GradCheckResult grad_check(CheckTarget<A>& analytic, CheckTarget<N>& numeric, const GradCheckOptions& opts = {}) {
  if (analytic.leaves.size() != numeric.leaves.size()) {
    throw std::invalid_argument("grad_check: analytic and numeric leaf counts differ");
  }
  for (auto& leaf : analytic.leaves) leaf.zero_grad();
  const Var<A> out = analytic.loss();
  detail::scalar_of(out);
  backward(out);

  GradCheckResult result;
  for (std::size_t l = 0; l < analytic.leaves.size(); ++l) {
    const auto& a_leaf = analytic.leaves[l];
    auto& n_leaf = numeric.leaves[l];
    if (a_leaf.shape() != n_leaf.shape()) throw ShapeError("grad_check: leaf shape mismatch");
    const auto grad = a_leaf.grad();
    for (std::size_t i : detail::probe_indices(n_leaf.value().numel(), opts, l)) {
      auto& slot = n_leaf.mutable_value().data[i];
      const N saved = slot;
      double plus = 0.0, minus = 0.0, step = 0.0;
      {
        NoGradGuard no_grad;
        slot = static_cast<N>(static_cast<double>(saved) + opts.epsilon);
        step = static_cast<double>(slot);
        plus = detail::scalar_of(numeric.loss());
        slot = static_cast<N>(static_cast<double>(saved) - opts.epsilon);
        step -= static_cast<double>(slot);
        minus = detail::scalar_of(numeric.loss());
      }
      slot = saved;
      // Divide by the representable step so low-precision leaves stay consistent.
      const double g_num = (plus - minus) / step;
      const double g_ana = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double denom = std::max({std::abs(g_ana), std::abs(g_num), opts.floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(g_ana - g_num) / denom);
      ++result.probed;
    }
  }
  return result;
}

template <typename T>
GradCheckResult grad_check(CheckTarget<T>& target, const GradCheckOptions& opts = {}) {
  return grad_check(target, target, opts);
}

/// Convenience form: `fn` is a generic callable taking `std::span<const Var<T>>`
/// and returning a scalar Var<T>. Gradients come from the float instantiation,
/// differences from the double one.
template <typename Fn>
GradCheckResult grad_check_fn(Fn&& fn, const std::vector<BasicTensor<float>>& inputs,
                              const GradCheckOptions& opts = {}) {
  CheckTarget<float> a;
  CheckTarget<double> n;
  for (const auto& x : inputs) {
    a.leaves.push_back(Var<float>::leaf(x, true));
    n.leaves.push_back(Var<double>::leaf(x.template cast<double>(), true));
  }
  a.loss = [&fn, &a] { return fn(std::span<const Var<float>>(a.leaves)); };
  n.loss = [&fn, &n] { return fn(std::span<const Var<double>>(n.leaves)); };
  return grad_check(a, n, opts);
}

}  // namespace triqa
