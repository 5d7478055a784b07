#include "triqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

namespace triqa {

namespace {

void require_pair(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                                std::to_string(y.size()));
  }
  if (x.size() < 2) throw UndefinedCorrelationError(std::string(what) + ": need at least two items");
}

// Sum over tie groups of t(t-1)/2, i.e. pairs tied in `values`.
std::int64_t tied_pairs(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::int64_t total = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

}  // namespace

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j; their mean is (i + 1 + j) / 2
    const double shared = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
    i = j;
  }
  return ranks;
}

double srcc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, "srcc");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double n = static_cast<double>(rx.size());
  const double mean = (n + 1.0) / 2.0;  // fractional ranks always average to (n+1)/2
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("srcc: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double krcc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y, "krcc");
  const auto n = static_cast<std::int64_t>(x.size());
  std::int64_t concordant = 0, discordant = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = i + 1; j < n; ++j) {
      const double dx = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)];
      const double dy = y[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(j)];
      if (dx == 0.0 || dy == 0.0) continue;
      if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const std::int64_t pairs = n * (n - 1) / 2;
  const std::int64_t untied_x = pairs - tied_pairs(x);
  const std::int64_t untied_y = pairs - tied_pairs(y);
  if (untied_x == 0 || untied_y == 0) throw UndefinedCorrelationError("krcc: all values tied");
  const double tau = static_cast<double>(concordant - discordant) /
                     std::sqrt(static_cast<double>(untied_x) * static_cast<double>(untied_y));
  return std::clamp(tau, -1.0, 1.0);
}

}  // namespace triqa
