#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace triqa {

/// Raised when a rank correlation is undefined (constant input, too few items).
class UndefinedCorrelationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> fractional_ranks(std::span<const double> values);

/// Spearman's rho as the Pearson correlation of fractional ranks.
double srcc(std::span<const double> x, std::span<const double> y);

/// Kendall's tau-b, counted over all pairs.
double krcc(std::span<const double> x, std::span<const double> y);

}  // namespace triqa
