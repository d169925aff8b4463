#ifndef FHALAB_KERNELS_HPP
#define FHALAB_KERNELS_HPP

#include <optional>

#include "fhalab/tensor.hpp"

namespace fhalab::kernels {

/// Gaussian kernel settings. An empty bandwidth selects the per-batch median
/// heuristic. The jitter goes on the diagonal only, which is what makes the
/// matrix positive definite.
struct KernelConfig {
  std::optional<double> bandwidth;  // explicit sigma; empty = median heuristic
  double jitter = 1e-6;

  void validate() const;
};

/// Median of the N(N-1)/2 pairwise Euclidean distances; 1.0 when that median
/// is zero (a collapsed batch). Requires N >= 2. Rows of X are samples.
double median_bandwidth(const ad::Tensor& x);

/// Sigma actually used for a batch: the explicit value, or the median
/// heuristic with a 1.0 fallback when N < 2 or the batch is collapsed.
double resolve_bandwidth(const ad::Tensor& x, const KernelConfig& cfg);

/// H = I - (1/N) 11^T. Constant (never recorded).
ad::Tensor centering_matrix(std::size_t n);

/// K_ij = exp(-|x_i - x_j|^2 / (2 sigma^2)) + jitter*[i==j]. Differentiable
/// in X when X is recorded; sigma is treated as a constant (no gradient
/// through the median heuristic).
ad::Tensor gram_matrix(const ad::Tensor& x, const KernelConfig& cfg);

/// Same matrix with the bandwidth pinned by the caller.
ad::Tensor gram_matrix_with_bandwidth(const ad::Tensor& x, double sigma, double jitter);

}  // namespace fhalab::kernels

#endif
