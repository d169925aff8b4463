#ifndef FHALAB_HSIC_HPP
#define FHALAB_HSIC_HPP

#include <span>

#include "fhalab/kernels.hpp"
#include "fhalab/tensor.hpp"

namespace fhalab::hsic {

struct HsicValue {
  double value = 0.0;  // clamped at zero
  std::size_t n = 0;   // batch size used
};

/// Biased empirical HSIC: Tr(K H L H) / (N-1)^2 with Gaussian kernels.
/// Bandwidths resolve per batch (X and Y separately under the median
/// heuristic). Plain value, no recording.
HsicValue hsic_biased(const ad::Tensor& x, const ad::Tensor& y,
                      const kernels::KernelConfig& cfg);

/// Reference implementation for tests: the same quantity via explicit element
/// loops (kernel entries, centering, trace) with no shared matrix code.
double hsic_oracle(const ad::Tensor& x, const ad::Tensor& y,
                   const kernels::KernelConfig& cfg);

/// Differentiable self-HSIC of one feature batch, built from a single shared
/// gram matrix node: Tr(S H S H) / (B-1)^2.
ad::Tensor self_hsic_node(const ad::Tensor& features, const kernels::KernelConfig& cfg);

/// Mean over classes of sqrt(self-HSIC) of that class's semantic features.
/// Rounding below zero is clamped before the square root. Differentiable.
ad::Tensor diversity_loss(std::span<const ad::Tensor> features_by_class,
                          const kernels::KernelConfig& cfg);

/// sqrt(HSIC(features, features)); the measurement convention for reporting
/// how dependent a sample batch is (lower reads as more diverse).
double diversity_report(const ad::Tensor& features, const kernels::KernelConfig& cfg);

}  // namespace fhalab::hsic

#endif
