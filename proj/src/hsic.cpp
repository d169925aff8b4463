#include "fhalab/hsic.hpp"

#include <cmath>

namespace fhalab::hsic {

namespace {

void require_pair(const ad::Tensor& x, const ad::Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2)
    throw std::invalid_argument("hsic: expected NxD batches, got " + ad::shape_str(x.shape) +
                                " and " + ad::shape_str(y.shape));
  if (x.rows() != y.rows())
    throw std::invalid_argument("hsic: batch sizes differ, " + std::to_string(x.rows()) +
                                " vs " + std::to_string(y.rows()));
  if (x.rows() < 2) throw std::invalid_argument("hsic: needs a batch of at least 2");
}

// Tr(K H L H) / (N-1)^2 as a graph; shared by the value and node paths.
ad::Tensor hsic_graph(const ad::Tensor& k, const ad::Tensor& l, std::size_t n) {
  ad::Tensor h = kernels::centering_matrix(n);
  ad::Tensor kh = ad::matmul(k, h);
  ad::Tensor khl = ad::matmul(kh, l);
  ad::Tensor khlh = ad::matmul(khl, h);
  double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return ad::smul(ad::trace(khlh), 1.0 / denom);
}

}  // namespace

HsicValue hsic_biased(const ad::Tensor& x, const ad::Tensor& y,
                      const kernels::KernelConfig& cfg) {
  require_pair(x, y);
  ad::Tensor k = kernels::gram_matrix(x, cfg);
  ad::Tensor l = kernels::gram_matrix(y, cfg);
  double v = hsic_graph(k, l, x.rows()).scalar_value();
  return HsicValue{v > 0.0 ? v : 0.0, x.rows()};
}

double hsic_oracle(const ad::Tensor& x, const ad::Tensor& y,
                   const kernels::KernelConfig& cfg) {
  require_pair(x, y);
  std::size_t n = x.rows(), dx = x.cols(), dy = y.cols();
  double sx = kernels::resolve_bandwidth(x, cfg);
  double sy = kernels::resolve_bandwidth(y, cfg);

  auto kernel = [&](const ad::Tensor& m, std::size_t d, double sigma, std::size_t i,
                    std::size_t j) {
    if (i == j) return 1.0 + cfg.jitter;
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) {
      double diff = m.data[i * d + c] - m.data[j * d + c];
      s += diff * diff;
    }
    return std::exp(-s / (2.0 * sigma * sigma));
  };

  // (H K H)_{ij} written out: K_ij - rowmean_i - colmean_j + grandmean.
  std::vector<double> kc(n * n), lc(n * n);
  for (int which = 0; which < 2; ++which) {
    const ad::Tensor& m = which == 0 ? x : y;
    std::size_t d = which == 0 ? dx : dy;
    double sigma = which == 0 ? sx : sy;
    std::vector<double>& out = which == 0 ? kc : lc;
    std::vector<double> rowmean(n, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double v = kernel(m, d, sigma, i, j);
        out[i * n + j] = v;
        rowmean[i] += v;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      rowmean[i] /= static_cast<double>(n);
      grand += rowmean[i];
    }
    grand /= static_cast<double>(n);
    // symmetric kernel: column means equal row means
    std::vector<double> centered(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        centered[i * n + j] = out[i * n + j] - rowmean[i] - rowmean[j] + grand;
    out = std::move(centered);
  }

  double tr = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) tr += kc[i * n + j] * lc[j * n + i];
  double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return tr / denom;
}

ad::Tensor self_hsic_node(const ad::Tensor& features, const kernels::KernelConfig& cfg) {
  if (features.rank() != 2 || features.rows() < 2)
    throw std::invalid_argument("self_hsic: needs a batch of at least 2, got " +
                                ad::shape_str(features.shape));
  ad::Tensor s = kernels::gram_matrix(features, cfg);
  return hsic_graph(s, s, features.rows());
}

ad::Tensor diversity_loss(std::span<const ad::Tensor> features_by_class,
                          const kernels::KernelConfig& cfg) {
  if (features_by_class.empty())
    throw std::invalid_argument("diversity_loss: no class batches");
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (const ad::Tensor& f : features_by_class) {
    if (f.rank() != 2 || f.rows() < 2)
      throw std::invalid_argument("diversity_loss: every class batch needs at least 2 rows");
    total = ad::add(total, ad::sqrt_clamped(self_hsic_node(f, cfg)));
  }
  return ad::smul(total, 1.0 / static_cast<double>(features_by_class.size()));
}

double diversity_report(const ad::Tensor& features, const kernels::KernelConfig& cfg) {
  HsicValue h = hsic_biased(features, features, cfg);
  return std::sqrt(h.value);
}

}  // namespace fhalab::hsic
