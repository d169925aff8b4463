#include "fhalab/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace fhalab::kernels {

namespace {

void require_batch(const ad::Tensor& x) {
  if (x.rank() != 2 || x.rows() == 0 || x.cols() == 0)
    throw std::invalid_argument("kernels: expected a non-empty NxD batch, got " +
                                ad::shape_str(x.shape));
}

}  // namespace

void KernelConfig::validate() const {
  if (bandwidth && *bandwidth <= 0.0)
    throw std::invalid_argument("KernelConfig: bandwidth must be positive");
  if (jitter < 0.0) throw std::invalid_argument("KernelConfig: jitter must be non-negative");
}

double median_bandwidth(const ad::Tensor& x) {
  require_batch(x);
  std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw std::invalid_argument("median_bandwidth: needs at least 2 rows");
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = x.data[i * d + k] - x.data[j * d + k];
        s += diff * diff;
      }
      dist.push_back(std::sqrt(s));
    }
  std::sort(dist.begin(), dist.end());
  std::size_t m = dist.size();
  double med = (m % 2 == 1) ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
  return med > 0.0 ? med : 1.0;
}

double resolve_bandwidth(const ad::Tensor& x, const KernelConfig& cfg) {
  cfg.validate();
  if (cfg.bandwidth) return *cfg.bandwidth;
  if (x.rank() == 2 && x.rows() < 2) return 1.0;
  return median_bandwidth(x);
}

ad::Tensor centering_matrix(std::size_t n) {
  if (n == 0) throw std::invalid_argument("centering_matrix: N must be at least 1");
  ad::Tensor h = ad::Tensor::zeros({n, n});
  double off = -1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h.data[i * n + j] = (i == j ? 1.0 : 0.0) + off;
  return h;
}

ad::Tensor gram_matrix_with_bandwidth(const ad::Tensor& x, double sigma, double jitter) {
  require_batch(x);
  if (sigma <= 0.0) throw std::invalid_argument("gram_matrix: sigma must be positive");
  if (jitter < 0.0) throw std::invalid_argument("gram_matrix: jitter must be non-negative");
  std::size_t n = x.rows(), d = x.cols();

  // Squared distances as r 1^T + 1 r^T - 2 X X^T so the whole matrix stays on
  // the tape when X is recorded.
  ad::Tensor ones_d = ad::Tensor::ones({d, 1});
  ad::Tensor ones_row = ad::Tensor::ones({1, n});
  ad::Tensor sq = ad::mul(x, x);
  ad::Tensor row_norms = ad::matmul(sq, ones_d);                  // N x 1
  ad::Tensor rn = ad::matmul(row_norms, ones_row);                // N x N
  ad::Tensor gram_inner = ad::matmul(x, ad::transpose(x));        // N x N
  ad::Tensor d2 = ad::sub(ad::add(rn, ad::transpose(rn)), ad::smul(gram_inner, 2.0));
  // Rounding can leave d2 at -1e-16 for near-duplicate rows; the true
  // distance gradient is zero there, so the clamp is exact.
  d2 = ad::clamp_min(d2, 0.0);
  ad::Tensor k = ad::exp(ad::smul(d2, -1.0 / (2.0 * sigma * sigma)));
  if (jitter > 0.0) {
    ad::Tensor eye = ad::smul(ad::Tensor::identity(n), jitter);
    k = ad::add(k, eye);
  }
  return k;
}

ad::Tensor gram_matrix(const ad::Tensor& x, const KernelConfig& cfg) {
  return gram_matrix_with_bandwidth(x, resolve_bandwidth(x, cfg), cfg.jitter);
}

}  // namespace fhalab::kernels
