#include "fhalab/dependency.hpp"

#include <cmath>

namespace fhalab::dependency {

std::size_t DiscreteJoint::table_size() const {
  std::size_t n = 1;
  for (std::size_t s : support_sizes) n *= s;
  return n;
}

void DiscreteJoint::validate() const {
  if (support_sizes.empty())
    throw std::invalid_argument("DiscreteJoint: no coordinates");
  for (std::size_t s : support_sizes)
    if (s == 0) throw std::invalid_argument("DiscreteJoint: empty support");
  if (prob.size() != table_size())
    throw std::invalid_argument("DiscreteJoint: table has " + std::to_string(prob.size()) +
                                " entries, product space needs " +
                                std::to_string(table_size()));
  double total = 0.0;
  for (double p : prob) {
    if (!(p > 0.0))
      throw std::invalid_argument("DiscreteJoint: probabilities must be strictly positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("DiscreteJoint: probabilities sum to " + std::to_string(total));
}

std::size_t DiscreteJoint::flat_index(const std::vector<std::size_t>& z) const {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < support_sizes.size(); ++k) idx = idx * support_sizes[k] + z[k];
  return idx;
}

namespace {

struct PairEnumeration {
  std::size_t rest_count = 1;   // configurations of the other m-2 coordinates
  std::size_t evals = 0;        // total ratio evaluations
};

PairEnumeration plan(const DiscreteJoint& joint, std::size_t j, std::size_t i,
                     std::size_t eval_cap) {
  joint.validate();
  std::size_t m = joint.coords();
  if (i >= m || j >= m) throw std::invalid_argument("log_influence: coordinate out of range");
  if (i == j) throw std::invalid_argument("log_influence: i and j must differ");
  PairEnumeration e;
  for (std::size_t k = 0; k < m; ++k)
    if (k != i && k != j) e.rest_count *= joint.support_sizes[k];
  std::size_t si = joint.support_sizes[i], sj = joint.support_sizes[j];
  e.evals = e.rest_count * si * si * sj * sj;
  if (e.evals > eval_cap)
    throw std::invalid_argument("log_influence: enumeration needs " + std::to_string(e.evals) +
                                " ratio evaluations, above the cap of " +
                                std::to_string(eval_cap));
  return e;
}

}  // namespace

double log_influence(const DiscreteJoint& joint, std::size_t j, std::size_t i,
                     std::size_t eval_cap) {
  PairEnumeration e = plan(joint, j, i, eval_cap);
  std::size_t m = joint.coords();
  std::size_t si = joint.support_sizes[i], sj = joint.support_sizes[j];

  std::vector<std::size_t> z(m, 0);
  std::vector<std::size_t> rest_coords;
  for (std::size_t k = 0; k < m; ++k)
    if (k != i && k != j) rest_coords.push_back(k);

  double best = 0.0;  // ratio 1 (independence) is always attainable
  for (std::size_t rest = 0; rest < e.rest_count; ++rest) {
    std::size_t r = rest;
    for (std::size_t k = rest_coords.size(); k-- > 0;) {
      z[rest_coords[k]] = r % joint.support_sizes[rest_coords[k]];
      r /= joint.support_sizes[rest_coords[k]];
    }
    for (std::size_t zi = 0; zi < si; ++zi)
      for (std::size_t zip = 0; zip < si; ++zip)
        for (std::size_t zj = 0; zj < sj; ++zj)
          for (std::size_t zjp = 0; zjp < sj; ++zjp) {
            z[i] = zi;  z[j] = zj;
            double p11 = joint.prob[joint.flat_index(z)];
            z[i] = zip; z[j] = zjp;
            double p22 = joint.prob[joint.flat_index(z)];
            z[i] = zip; z[j] = zj;
            double p21 = joint.prob[joint.flat_index(z)];
            z[i] = zi;  z[j] = zjp;
            double p12 = joint.prob[joint.flat_index(z)];
            double ratio = (p11 * p22) / (p21 * p12);
            if (ratio > best) best = ratio;
          }
  }
  return 0.25 * std::log(best);
}

double log_coefficient(const DiscreteJoint& joint, std::size_t eval_cap) {
  joint.validate();
  std::size_t m = joint.coords();
  if (m < 2) return 0.0;
  double best = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) s += log_influence(joint, j, i, eval_cap);
    best = std::max(best, s);
  }
  return best;
}

void ComplexityInputs::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("sample_complexity: epsilon must be in (0,1)");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("sample_complexity: delta must be in (0,1)");
  if (alpha < 0.0) throw std::invalid_argument("sample_complexity: alpha must be non-negative");
  if (alpha >= 0.5)
    throw std::invalid_argument(
        "sample_complexity: alpha must be below 1/2 (the bound requires weakly dependent "
        "unlabeled data; at 1/2 or above no sample size is sufficient)");
  if (vc_dim == 0) throw std::invalid_argument("sample_complexity: vc_dim must be positive");
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("sample_complexity: t must be in [0,1]");
  if (split_count < 1.0)
    throw std::invalid_argument("sample_complexity: split_count must be at least 1");
  if (c1 <= 0.0 || c2 <= 0.0)
    throw std::invalid_argument("sample_complexity: c1 and c2 must be positive");
}

SampleComplexity sample_complexity(const ComplexityInputs& in) {
  in.validate();
  double eps2 = in.epsilon * in.epsilon;
  double first = in.c1 * std::log(2.0 / in.delta) / ((1.0 - in.alpha) * eps2);
  double second = in.c2 * static_cast<double>(in.vc_dim) / ((1.0 - 2.0 * in.alpha) * eps2);
  double labeled =
      (2.0 / in.epsilon) * (std::log(2.0 * in.split_count) + std::log(4.0 / in.delta));
  SampleComplexity out;
  out.m_unlabeled = static_cast<std::uint64_t>(std::ceil(std::max(first, second)));
  out.m_labeled = static_cast<std::uint64_t>(std::ceil(labeled));
  return out;
}

}  // namespace fhalab::dependency
