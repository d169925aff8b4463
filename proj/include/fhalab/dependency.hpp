#ifndef FHALAB_DEPENDENCY_HPP
#define FHALAB_DEPENDENCY_HPP

#include <cstdint>
#include <vector>

#include "fhalab/tensor.hpp"

namespace fhalab::dependency {

/// Explicit joint probability table over a small product space. Probabilities
/// are indexed row-major by coordinate tuple (last coordinate fastest).
struct DiscreteJoint {
  std::vector<std::size_t> support_sizes;
  std::vector<double> prob;

  std::size_t coords() const { return support_sizes.size(); }
  std::size_t table_size() const;
  /// All probabilities strictly positive, summing to 1 within 1e-12.
  void validate() const;
  /// Flat index of a full coordinate assignment.
  std::size_t flat_index(const std::vector<std::size_t>& z) const;
};

inline constexpr std::size_t kDefaultEvalCap = 1'000'000;

/// Worst-case pairwise interaction between coordinates j and i:
/// (1/4) max over assignments of the rest and value pairs (z_i,z_i'),(z_j,z_j')
/// of log [ p(z_i z_j r) p(z_i' z_j' r) / ( p(z_i' z_j r) p(z_i z_j' r) ) ].
/// Exhaustive enumeration; rejects above the evaluation cap.
double log_influence(const DiscreteJoint& joint, std::size_t j, std::size_t i,
                     std::size_t eval_cap = kDefaultEvalCap);

/// max_i sum_{j != i} log_influence(j, i). Zero iff the coordinates behave
/// independently in the worst-case-ratio sense.
double log_coefficient(const DiscreteJoint& joint, std::size_t eval_cap = kDefaultEvalCap);

/// Inputs for the unlabeled/labeled sample-size bounds. The split_count stands
/// for the expected number of splits achievable by near-compatible hypotheses,
/// supplied by the caller (it depends on a hypothesis class this library does
/// not enumerate). c1/c2 stand in for the hidden constants, default 1, so the
/// outputs are shape-exact, not numerically exact.
struct ComplexityInputs {
  double epsilon = 0.1;     // target error, in (0,1)
  double delta = 0.05;      // failure probability, in (0,1)
  double alpha = 0.0;       // log-coefficient, must be < 0.5
  std::size_t vc_dim = 1;   // VC dimension of the compatibility class
  double t = 0.0;           // compatibility defect, in [0,1]
  double split_count = 1.0; // >= 1
  double c1 = 1.0;
  double c2 = 1.0;

  void validate() const;
};

struct SampleComplexity {
  std::uint64_t m_unlabeled = 0;
  std::uint64_t m_labeled = 0;
};

/// m_u = ceil(max(c1 log(2/delta) / ((1-alpha) eps^2),
///               c2 vc / ((1-2 alpha) eps^2)))
/// m_l = ceil((2/eps) (ln(2 split_count) + ln(4/delta)))
/// Rejects alpha >= 0.5 (the weak-dependency hypothesis).
SampleComplexity sample_complexity(const ComplexityInputs& in);

}  // namespace fhalab::dependency

#endif
