#ifndef FHALAB_LOSSES_HPP
#define FHALAB_LOSSES_HPP

#include <span>

#include "fhalab/hsic.hpp"
#include "fhalab/tensor.hpp"

namespace fhalab::losses {

struct LossWeights {
  double lambda = 0.9;  // similarity tradeoff
  double beta = 0.1;    // diversity tradeoff

  void validate() const;
};

/// Adversarial weight ramp: 2 / (1 + exp(-10 q)) - 1 for progress q in [0,1].
double gamma_at(double q_dot);

/// Sign convention for the mixed different-class term of the classifier loss.
/// `paper` subtracts that term; `symmetric` adds it.
enum class G4Sign { paper, symmetric };

enum class GroupId : int { g1 = 0, g2 = 1, g3 = 2, g4 = 3 };
enum class Provenance { generated, target };

struct PairSide {
  Provenance provenance;
  std::size_t index;  // into the owning sample set
  std::size_t label;
};

/// Pair of samples with its group assignment:
///   g1 generated/generated same class, g2 generated/target same class,
///   g3 generated/generated different class, g4 generated/target different class.
struct PairGroup {
  GroupId group;
  PairSide left;
  PairSide right;

  bool satisfies_group_rule() const;
};

/// Mean squared shortfall of the own-class probability from 1, averaged per
/// class then over classes. probs_by_class[n] holds the generated batch
/// conditioned on class n.
ad::Tensor classification_loss(std::span<const ad::Tensor> probs_by_class);

/// Residual-weighted l1: sum_i |d_i|^3 / |d|_2 with d = x - y; 0 when x == y.
double weighted_l1(std::span<const double> x, std::span<const double> y);

struct SimilarityOptions {
  bool class_restricted = false;  // restrict target features to the same class
  /// Normalizer override; <= 0 selects the batch max (floored at 1e-8).
  double normalizer = 0.0;
};

/// Average residual-weighted l1 between every generated semantic feature and
/// the target semantic features, normalized by the batch max so each summand
/// sits in [0, 1]. Differentiable in the generated features; the normalizer
/// and target features are constants.
ad::Tensor similarity_loss(std::span<const ad::Tensor> semantic_gen_by_class,
                           const ad::Tensor& semantic_target,
                           std::span<const std::size_t> target_labels,
                           const SimilarityOptions& opt = {});

/// L_c + lambda L_s + beta L_d. Pass diversity = nullptr for the
/// similarity-only generator objective.
ad::Tensor generator_loss(const ad::Tensor& classification, const ad::Tensor& similarity,
                          const ad::Tensor* diversity, const LossWeights& weights);

/// Per-class objective for independently trained generators:
/// (1/B) |p_n - 1|^2 + lambda/(N_y M B) sum_ij wl1(s_i, s_j).
ad::Tensor separate_generator_loss(const ad::Tensor& probs_n, std::size_t class_index,
                                   const ad::Tensor& semantic_gen_n,
                                   const ad::Tensor& semantic_target,
                                   std::span<const std::size_t> target_labels, double lambda,
                                   const SimilarityOptions& opt = {});

/// Exactly per_group pairs per group, uniform with replacement over the valid
/// (left, right) combinations. Rejects any group with no valid combination.
std::vector<PairGroup> build_pair_groups(std::span<const std::size_t> generated_labels,
                                         std::span<const std::size_t> target_labels,
                                         std::size_t per_group, std::mt19937_64& rng);

/// Mean cross-entropy of row-stochastic probs against integer labels;
/// probabilities are floored at 1e-12 inside the log.
ad::Tensor cross_entropy(const ad::Tensor& probs, std::span<const std::size_t> labels);

ad::Tensor discriminator_loss(const ad::Tensor& pair_probs, std::span<const GroupId> labels);

/// Classifier objective: -gamma * (E[log D(phi(G2))_g1] -/+ E[log D(phi(G4))_g3])
/// plus supervised cross-entropy on the labeled target batch only.
ad::Tensor adaptation_loss(const ad::Tensor& d_probs_on_g2, const ad::Tensor& d_probs_on_g4,
                           const ad::Tensor& target_probs,
                           std::span<const std::size_t> target_labels, double gamma,
                           G4Sign g4_sign = G4Sign::paper);

/// adaptation_loss plus supervised cross-entropy over generated data labeled
/// by their conditioning class. Empty generated batch gives adaptation_loss
/// exactly (same graph).
ad::Tensor adaptation_loss_with_generated(const ad::Tensor& d_probs_on_g2,
                                          const ad::Tensor& d_probs_on_g4,
                                          const ad::Tensor& target_probs,
                                          std::span<const std::size_t> target_labels,
                                          const ad::Tensor* generated_probs,
                                          std::span<const std::size_t> generated_class_codes,
                                          double gamma, G4Sign g4_sign = G4Sign::paper);

}  // namespace fhalab::losses

#endif
