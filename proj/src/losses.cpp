#include "fhalab/losses.hpp"

#include <algorithm>
#include <cmath>

namespace fhalab::losses {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNormalizerFloor = 1e-8;

void require_prob_rows(const char* who, const ad::Tensor& probs) {
  if (probs.rank() != 2 || probs.rows() == 0)
    throw std::invalid_argument(std::string(who) + ": expected a non-empty NxK probability "
                                "batch, got " + ad::shape_str(probs.shape));
  std::size_t k = probs.cols();
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += probs.at(i, c);
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(who) + ": row " + std::to_string(i) +
                                  " sums to " + std::to_string(s));
  }
}

// B x 1 column of probs[:, index] picked through a constant one-hot matmul so
// gradients stay on the tape.
ad::Tensor pick_column(const ad::Tensor& probs, std::size_t index) {
  std::size_t k = probs.cols();
  ad::Tensor e = ad::Tensor::zeros({k, 1});
  e.data[index] = 1.0;
  return ad::matmul(probs, e);
}

// B x 1 of the probability each row assigns to its own label.
ad::Tensor pick_own(const ad::Tensor& probs, std::span<const std::size_t> labels) {
  std::size_t b = probs.rows(), k = probs.cols();
  if (labels.size() != b)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(b) + " rows");
  ad::Tensor mask = ad::Tensor::zeros({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                  " out of range for K=" + std::to_string(k));
    mask.at(i, labels[i]) = 1.0;
  }
  return ad::matmul(ad::mul(probs, mask), ad::Tensor::ones({k, 1}));
}

ad::Tensor mean_log(const ad::Tensor& column) {
  return ad::mean(ad::log(ad::clamp_min(column, kProbFloor)));
}

// Residual-weighted l1 of every row of gen against one constant target row,
// as a B x 1 column: sum_k |d|^3 row-summed, times the safe inverse norm.
ad::Tensor weighted_l1_rows(const ad::Tensor& gen, const std::vector<double>& target_row) {
  std::size_t d = gen.cols();
  ad::Tensor neg_t = ad::Tensor::zeros({1, d});
  for (std::size_t k = 0; k < d; ++k) neg_t.data[k] = -target_row[k];
  ad::Tensor diff = ad::row_broadcast(gen, neg_t);
  ad::Tensor a = ad::abs(diff);
  ad::Tensor cubes = ad::mul(ad::mul(a, a), a);
  ad::Tensor ones = ad::Tensor::ones({d, 1});
  ad::Tensor num = ad::matmul(cubes, ones);
  ad::Tensor ss = ad::matmul(ad::mul(diff, diff), ones);
  return ad::mul(num, ad::rsqrt_safe(ss));
}

std::vector<double> row_of(const ad::Tensor& m, std::size_t i) {
  std::size_t d = m.cols();
  return std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                             m.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
}

}  // namespace

void LossWeights::validate() const {
  if (lambda < 0.0 || beta < 0.0)
    throw std::invalid_argument("LossWeights: lambda and beta must be non-negative");
}

double gamma_at(double q_dot) {
  if (q_dot < 0.0) throw std::invalid_argument("gamma_at: progress must be non-negative");
  return 2.0 / (1.0 + std::exp(-10.0 * q_dot)) - 1.0;
}

bool PairGroup::satisfies_group_rule() const {
  bool same_class = left.label == right.label;
  switch (group) {
    case GroupId::g1:
      return left.provenance == Provenance::generated &&
             right.provenance == Provenance::generated && same_class;
    case GroupId::g2:
      return left.provenance == Provenance::generated &&
             right.provenance == Provenance::target && same_class;
    case GroupId::g3:
      return left.provenance == Provenance::generated &&
             right.provenance == Provenance::generated && !same_class;
    case GroupId::g4:
      return left.provenance == Provenance::generated &&
             right.provenance == Provenance::target && !same_class;
  }
  return false;
}

ad::Tensor classification_loss(std::span<const ad::Tensor> probs_by_class) {
  if (probs_by_class.empty())
    throw std::invalid_argument("classification_loss: no class batches");
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (std::size_t n = 0; n < probs_by_class.size(); ++n) {
    const ad::Tensor& probs = probs_by_class[n];
    require_prob_rows("classification_loss", probs);
    if (n >= probs.cols())
      throw std::invalid_argument("classification_loss: class index beyond K");
    std::size_t b = probs.rows();
    ad::Tensor own = pick_column(probs, n);
    ad::Tensor shortfall = ad::sub(own, ad::Tensor::ones({b, 1}));
    ad::Tensor sq = ad::mul(shortfall, shortfall);
    total = ad::add(total, ad::smul(ad::sum(sq), 1.0 / static_cast<double>(b)));
  }
  return ad::smul(total, 1.0 / static_cast<double>(probs_by_class.size()));
}

double weighted_l1(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw std::invalid_argument("weighted_l1: dimension mismatch, " +
                                std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  double cubes = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = std::abs(x[i] - y[i]);
    cubes += d * d * d;
    ss += d * d;
  }
  if (ss == 0.0) return 0.0;
  return cubes / std::sqrt(ss);
}

namespace {

struct SimilarityPlan {
  // per class: target rows an element of that class pairs with
  std::vector<std::vector<std::size_t>> targets_for_class;
  double normalizer = kNormalizerFloor;
};

SimilarityPlan plan_similarity(std::span<const ad::Tensor> semantic_gen_by_class,
                               const ad::Tensor& semantic_target,
                               std::span<const std::size_t> target_labels,
                               const SimilarityOptions& opt) {
  if (semantic_gen_by_class.empty())
    throw std::invalid_argument("similarity_loss: no generated class batches");
  if (semantic_target.rank() != 2 || semantic_target.rows() == 0)
    throw std::invalid_argument("similarity_loss: need at least one target feature");
  if (target_labels.size() != semantic_target.rows())
    throw std::invalid_argument("similarity_loss: target labels do not match the batch");
  std::size_t d = semantic_target.cols();
  std::size_t m = semantic_target.rows();

  SimilarityPlan plan;
  plan.targets_for_class.resize(semantic_gen_by_class.size());
  for (std::size_t n = 0; n < semantic_gen_by_class.size(); ++n) {
    const ad::Tensor& gen = semantic_gen_by_class[n];
    if (gen.rank() != 2 || gen.rows() == 0 || gen.cols() != d)
      throw std::invalid_argument("similarity_loss: class " + std::to_string(n) +
                                  " batch is " + ad::shape_str(gen.shape) + ", expected Bx" +
                                  std::to_string(d));
    auto& rows = plan.targets_for_class[n];
    for (std::size_t j = 0; j < m; ++j)
      if (!opt.class_restricted || target_labels[j] == n) rows.push_back(j);
  }

  if (opt.normalizer > 0.0) {
    plan.normalizer = opt.normalizer;
    return plan;
  }
  // Batch max of the pairwise distances actually summed; a constant under
  // differentiation.
  double mx = 0.0;
  for (std::size_t n = 0; n < semantic_gen_by_class.size(); ++n) {
    const ad::Tensor& gen = semantic_gen_by_class[n];
    for (std::size_t i = 0; i < gen.rows(); ++i) {
      std::vector<double> gi = row_of(gen, i);
      for (std::size_t j : plan.targets_for_class[n])
        mx = std::max(mx, weighted_l1(gi, row_of(semantic_target, j)));
    }
  }
  plan.normalizer = std::max(mx, kNormalizerFloor);
  return plan;
}

ad::Tensor similarity_class_term(const ad::Tensor& gen, const ad::Tensor& semantic_target,
                                 const std::vector<std::size_t>& target_rows,
                                 double normalizer) {
  ad::Tensor acc = ad::Tensor::scalar(0.0);
  for (std::size_t j : target_rows)
    acc = ad::add(acc, ad::sum(weighted_l1_rows(gen, row_of(semantic_target, j))));
  double denom = static_cast<double>(target_rows.size()) * normalizer *
                 static_cast<double>(gen.rows());
  return ad::smul(acc, 1.0 / denom);
}

}  // namespace

ad::Tensor similarity_loss(std::span<const ad::Tensor> semantic_gen_by_class,
                           const ad::Tensor& semantic_target,
                           std::span<const std::size_t> target_labels,
                           const SimilarityOptions& opt) {
  SimilarityPlan plan = plan_similarity(semantic_gen_by_class, semantic_target, target_labels, opt);
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (std::size_t n = 0; n < semantic_gen_by_class.size(); ++n) {
    if (plan.targets_for_class[n].empty()) continue;  // class-restricted, no targets seen
    total = ad::add(total, similarity_class_term(semantic_gen_by_class[n], semantic_target,
                                                 plan.targets_for_class[n], plan.normalizer));
  }
  return ad::smul(total, 1.0 / static_cast<double>(semantic_gen_by_class.size()));
}

ad::Tensor generator_loss(const ad::Tensor& classification, const ad::Tensor& similarity,
                          const ad::Tensor* diversity, const LossWeights& weights) {
  weights.validate();
  ad::Tensor loss = ad::add(classification, ad::smul(similarity, weights.lambda));
  if (diversity) loss = ad::add(loss, ad::smul(*diversity, weights.beta));
  return loss;
}

ad::Tensor separate_generator_loss(const ad::Tensor& probs_n, std::size_t class_index,
                                   const ad::Tensor& semantic_gen_n,
                                   const ad::Tensor& semantic_target,
                                   std::span<const std::size_t> target_labels, double lambda,
                                   const SimilarityOptions& opt) {
  require_prob_rows("separate_generator_loss", probs_n);
  if (lambda < 0.0)
    throw std::invalid_argument("separate_generator_loss: lambda must be non-negative");
  std::size_t b = probs_n.rows();
  ad::Tensor own = pick_column(probs_n, class_index);
  ad::Tensor shortfall = ad::sub(own, ad::Tensor::ones({b, 1}));
  ad::Tensor loss = ad::smul(ad::sum(ad::mul(shortfall, shortfall)),
                             1.0 / static_cast<double>(b));

  if (semantic_target.rank() != 2 || semantic_target.rows() == 0)
    throw std::invalid_argument("separate_generator_loss: need at least one target feature");
  if (target_labels.size() != semantic_target.rows())
    throw std::invalid_argument("separate_generator_loss: target labels do not match the batch");
  std::vector<std::size_t> target_rows;
  for (std::size_t j = 0; j < target_labels.size(); ++j)
    if (!opt.class_restricted || target_labels[j] == class_index) target_rows.push_back(j);
  if (target_rows.empty()) return loss;

  double normalizer = opt.normalizer;
  if (!(normalizer > 0.0)) {
    double mx = 0.0;
    for (std::size_t i = 0; i < semantic_gen_n.rows(); ++i) {
      std::vector<double> gi = row_of(semantic_gen_n, i);
      for (std::size_t j : target_rows)
        mx = std::max(mx, weighted_l1(gi, row_of(semantic_target, j)));
    }
    normalizer = std::max(mx, kNormalizerFloor);
  }
  loss = ad::add(loss, ad::smul(similarity_class_term(semantic_gen_n, semantic_target,
                                                      target_rows, normalizer),
                                lambda));
  return loss;
}

std::vector<PairGroup> build_pair_groups(std::span<const std::size_t> generated_labels,
                                         std::span<const std::size_t> target_labels,
                                         std::size_t per_group, std::mt19937_64& rng) {
  if (per_group == 0) throw std::invalid_argument("build_pair_groups: per_group must be >= 1");
  auto by_class = [](std::span<const std::size_t> labels) {
    std::vector<std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= buckets.size()) buckets.resize(labels[i] + 1);
      buckets[labels[i]].push_back(i);
    }
    return buckets;
  };
  auto gen = by_class(generated_labels);
  auto tgt = by_class(target_labels);
  auto classes_present = [](const std::vector<std::vector<std::size_t>>& b) {
    std::size_t n = 0;
    for (const auto& v : b)
      if (!v.empty()) ++n;
    return n;
  };
  if (classes_present(gen) < 2 || classes_present(tgt) < 2)
    throw std::invalid_argument(
        "build_pair_groups: need at least 2 classes present in both sample sets");

  std::size_t classes = std::max(gen.size(), tgt.size());
  gen.resize(classes);
  tgt.resize(classes);

  // Valid (class_left, class_right) combinations per group, weighted by the
  // number of concrete pairs, so a category draw plus two member draws is
  // uniform over all valid pairs.
  struct Category {
    std::size_t cl, cr;
    double weight;
  };
  auto build_categories = [&](GroupId id) {
    std::vector<Category> cats;
    for (std::size_t a = 0; a < classes; ++a)
      for (std::size_t b = 0; b < classes; ++b) {
        bool same = a == b;
        const auto& left = gen[a];
        const auto& right =
            (id == GroupId::g1 || id == GroupId::g3) ? gen[b] : tgt[b];
        bool want_same = id == GroupId::g1 || id == GroupId::g2;
        if (same != want_same) continue;
        double w = static_cast<double>(left.size()) * static_cast<double>(right.size());
        if (w > 0) cats.push_back({a, b, w});
      }
    return cats;
  };

  const char* names[4] = {"G1", "G2", "G3", "G4"};
  std::vector<PairGroup> out;
  out.reserve(per_group * 4);
  for (int gi = 0; gi < 4; ++gi) {
    GroupId id = static_cast<GroupId>(gi);
    auto cats = build_categories(id);
    if (cats.empty())
      throw std::invalid_argument(std::string("build_pair_groups: group ") + names[gi] +
                                  " has no valid (left, right) combination");
    double total = 0;
    for (const auto& c : cats) total += c.weight;
    for (std::size_t p = 0; p < per_group; ++p) {
      double u = rng::uniform01(rng) * total;
      std::size_t pick = 0;
      for (; pick + 1 < cats.size(); ++pick) {
        if (u < cats[pick].weight) break;
        u -= cats[pick].weight;
      }
      const auto& cat = cats[pick];
      const auto& right_pool =
          (id == GroupId::g1 || id == GroupId::g3) ? gen[cat.cr] : tgt[cat.cr];
      PairGroup pair;
      pair.group = id;
      pair.left = {Provenance::generated, gen[cat.cl][rng::index(rng, gen[cat.cl].size())],
                   cat.cl};
      bool right_generated = id == GroupId::g1 || id == GroupId::g3;
      pair.right = {right_generated ? Provenance::generated : Provenance::target,
                    right_pool[rng::index(rng, right_pool.size())], cat.cr};
      out.push_back(pair);
    }
  }
  return out;
}

ad::Tensor cross_entropy(const ad::Tensor& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.rows() == 0)
    throw std::invalid_argument("cross_entropy: expected a non-empty NxK batch");
  return ad::smul(mean_log(pick_own(probs, labels)), -1.0);
}

ad::Tensor discriminator_loss(const ad::Tensor& pair_probs, std::span<const GroupId> labels) {
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) idx[i] = static_cast<std::size_t>(labels[i]);
  return cross_entropy(pair_probs, idx);
}

ad::Tensor adaptation_loss(const ad::Tensor& d_probs_on_g2, const ad::Tensor& d_probs_on_g4,
                           const ad::Tensor& target_probs,
                           std::span<const std::size_t> target_labels, double gamma,
                           G4Sign g4_sign) {
  if (gamma < 0.0) throw std::invalid_argument("adaptation_loss: gamma must be non-negative");
  ad::Tensor g2_as_g1 = mean_log(pick_column(d_probs_on_g2, static_cast<std::size_t>(GroupId::g1)));
  ad::Tensor g4_as_g3 = mean_log(pick_column(d_probs_on_g4, static_cast<std::size_t>(GroupId::g3)));
  ad::Tensor adversarial = g4_sign == G4Sign::paper ? ad::sub(g2_as_g1, g4_as_g3)
                                                    : ad::add(g2_as_g1, g4_as_g3);
  return ad::add(ad::smul(adversarial, -gamma), cross_entropy(target_probs, target_labels));
}

ad::Tensor adaptation_loss_with_generated(const ad::Tensor& d_probs_on_g2,
                                          const ad::Tensor& d_probs_on_g4,
                                          const ad::Tensor& target_probs,
                                          std::span<const std::size_t> target_labels,
                                          const ad::Tensor* generated_probs,
                                          std::span<const std::size_t> generated_class_codes,
                                          double gamma, G4Sign g4_sign) {
  ad::Tensor base =
      adaptation_loss(d_probs_on_g2, d_probs_on_g4, target_probs, target_labels, gamma, g4_sign);
  if (!generated_probs || generated_class_codes.empty()) return base;
  return ad::add(base, cross_entropy(*generated_probs, generated_class_codes));
}

}  // namespace fhalab::losses
