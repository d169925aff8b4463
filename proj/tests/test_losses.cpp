#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fhalab/losses.hpp"
#include "testutil.hpp"

using namespace fhalab;
using ad::Tensor;
using namespace fhalab::losses;

TEST_CASE("classification loss worked examples") {
  SUBCASE("perfect own-class probabilities give zero") {
    std::vector<Tensor> probs{Tensor::matrix(2, 2, {1.0, 0.0, 1.0, 0.0}),
                              Tensor::matrix(2, 2, {0.0, 1.0, 0.0, 1.0})};
    CHECK(classification_loss(probs).scalar_value() == doctest::Approx(0.0));
  }
  SUBCASE("K=1, B=1, p=0.5 gives 0.25") {
    std::vector<Tensor> probs{Tensor::matrix(1, 1, {1.0})};
    // a 1-class softmax is degenerate; emulate via 2 columns with own prob 0.5
    probs[0] = Tensor::matrix(1, 2, {0.5, 0.5});
    CHECK(classification_loss(probs).scalar_value() == doctest::Approx(0.25));
  }
  SUBCASE("two classes with own probs 0.5 and 1.0 average to 0.125") {
    std::vector<Tensor> probs{Tensor::matrix(1, 2, {0.5, 0.5}),
                              Tensor::matrix(1, 2, {0.0, 1.0})};
    CHECK(classification_loss(probs).scalar_value() == doctest::Approx(0.125));
  }
  SUBCASE("rows that do not sum to one are rejected") {
    std::vector<Tensor> probs{Tensor::matrix(1, 2, {0.9, 0.4})};
    CHECK_THROWS_AS((void)classification_loss(probs), std::invalid_argument);
  }
  SUBCASE("empty class batch is rejected") {
    std::vector<Tensor> probs{Tensor::zeros({0, 2})};
    CHECK_THROWS_AS((void)classification_loss(probs), std::invalid_argument);
  }
}

TEST_CASE("weighted l1 closed forms") {
  std::vector<double> zero2{0.0, 0.0};
  CHECK(weighted_l1(zero2, zero2) == 0.0);

  std::vector<double> x{3.0, 4.0};
  CHECK(weighted_l1(x, zero2) == doctest::Approx(18.2));  // (27+64)/5

  std::vector<double> a{2.5}, b{0.0};
  CHECK(weighted_l1(a, b) == doctest::Approx(2.5 * 2.5));  // |c|^3/|c| = c^2

  CHECK_THROWS_AS(weighted_l1(std::vector<double>{1.0}, zero2), std::invalid_argument);
}

TEST_CASE("weighted l1 is homogeneous of degree 2") {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t d = 1 + trial % 6;
    std::vector<double> x(d), y(d);
    for (auto& v : x) v = rng::normal(g);
    for (auto& v : y) v = rng::normal(g);
    double c = 0.1 + 3.0 * rng::uniform01(g);
    std::vector<double> cx = x, cy = y;
    for (auto& v : cx) v *= c;
    for (auto& v : cy) v *= c;
    CHECK(testutil::close(weighted_l1(cx, cy), c * c * weighted_l1(x, y), 1e-10));
  }
}

TEST_CASE("similarity loss worked examples") {
  SUBCASE("identical features everywhere give zero") {
    Tensor gen = Tensor::matrix(2, 2, {1.0, 2.0, 1.0, 2.0});
    Tensor tgt = Tensor::matrix(2, 2, {1.0, 2.0, 1.0, 2.0});
    std::vector<std::size_t> labels{0, 1};
    std::vector<Tensor> by_class{gen, gen};
    CHECK(similarity_loss(by_class, tgt, labels).scalar_value() == doctest::Approx(0.0));
  }
  SUBCASE("single pair with the batch-max normalizer gives exactly 1") {
    std::vector<Tensor> by_class{Tensor::matrix(1, 2, {0.0, 0.0})};
    Tensor tgt = Tensor::matrix(1, 2, {3.0, 4.0});
    std::vector<std::size_t> labels{0};
    SimilarityOptions opt;
    opt.normalizer = 18.2;
    CHECK(similarity_loss(by_class, tgt, labels, opt).scalar_value() == doctest::Approx(1.0));
    // and the batch max IS 18.2 here, so the default agrees
    CHECK(similarity_loss(by_class, tgt, labels).scalar_value() == doctest::Approx(1.0));
  }
  SUBCASE("scale invariance under the batch-max normalizer") {
    std::mt19937_64 g(7);
    std::vector<Tensor> by_class{testutil::random_matrix(g, 3, 4),
                                 testutil::random_matrix(g, 2, 4)};
    Tensor tgt = testutil::random_matrix(g, 5, 4);
    std::vector<std::size_t> labels{0, 1, 0, 1, 0};
    double base = similarity_loss(by_class, tgt, labels).scalar_value();
    double c = 3.7;
    std::vector<Tensor> by_class_scaled = by_class;
    for (auto& t : by_class_scaled)
      for (auto& v : t.data) v *= c;
    Tensor tgt_scaled = tgt;
    for (auto& v : tgt_scaled.data) v *= c;
    double scaled = similarity_loss(by_class_scaled, tgt_scaled, labels).scalar_value();
    CHECK(testutil::close(scaled, base, 1e-10));
  }
  SUBCASE("class restriction only pairs same-class targets") {
    Tensor gen0 = Tensor::matrix(1, 1, {0.0});
    Tensor gen1 = Tensor::matrix(1, 1, {0.0});
    Tensor tgt = Tensor::matrix(2, 1, {1.0, 100.0});  // labels 0, 1
    std::vector<std::size_t> labels{0, 1};
    SimilarityOptions restricted;
    restricted.class_restricted = true;
    restricted.normalizer = 1.0;
    std::vector<Tensor> by_class{gen0, gen1};
    // class 0 pairs with 1.0 only (wl1 = 1), class 1 with 100.0 only (wl1 = 1e4)
    double v = similarity_loss(by_class, tgt, labels, restricted).scalar_value();
    CHECK(v == doctest::Approx(0.5 * (1.0 + 1e4)));
  }
}

TEST_CASE("generator loss combines the three terms") {
  Tensor lc = Tensor::scalar(0.1), ls = Tensor::scalar(0.2), ld = Tensor::scalar(0.3);
  LossWeights w;  // 0.9 / 0.1 defaults
  CHECK(generator_loss(lc, ls, &ld, w).scalar_value() == doctest::Approx(0.31));
  LossWeights off;
  off.lambda = 0.0;
  off.beta = 0.0;
  CHECK(generator_loss(lc, ls, &ld, off).scalar_value() == doctest::Approx(0.1));
  // beta = 0 equals dropping the diversity term entirely
  LossWeights nobeta = w;
  nobeta.beta = 0.0;
  CHECK(generator_loss(lc, ls, nullptr, w).scalar_value() ==
        generator_loss(lc, ls, &ld, nobeta).scalar_value());
}

TEST_CASE("pair groups enumerate the rule exactly on the 2x1 example") {
  std::mt19937_64 g(11);
  std::vector<std::size_t> gen_labels{0, 1};
  std::vector<std::size_t> tgt_labels{0, 1};
  auto pairs = build_pair_groups(gen_labels, tgt_labels, 50, g);
  REQUIRE(pairs.size() == 200);
  for (const auto& p : pairs) {
    CHECK(p.satisfies_group_rule());
    if (p.group == GroupId::g2) CHECK(p.left.label == p.right.label);
    if (p.group == GroupId::g4) {
      // only (g0,t1) and (g1,t0) are valid
      CHECK(p.left.label != p.right.label);
      CHECK(p.right.provenance == Provenance::target);
    }
  }
}

TEST_CASE("pair groups satisfy their invariants on random sets") {
  std::mt19937_64 g(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t classes = 2 + trial % 3;
    std::vector<std::size_t> gen_labels, tgt_labels;
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < 1 + rng::index(g, 5); ++i) gen_labels.push_back(c);
      for (std::size_t i = 0; i < 1 + rng::index(g, 3); ++i) tgt_labels.push_back(c);
    }
    auto pairs = build_pair_groups(gen_labels, tgt_labels, 8, g);
    CHECK(pairs.size() == 32);
    for (const auto& p : pairs) CHECK(p.satisfies_group_rule());
  }
}

TEST_CASE("pair groups are deterministic under a fixed seed") {
  std::vector<std::size_t> gen_labels{0, 0, 1, 1, 2};
  std::vector<std::size_t> tgt_labels{0, 1, 2};
  std::mt19937_64 g1(99), g2(99);
  auto a = build_pair_groups(gen_labels, tgt_labels, 10, g1);
  auto b = build_pair_groups(gen_labels, tgt_labels, 10, g2);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].left.index == b[i].left.index);
    CHECK(a[i].right.index == b[i].right.index);
    CHECK(a[i].group == b[i].group);
  }
}

TEST_CASE("pair groups reject a single-class target set naming the group") {
  std::vector<std::size_t> gen_labels{0, 1};
  std::vector<std::size_t> tgt_labels{0, 0};
  std::mt19937_64 g(1);
  CHECK_THROWS_AS((void)build_pair_groups(gen_labels, tgt_labels, 4, g),
                  std::invalid_argument);
}

TEST_CASE("discriminator loss on uniform and perfect predictions") {
  Tensor uniform = Tensor::matrix(4, 4, std::vector<double>(16, 0.25));
  std::vector<GroupId> labels{GroupId::g1, GroupId::g2, GroupId::g3, GroupId::g4};
  CHECK(discriminator_loss(uniform, labels).scalar_value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor perfect = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) perfect.at(i, i) = 1.0;
  CHECK(discriminator_loss(perfect, labels).scalar_value() == doctest::Approx(0.0));

  // permutation invariance over the batch
  std::mt19937_64 g(5);
  Tensor probs = Tensor::matrix(3, 4, {0.7, 0.1, 0.1, 0.1,
                                       0.2, 0.5, 0.2, 0.1,
                                       0.25, 0.25, 0.25, 0.25});
  std::vector<GroupId> lab{GroupId::g1, GroupId::g2, GroupId::g4};
  Tensor shuffled = Tensor::matrix(3, 4, {0.25, 0.25, 0.25, 0.25,
                                          0.7, 0.1, 0.1, 0.1,
                                          0.2, 0.5, 0.2, 0.1});
  std::vector<GroupId> lab_shuffled{GroupId::g4, GroupId::g1, GroupId::g2};
  CHECK(discriminator_loss(probs, lab).scalar_value() ==
        doctest::Approx(discriminator_loss(shuffled, lab_shuffled).scalar_value()));
}

TEST_CASE("adaptation loss worked examples") {
  Tensor uniform = Tensor::matrix(2, 4, std::vector<double>(8, 0.25));
  Tensor target_probs = Tensor::matrix(2, 3, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
  std::vector<std::size_t> labels{0, 1};

  SUBCASE("gamma 0 reduces to supervised cross-entropy") {
    double l = adaptation_loss(uniform, uniform, target_probs, labels, 0.0).scalar_value();
    double ce = cross_entropy(target_probs, labels).scalar_value();
    CHECK(l == doctest::Approx(ce));
  }
  SUBCASE("uniform discriminator cancels the adversarial term") {
    double l = adaptation_loss(uniform, uniform, target_probs, labels, 1.0).scalar_value();
    CHECK(l == doctest::Approx(cross_entropy(target_probs, labels).scalar_value()));
  }
  SUBCASE("0.9 on G2-as-G1 and 0.1 on G4-as-G3 gives about -2.197") {
    Tensor g2 = Tensor::matrix(1, 4, {0.9, 0.05, 0.03, 0.02});
    Tensor g4 = Tensor::matrix(1, 4, {0.3, 0.3, 0.1, 0.3});
    double l = adaptation_loss(g2, g4, target_probs, labels, 1.0).scalar_value();
    double expected = -(std::log(0.9) - std::log(0.1));  // supervised part is 0
    CHECK(l == doctest::Approx(expected).epsilon(1e-9));
    CHECK(l == doctest::Approx(-2.197).epsilon(1e-3));
  }
  SUBCASE("symmetric sign flips the G4 contribution") {
    Tensor g2 = Tensor::matrix(1, 4, {0.9, 0.05, 0.03, 0.02});
    Tensor g4 = Tensor::matrix(1, 4, {0.3, 0.3, 0.1, 0.3});
    double paper =
        adaptation_loss(g2, g4, target_probs, labels, 1.0, G4Sign::paper).scalar_value();
    double sym =
        adaptation_loss(g2, g4, target_probs, labels, 1.0, G4Sign::symmetric).scalar_value();
    CHECK(paper == doctest::Approx(-(std::log(0.9) - std::log(0.1))).epsilon(1e-9));
    CHECK(sym == doctest::Approx(-(std::log(0.9) + std::log(0.1))).epsilon(1e-9));
  }
}

TEST_CASE("generated-supervised variant") {
  Tensor uniform = Tensor::matrix(1, 4, std::vector<double>(4, 0.25));
  Tensor target_probs = Tensor::matrix(1, 2, {1.0, 0.0});
  std::vector<std::size_t> labels{0};

  SUBCASE("no generated data gives the plain loss") {
    double base = adaptation_loss(uniform, uniform, target_probs, labels, 0.5).scalar_value();
    double with = adaptation_loss_with_generated(uniform, uniform, target_probs, labels,
                                                 nullptr, {}, 0.5)
                      .scalar_value();
    CHECK(base == with);
  }
  SUBCASE("perfect generated predictions add zero") {
    Tensor gen_probs = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
    std::vector<std::size_t> codes{0, 1};
    double base = adaptation_loss(uniform, uniform, target_probs, labels, 0.5).scalar_value();
    double with = adaptation_loss_with_generated(uniform, uniform, target_probs, labels,
                                                 &gen_probs, codes, 0.5)
                      .scalar_value();
    CHECK(with == doctest::Approx(base));
  }
  SUBCASE("one generated sample with prob 0.5 adds log 2") {
    Tensor gen_probs = Tensor::matrix(1, 2, {0.5, 0.5});
    std::vector<std::size_t> codes{0};
    double base = adaptation_loss(uniform, uniform, target_probs, labels, 0.0).scalar_value();
    double with = adaptation_loss_with_generated(uniform, uniform, target_probs, labels,
                                                 &gen_probs, codes, 0.0)
                      .scalar_value();
    CHECK(with - base == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("gamma schedule endpoints") {
  CHECK(gamma_at(0.0) == doctest::Approx(0.0));
  CHECK(gamma_at(1.0) == doctest::Approx(2.0 / (1.0 + std::exp(-10.0)) - 1.0).epsilon(1e-12));
  CHECK(gamma_at(1.0) == doctest::Approx(0.999909).epsilon(1e-5));
  CHECK(gamma_at(1000.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(gamma_at(-0.1), std::invalid_argument);
}

TEST_CASE("separate generator loss reductions") {
  std::mt19937_64 g(17);
  Tensor probs = Tensor::matrix(2, 2, {0.8, 0.2, 0.6, 0.4});
  Tensor sem_gen = testutil::random_matrix(g, 2, 3);
  Tensor sem_tgt = testutil::random_matrix(g, 3, 3);
  std::vector<std::size_t> labels{0, 1, 0};

  SUBCASE("lambda 0 keeps only the classification term") {
    double v = separate_generator_loss(probs, 0, sem_gen, sem_tgt, labels, 0.0).scalar_value();
    double expected = ((0.8 - 1) * (0.8 - 1) + (0.6 - 1) * (0.6 - 1)) / 2.0;
    CHECK(v == doctest::Approx(expected));
  }
  SUBCASE("perfect probs and identical features give zero") {
    Tensor perfect = Tensor::matrix(1, 2, {1.0, 0.0});
    Tensor same = Tensor::matrix(1, 3, {1.0, 2.0, 3.0});
    Tensor tgt_same = Tensor::matrix(2, 3, {1.0, 2.0, 3.0, 1.0, 2.0, 3.0});
    std::vector<std::size_t> l2{0, 1};
    CHECK(separate_generator_loss(perfect, 0, same, tgt_same, l2, 0.9).scalar_value() ==
          doctest::Approx(0.0));
  }
  SUBCASE("matches the K=1 slice of the shared losses") {
    std::vector<Tensor> probs_by_class{probs};
    std::vector<Tensor> sem_by_class{sem_gen};
    double lc = classification_loss(probs_by_class).scalar_value();
    double ls = similarity_loss(sem_by_class, sem_tgt, labels).scalar_value();
    double shared = lc + 0.9 * ls;
    double separate =
        separate_generator_loss(probs, 0, sem_gen, sem_tgt, labels, 0.9).scalar_value();
    CHECK(testutil::close(separate, shared, 1e-12));
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 g(23);

  SUBCASE("classification loss through softmax") {
    auto res = testutil::check_gradients(
        {testutil::random_matrix(g, 4, 3), testutil::random_matrix(g, 3, 3)},
        [&](const std::vector<Tensor>& in) {
          std::vector<Tensor> probs{ad::softmax(in[0], 1), ad::softmax(in[1], 1)};
          return classification_loss(probs);
        });
    CHECK(res.ok());
  }
  SUBCASE("similarity loss w.r.t. generated features") {
    Tensor tgt = testutil::random_matrix(g, 3, 4);
    std::vector<std::size_t> labels{0, 1, 0};
    SimilarityOptions opt;
    opt.normalizer = 2.5;  // pinned so fd does not cross the max switch
    auto res = testutil::check_gradients(
        {testutil::random_matrix(g, 3, 4), testutil::random_matrix(g, 2, 4)},
        [&](const std::vector<Tensor>& in) { return similarity_loss(in, tgt, labels, opt); });
    CHECK(res.ok());
  }
  SUBCASE("discriminator loss through softmax") {
    std::vector<GroupId> labels{GroupId::g1, GroupId::g3, GroupId::g4, GroupId::g2, GroupId::g1};
    auto res = testutil::check_gradients(
        {testutil::random_matrix(g, 5, 4)}, [&](const std::vector<Tensor>& in) {
          return discriminator_loss(ad::softmax(in[0], 1), labels);
        });
    CHECK(res.ok());
  }
  SUBCASE("adaptation loss through all three prob batches") {
    std::vector<std::size_t> labels{1, 0, 2};
    auto res = testutil::check_gradients(
        {testutil::random_matrix(g, 4, 4), testutil::random_matrix(g, 4, 4),
         testutil::random_matrix(g, 3, 3)},
        [&](const std::vector<Tensor>& in) {
          return adaptation_loss(ad::softmax(in[0], 1), ad::softmax(in[1], 1),
                                 ad::softmax(in[2], 1), labels, 0.7);
        });
    CHECK(res.ok());
  }
}
