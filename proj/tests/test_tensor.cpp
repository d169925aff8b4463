#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fhalab/tensor.hpp"
#include "testutil.hpp"

using namespace fhalab;
using ad::Tensor;
using testutil::check_gradients;
using testutil::random_matrix;

TEST_CASE("matmul against identity returns the operand") {
  std::mt19937_64 g(7);
  Tensor a = random_matrix(g, 3, 4);
  Tensor out = ad::matmul(a, Tensor::identity(4));
  REQUIRE(out.shape == a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(out.data[i] == doctest::Approx(a.data[i]));
}

TEST_CASE("matmul rejects nonconforming shapes with a diagnostic") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(ad::matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
}

TEST_CASE("softmax of a symmetric pair is uniform and rows sum to one") {
  Tensor x = Tensor::vec({0.0, 0.0});
  Tensor s = ad::softmax(x);
  CHECK(s.data[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.data[1] == doctest::Approx(0.5).epsilon(1e-15));

  std::mt19937_64 g(11);
  Tensor m = random_matrix(g, 6, 5, 3.0);
  Tensor sm = ad::softmax(m, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    double rowsum = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(sm.at(i, j) >= 0.0);
      rowsum += sm.at(i, j);
    }
    CHECK(std::abs(rowsum - 1.0) < 1e-12);
  }
}

TEST_CASE("relu sum forward and gradient on the piecewise-linear example") {
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  Tensor x = tape.leaf(Tensor::vec({1.0, -1.0}));
  Tensor loss = ad::sum(ad::relu(x));
  CHECK(loss.scalar_value() == doctest::Approx(1.0));
  auto grads = tape.backward(loss);
  auto gx = grads.at(x.node);
  CHECK(gx[0] == doctest::Approx(1.0));
  CHECK(gx[1] == doctest::Approx(0.0));
}

TEST_CASE("backward of sum(x*x) is 2x") {
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  Tensor x = tape.leaf(Tensor::vec({1.0, 2.0, 3.0}));
  Tensor loss = ad::sum(ad::mul(x, x));
  auto grads = tape.backward(loss);
  auto gx = grads.at(x.node);
  CHECK(gx[0] == doctest::Approx(2.0));
  CHECK(gx[1] == doctest::Approx(4.0));
  CHECK(gx[2] == doctest::Approx(6.0));
}

TEST_CASE("loss independent of a leaf yields a zero gradient") {
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  Tensor unused = tape.leaf(Tensor::vec({5.0, 6.0}));
  Tensor x = tape.leaf(Tensor::scalar(2.0));
  Tensor loss = ad::mul(x, x);
  auto grads = tape.backward(loss);
  auto gu = grads.at(unused.node);
  CHECK(gu[0] == 0.0);
  CHECK(gu[1] == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  Tensor x = tape.leaf(Tensor::vec({1.0, 2.0}));
  Tensor y = ad::relu(x);
  CHECK_THROWS_AS((void)tape.backward(y), std::invalid_argument);
}

TEST_CASE("record is consumed by backward") {
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  Tensor x = tape.leaf(Tensor::scalar(3.0));
  Tensor loss = ad::mul(x, x);
  (void)tape.backward(loss);
  CHECK(tape.consumed());
  // later ops fall back to eager evaluation instead of recording
  Tensor y = ad::mul(x, x);
  CHECK(y.node == -1);
  CHECK(y.scalar_value() == doctest::Approx(9.0));
  CHECK_THROWS_AS((void)tape.backward(loss), std::invalid_argument);
}

TEST_CASE("log and sqrt reject negative entries") {
  CHECK_THROWS_AS(ad::log(Tensor::vec({-1.0})), std::invalid_argument);
  CHECK_THROWS_AS(ad::sqrt(Tensor::vec({-1.0})), std::invalid_argument);
  CHECK(ad::sqrt_clamped(Tensor::vec({-1e-15})).data[0] == 0.0);
}

TEST_CASE("gradients of every supported op match central finite differences") {
  std::mt19937_64 g(42);
  auto weight = [&](std::size_t r, std::size_t c) { return random_matrix(g, r, c); };

  // Scalar readout through a random constant weighting so all entries matter.
  auto readout = [](const Tensor& t, const Tensor& w) { return ad::sum(ad::mul(t, w)); };

  SUBCASE("matmul") {
    Tensor w = weight(4, 3);
    auto res = check_gradients({random_matrix(g, 4, 5), random_matrix(g, 5, 3)},
                               [&](const std::vector<Tensor>& in) {
                                 return readout(ad::matmul(in[0], in[1]), w);
                               });
    CHECK(res.ok());
  }
  SUBCASE("add sub mul") {
    Tensor w = weight(3, 3);
    for (auto tag : {"add", "sub", "elementwise-mul"}) {
      auto res = check_gradients({random_matrix(g, 3, 3), random_matrix(g, 3, 3)},
                                 [&](const std::vector<Tensor>& in) {
                                   std::vector<Tensor> args{in[0], in[1]};
                                   return readout(ad::forward(tag, args), w);
                                 });
      CHECK_MESSAGE(res.ok(), tag);
    }
  }
  SUBCASE("scalar-mul") {
    Tensor w = weight(2, 4);
    auto res = check_gradients({random_matrix(g, 2, 4)}, [&](const std::vector<Tensor>& in) {
      return readout(ad::smul(in[0], -1.7), w);
    });
    CHECK(res.ok());
  }
  SUBCASE("unary elementwise") {
    // Shifted away from the relu/abs kinks and into log/sqrt domains.
    Tensor w = weight(3, 4);
    struct Case {
      const char* tag;
      double lo;
    };
    for (auto [tag, lo] : {Case{"relu", 0.2}, Case{"tanh", -2.0}, Case{"exp", -1.0},
                           Case{"log", 0.5}, Case{"sqrt", 0.5}, Case{"sqrt_clamped", 0.5},
                           Case{"rsqrt_safe", 0.5}, Case{"abs", 0.3}}) {
      Tensor x = random_matrix(g, 3, 4, 0.25);
      for (auto& v : x.data) v = lo + std::abs(v);
      auto res = check_gradients({x}, [&, tag = tag](const std::vector<Tensor>& in) {
        std::vector<Tensor> args{in[0]};
        return readout(ad::forward(tag, args), w);
      });
      CHECK_MESSAGE(res.ok(), tag);
    }
  }
  SUBCASE("clamp_min passes gradient only above the bound") {
    Tensor w = weight(1, 4);
    Tensor x = Tensor::matrix(1, 4, {-2.0, -0.5, 0.5, 2.0});
    auto res = check_gradients({x}, [&](const std::vector<Tensor>& in) {
      return readout(ad::clamp_min(in[0], 0.0), w);
    });
    CHECK(res.ok());
  }
  SUBCASE("reductions") {
    for (auto tag : {"sum", "mean", "trace"}) {
      auto res = check_gradients({random_matrix(g, 4, 4)},
                                 [&, tag = tag](const std::vector<Tensor>& in) {
                                   std::vector<Tensor> args{in[0]};
                                   return ad::forward(tag, args);
                                 });
      CHECK_MESSAGE(res.ok(), tag);
    }
  }
  SUBCASE("softmax both axes") {
    for (int axis : {0, 1}) {
      Tensor w = weight(3, 4);
      auto res = check_gradients({random_matrix(g, 3, 4)},
                                 [&, axis](const std::vector<Tensor>& in) {
                                   return readout(ad::softmax(in[0], axis), w);
                                 });
      CHECK_MESSAGE(res.ok(), axis);
    }
  }
  SUBCASE("concat both axes") {
    for (int axis : {0, 1}) {
      Tensor w = axis == 0 ? weight(5, 3) : weight(3, 7);
      auto a = axis == 0 ? random_matrix(g, 2, 3) : random_matrix(g, 3, 3);
      auto b = axis == 0 ? random_matrix(g, 3, 3) : random_matrix(g, 3, 4);
      auto res = check_gradients({a, b}, [&, axis](const std::vector<Tensor>& in) {
        return readout(ad::concat(in[0], in[1], axis), w);
      });
      CHECK_MESSAGE(res.ok(), axis);
    }
  }
  SUBCASE("transpose") {
    Tensor w = weight(4, 2);
    auto res = check_gradients({random_matrix(g, 2, 4)}, [&](const std::vector<Tensor>& in) {
      return readout(ad::transpose(in[0]), w);
    });
    CHECK(res.ok());
  }
  SUBCASE("row_broadcast") {
    Tensor w = weight(4, 3);
    auto res = check_gradients({random_matrix(g, 4, 3), random_matrix(g, 1, 3)},
                               [&](const std::vector<Tensor>& in) {
                                 return readout(ad::row_broadcast(in[0], in[1]), w);
                               });
    CHECK(res.ok());
  }
}

TEST_CASE("dropout scales by the kept mask and is disabled-equivalent at rate 0") {
  std::mt19937_64 g(3);
  Tensor x = random_matrix(g, 4, 4);
  std::mt19937_64 d1(99), d2(99);
  Tensor a = ad::dropout(x, 0.5, d1);
  Tensor b = ad::dropout(x, 0.5, d2);
  CHECK(a.data == b.data);  // same stream, same mask
  std::mt19937_64 d3(1);
  Tensor c = ad::dropout(x, 0.0, d3);
  CHECK(c.data == x.data);
}

TEST_CASE("forward rejects unknown tags") {
  std::vector<Tensor> args{Tensor::scalar(1.0)};
  CHECK_THROWS_AS(ad::forward("conv2d", args), std::invalid_argument);
}

TEST_CASE("identical seed and op sequence give bit-identical data and grads") {
  auto run = [] {
    std::mt19937_64 g(1234);
    Tensor a = random_matrix(g, 4, 4);
    Tensor b = random_matrix(g, 4, 4);
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    Tensor la = tape.leaf(a);
    Tensor loss = ad::mean(ad::tanh(ad::matmul(la, b)));
    auto grads = tape.backward(loss);
    return std::make_pair(loss.scalar_value(), grads.at(la.node));
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("adam single step matches the hand-evaluated recurrence") {
  // p=0, g=1, lr=1e-3: bias correction makes the first step -lr * 1/(1+eps).
  std::vector<double> p{0.0};
  std::vector<double> gr{1.0};
  AdamState st;
  st.cfg.learning_rate = 1e-3;
  adam_step(p, gr, st);
  CHECK(st.step == 1);
  CHECK(std::abs(p[0] - (-1e-3)) < 1e-9);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  std::vector<double> p{1.0, -2.0, 3.0};
  std::vector<double> gr{0.0, 0.0, 0.0};
  AdamState st;
  adam_step(p, gr, st);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(st.step == 1);
}

TEST_CASE("identical blocks with identical grads update identically") {
  std::mt19937_64 g(5);
  std::vector<double> p1(8), gr(8);
  for (auto& v : p1) v = rng::normal(g);
  for (auto& v : gr) v = rng::normal(g);
  auto p2 = p1;
  AdamState s1, s2;
  for (int it = 0; it < 5; ++it) {
    adam_step(p1, gr, s1, "block1");
    adam_step(p2, gr, s2, "block2");
  }
  CHECK(p1 == p2);
}

TEST_CASE("adam rejects NaN gradients naming the block") {
  std::vector<double> p{0.0};
  std::vector<double> gr{std::nan("")};
  AdamState st;
  CHECK_THROWS_WITH_AS(adam_step(p, gr, st, "encoder.weight0"),
                       doctest::Contains("encoder.weight0"), numeric_error);
}
