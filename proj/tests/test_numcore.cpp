#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vidswap/common/rng.hpp"
#include "vidswap/numcore/blob.hpp"
#include "vidswap/numcore/gradcheck.hpp"
#include "vidswap/numcore/optim.hpp"
#include "vidswap/numcore/random.hpp"
#include "vidswap/numcore/tape.hpp"
#include "vidswap/selftest.hpp"

using namespace vidswap;
using namespace vidswap::numcore;

TEST_CASE("matmul forced arithmetic") {
  Tape<double> t;
  auto i2 = t.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto p = t.matmul(i2, i2);
  CHECK(bitwise_equal(t.value(p), Tensor<double>({2, 2}, {1, 0, 0, 1})));

  auto a = t.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = t.constant(Tensor<double>({2, 1}, {1, 1}));
  auto c = t.matmul(a, b);
  CHECK(t.value(c)[0] == doctest::Approx(3.0));
  CHECK(t.value(c)[1] == doctest::Approx(7.0));
}

TEST_CASE("matmul shape mismatch raises") {
  Tape<double> t;
  auto a = t.constant(Tensor<double>({2, 3}));
  auto b = t.constant(Tensor<double>({2, 3}));
  CHECK_THROWS_AS(t.matmul(a, b), ValidationError);
}

TEST_CASE("matmul gradient of sum equals ones * b^T") {
  Rng rng(7);
  Tensor<double> a = randn<double>({3, 4}, rng);
  Tensor<double> b = randn<double>({4, 2}, rng);

  Tape<double> t;
  auto va = t.input(a, true);
  auto loss = t.sum_all(t.matmul(va, t.constant(b)));
  t.backward(loss);
  const auto& g = t.grad(va);

  // expected: ones[3,2] * b^T
  for (index_t i = 0; i < 3; ++i)
    for (index_t j = 0; j < 4; ++j) {
      double want = 0;
      for (index_t k = 0; k < 2; ++k) want += b.at(j, k);
      CHECK(g.at(i, j) == doctest::Approx(want).epsilon(1e-12));
    }

  // and against central differences, eps 1e-4
  auto f = [&](Tape<double>& tape, Tape<double>::Var v) {
    return tape.sum_all(tape.matmul(v, tape.constant(b)));
  };
  CHECK(grad_check<double>(f, a, 1e-4) < 1e-6);
}

TEST_CASE("softmax values") {
  Tape<double> t;
  auto u = t.softmax_lastdim(t.constant(Tensor<double>({1, 3}, {0, 0, 0})));
  for (int j = 0; j < 3; ++j) CHECK(t.value(u)[j] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto v = t.softmax_lastdim(t.constant(Tensor<double>({1, 2}, {std::log(2.0), 0.0})));
  CHECK(t.value(v)[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(t.value(v)[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax jacobian vs finite differences") {
  Tensor<double> x({1, 3}, {5, -5, 0});
  // probe every row of the Jacobian through random projections
  Rng rng(3);
  for (int rep = 0; rep < 4; ++rep) {
    Tensor<double> w = randn<double>({1, 3}, rng);
    auto f = [&](Tape<double>& tape, Tape<double>::Var v) {
      return tape.sum_all(tape.mul(tape.softmax_lastdim(v), tape.constant(w)));
    };
    CHECK(grad_check<double>(f, x, 1e-4) < 1e-4);
  }
}

TEST_CASE("layernorm forced values") {
  Tape<double> t;
  auto c = t.layernorm_lastdim(t.constant(Tensor<double>({1, 4}, {2, 2, 2, 2})));
  for (int j = 0; j < 4; ++j) CHECK(t.value(c)[j] == doctest::Approx(0.0));

  // [1,-1]: population variance 1, eps 1e-5
  auto v = t.layernorm_lastdim(t.constant(Tensor<double>({1, 2}, {1, -1})));
  CHECK(t.value(v)[0] == doctest::Approx(0.99999).epsilon(1e-5));
  CHECK(t.value(v)[1] == doctest::Approx(-0.99999).epsilon(1e-5));
}

TEST_CASE("rope: zero indices, determinism, relative positions") {
  Rng rng(11);
  Tensor<double> x = randn<double>({3, 12}, rng);

  auto zero_idx = std::make_shared<std::vector<std::array<int, 3>>>(
      std::vector<std::array<int, 3>>{{0, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  Tape<double> t(false);
  auto y = t.rope_rotate(t.constant(x), zero_idx);
  CHECK(max_abs_diff(t.value(y), x) < 1e-15);

  // equal indices on equal inputs -> equal outputs
  auto same_idx = std::make_shared<std::vector<std::array<int, 3>>>(
      std::vector<std::array<int, 3>>{{2, 5, 1}, {2, 5, 1}, {2, 5, 1}});
  Tensor<double> xx({3, 12});
  for (int j = 0; j < 12; ++j) xx[j] = xx[12 + j] = xx[24 + j] = x[j];
  auto y2 = t.rope_rotate(t.constant(xx), same_idx);
  for (int j = 0; j < 12; ++j) {
    CHECK(t.value(y2)[j] == t.value(y2)[12 + j]);
    CHECK(t.value(y2)[j] == t.value(y2)[24 + j]);
  }

  // dot product depends only on the per-axis index difference
  Tensor<double> q = randn<double>({1, 12}, rng);
  Tensor<double> k = randn<double>({1, 12}, rng);
  auto dot_at = [&](std::array<int, 3> iq, std::array<int, 3> ik) {
    auto idx = std::make_shared<std::vector<std::array<int, 3>>>(
        std::vector<std::array<int, 3>>{iq, ik});
    Tensor<double> both({2, 12});
    for (int j = 0; j < 12; ++j) {
      both[j] = q[j];
      both[12 + j] = k[j];
    }
    Tape<double> tt(false);
    auto r = tt.rope_rotate(tt.constant(both), idx);
    double d = 0;
    for (int j = 0; j < 12; ++j) d += tt.value(r)[j] * tt.value(r)[12 + j];
    return d;
  };
  const double d1 = dot_at({1, 2, 3}, {4, 0, 5});
  const double d2 = dot_at({3, 7, 4}, {6, 5, 6});  // same differences (-3, 2, -2)
  CHECK(d1 == doctest::Approx(d2).epsilon(1e-9));
  const double d3 = dot_at({1, 2, 3}, {4, 0, 6});
  CHECK(std::abs(d1 - d3) > 1e-6);  // different difference changes the dot
}

TEST_CASE("rope index count mismatch raises") {
  Tape<double> t;
  auto idx = std::make_shared<std::vector<std::array<int, 3>>>(
      std::vector<std::array<int, 3>>{{0, 0, 0}});
  CHECK_THROWS_AS(t.rope_rotate(t.constant(Tensor<double>({2, 6})), idx), ValidationError);
}

TEST_CASE("grad_check trivial oracles") {
  auto fsum = [](Tape<double>& t, Tape<double>::Var v) { return t.sum_all(v); };
  CHECK(grad_check<double>(fsum, Tensor<double>({2, 2}, {1, 2, 3, 4}), 1e-4) < 1e-8);

  auto fsq = [](Tape<double>& t, Tape<double>::Var v) { return t.sum_all(t.mul(v, v)); };
  Tensor<double> x({2}, {1, 2});
  Tape<double> t;
  auto v = t.input(x, true);
  t.backward(fsq(t, v));
  CHECK(t.grad(v)[0] == doctest::Approx(2.0));
  CHECK(t.grad(v)[1] == doctest::Approx(4.0));
  CHECK(grad_check<double>(fsq, x, 1e-4) < 1e-5);
}

TEST_CASE("grad_check rejects eps out of range") {
  auto fsum = [](Tape<double>& t, Tape<double>::Var v) { return t.sum_all(v); };
  CHECK_THROWS_AS(grad_check<double>(fsum, Tensor<double>({2}), 1e-7), ValidationError);
}

TEST_CASE("nan propagation is an error") {
  Tape<double> t;
  auto a = t.constant(Tensor<double>({1, 2}, {1e308, 1e308}));
  CHECK_THROWS_AS(t.mul(a, a), NumericError);
}

TEST_CASE("full grad suites pass their bounds") {
  auto dres = selftest::grad_suite_double(1234);
  CHECK(selftest::report(dres, false));
  auto sres = selftest::grad_suite_single(1234);
  CHECK(selftest::report(sres, false));
}

TEST_CASE("numcore invariants") {
  CHECK(selftest::report(selftest::numcore_invariants(99), false));
}

TEST_CASE("blob round trip") {
  Rng rng(5);
  Tensor<float> t = randn<float>({2, 3, 4}, rng);
  auto path = std::filesystem::temp_directory_path() / "vidswap_blob_test.swpt";
  save_blob(path, t);
  Tensor<float> u = load_blob(path);
  CHECK(bitwise_equal(t, u));
  std::filesystem::remove(path);
}

TEST_CASE("adam converges on a quadratic") {
  ParamStore<double> params;
  params.create("x", Tensor<double>({2}, {5.0, -3.0}));
  Adam<double> opt(AdamConfig<double>{0.1, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 200; ++i) {
    const Tensor<double>& x = params.get("x");
    GradMap<double> g;
    g["x"] = Tensor<double>({2}, {2 * x[0], 2 * x[1]});
    opt.step(params, std::move(g));
  }
  CHECK(std::abs(params.get("x")[0]) < 1e-2);
  CHECK(std::abs(params.get("x")[1]) < 1e-2);
}

TEST_CASE("sgd momentum first steps match hand computation") {
  ParamStore<double> params;
  params.create("x", Tensor<double>({1}, {1.0}));
  SgdMomentum<double> opt(SgdConfig<double>{0.1, 0.5, 0.0});
  GradMap<double> g;
  g["x"] = Tensor<double>({1}, {1.0});
  opt.step(params, g);  // v=1, x=1-0.1
  CHECK(params.get("x")[0] == doctest::Approx(0.9));
  opt.step(params, g);  // v=1.5, x=0.9-0.15
  CHECK(params.get("x")[0] == doctest::Approx(0.75));
}

TEST_CASE("param store enforces unique names and frozen shapes") {
  ParamStore<float> p;
  p.create("w", Tensor<float>({2, 2}));
  CHECK_THROWS_AS(p.create("w", Tensor<float>({2, 2})), ValidationError);
  CHECK_THROWS_AS(p.set("w", Tensor<float>({3, 2})), ValidationError);
}

TEST_CASE("grad clipping caps global norm") {
  GradMap<double> g;
  g["a"] = Tensor<double>({2}, {3.0, 0.0});
  g["b"] = Tensor<double>({1}, {4.0});
  clip_grad_norm(g, 1.0);  // norm was 5
  CHECK(g["a"][0] == doctest::Approx(0.6));
  CHECK(g["b"][0] == doctest::Approx(0.8));
}
