#include "doctest.h"

#include <cmath>
#include <vector>

#include "vulnmatch/autodiff.hpp"
#include "vulnmatch/gradcheck.hpp"
#include "test_util.hpp"

using namespace vulnmatch;
using namespace vulnmatch::ad;

using Mat = MatT<double>;
using V = Var<double>;

namespace {

Mat scalar_mat(double x) {
  Mat m(1, 1);
  m(0, 0) = x;
  return m;
}

// Reduces an arbitrary op output to a scalar with fixed weights so every
// output coordinate contributes to the finite-difference probe.
V weighted_sum(Tape<double>& t, V out, const Mat& w) {
  return sum_all(mul(out, t.constant(w)));
}

}  // namespace

TEST_CASE("forward values of basic primitives") {
  Tape<double> t;

  V s = sigmoid(t.input(scalar_mat(0.0)));
  CHECK(t.val(s)(0, 0) == doctest::Approx(0.5));

  // Constant vector normalizes to zeros (epsilon handles zero variance).
  Mat c = Mat::Constant(1, 5, 3.7);
  V ln = layer_norm(t.input(c));
  CHECK(t.val(ln).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-9));

  RngStream rng(42);
  Mat a = testutil::randm<double>(4, 4, rng);
  V prod = matmul(t.input(a), t.input(Mat(Mat::Identity(4, 4))));
  CHECK((t.val(prod) - a).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("backward on sum gives ones") {
  Tape<double> t;
  Mat x(1, 3);
  x << 1.0, 2.0, 3.0;
  V xs = t.leaf(x);
  V loss = sum_all(xs);
  t.backward(loss);
  Mat g = t.grad(xs);
  CHECK(g(0, 0) == doctest::Approx(1.0));
  CHECK(g(0, 1) == doctest::Approx(1.0));
  CHECK(g(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("sigmoid of dot product at w=0 gives quarter-scaled input gradient") {
  Tape<double> t;
  Mat x(1, 3);
  x << 0.4, -1.2, 2.0;
  Mat w = Mat::Zero(3, 1);
  V wv = t.leaf(w);
  V out = sigmoid(matmul(t.input(x), wv));
  t.backward(out);
  Mat g = t.grad(wv);
  for (int i = 0; i < 3; ++i) {
    CHECK(g(i, 0) == doctest::Approx(0.25 * x(0, i)));
  }
}

TEST_CASE("untouched parameters report zero gradient") {
  Tape<double> t;
  Mat stored = Mat::Ones(2, 2);
  V unused = t.param(stored);
  V used = t.leaf(Mat::Ones(1, 2));
  t.backward(sum_all(used));
  CHECK(t.grad(unused).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> t;
  V x = t.leaf(Mat::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(x), Error);
}

TEST_CASE("shape mismatches name both shapes") {
  Tape<double> t;
  V a = t.input(Mat::Ones(2, 3));
  V b = t.input(Mat::Ones(4, 2));
  try {
    matmul(a, b);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    CHECK(std::string(e.what()).find("2x3") != std::string::npos);
    CHECK(std::string(e.what()).find("4x2") != std::string::npos);
  }
}

TEST_CASE("grad_check on an exact linear map is at rounding level") {
  RngStream rng(7);
  Mat w = testutil::randm<double>(3, 1, rng);
  auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
    return matmul(xs[0], t.constant(w));
  };
  auto report = grad_check<double>(build, {testutil::randm<double>(1, 3, rng)}, 1e-5);
  CHECK(report.max_rel_err <= 1e-9);
}

TEST_CASE("grad_check on softmax plus cross-entropy composite") {
  RngStream rng(11);
  Mat target = Mat::Zero(2, 5);
  target(0, 2) = 1.0;
  target(1, 0) = 1.0;
  auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
    V probs = clamp(row_softmax(xs[0]), 1e-12, 1.0);
    V ce = scale(sum_all(mul(log(probs), t.constant(target))), -1.0);
    return ce;
  };
  auto report = grad_check<double>(build, {testutil::randm<double>(2, 5, rng)}, 1e-6);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("per-primitive gradients match finite differences") {
  RngStream rng(123);
  Mat w34 = testutil::randm<double>(3, 4, rng);
  Mat w24 = testutil::randm<double>(2, 4, rng);
  Mat w23 = testutil::randm<double>(2, 3, rng);
  Mat w53 = testutil::randm<double>(5, 3, rng);

  SUBCASE("matmul") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, matmul(xs[0], xs[1]), w24);
    };
    auto r = grad_check<double>(
        build, {testutil::randm<double>(2, 3, rng), testutil::randm<double>(3, 4, rng)});
    CHECK(r.max_rel_err <= 1e-8);
  }
  SUBCASE("matmul_nt") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, matmul_nt(xs[0], xs[1]), w24);
    };
    auto r = grad_check<double>(
        build, {testutil::randm<double>(2, 3, rng), testutil::randm<double>(4, 3, rng)});
    CHECK(r.max_rel_err <= 1e-8);
  }
  SUBCASE("add row broadcast") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, add(xs[0], xs[1]), w34);
    };
    auto r = grad_check<double>(
        build, {testutil::randm<double>(3, 4, rng), testutil::randm<double>(1, 4, rng)});
    CHECK(r.max_rel_err <= 1e-8);
  }
  SUBCASE("sub col broadcast") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, sub(xs[0], xs[1]), w34);
    };
    auto r = grad_check<double>(
        build, {testutil::randm<double>(3, 4, rng), testutil::randm<double>(3, 1, rng)});
    CHECK(r.max_rel_err <= 1e-8);
  }
  SUBCASE("mul elementwise and scalar broadcast") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, mul(mul(xs[0], xs[1]), xs[2]), w34);
    };
    auto r = grad_check<double>(
        build, {testutil::randm<double>(3, 4, rng), testutil::randm<double>(3, 4, rng),
                scalar_mat(0.7)});
    CHECK(r.max_rel_err <= 1e-8);
  }
  SUBCASE("sigmoid tanh relu log chain") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      V a = sigmoid(xs[0]);
      V b = ad::tanh(a);
      V c = ad::log(add_scalar(relu(b), 0.5));
      return weighted_sum(t, c, w23);
    };
    // Inputs away from the relu kink.
    Mat x = testutil::randm<double>(2, 3, rng);
    x.array() += 3.0;
    auto r = grad_check<double>(build, {x});
    CHECK(r.max_rel_err <= 1e-7);
  }
  SUBCASE("row_softmax with mask") {
    std::vector<uint8_t> mask = {1, 0, 1, 1};
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, row_softmax(xs[0], mask), w34);
    };
    auto r = grad_check<double>(build, {testutil::randm<double>(3, 4, rng)});
    CHECK(r.max_rel_err <= 1e-8);
  }
  SUBCASE("layer_norm with affine") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, layer_norm(xs[0], xs[1], xs[2]), w34);
    };
    auto r = grad_check<double>(
        build, {testutil::randm<double>(3, 4, rng), testutil::randm<double>(1, 4, rng),
                testutil::randm<double>(1, 4, rng)});
    CHECK(r.max_rel_err <= 1e-7);
  }
  SUBCASE("concat slice emax reduce") {
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      V cat = concat_rows(xs[0], xs[1]);
      V sl = slice(cat, 1, 0, 3, 3);
      V mx = emax(sl, xs[2]);
      return add(reduce_mean(mx), weighted_sum(t, reduce_max(mx), Mat::Ones(3, 1)));
    };
    auto r = grad_check<double>(
        build, {testutil::randm<double>(2, 3, rng), testutil::randm<double>(3, 3, rng),
                testutil::randm<double>(3, 3, rng)});
    CHECK(r.max_rel_err <= 1e-8);
  }
  SUBCASE("embedding_lookup") {
    std::vector<int> ids = {2, 0, 2, 4};
    Mat w43 = testutil::randm<double>(4, 3, rng);
    auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
      return weighted_sum(t, embedding_lookup(xs[0], ids), w43);
    };
    auto r = grad_check<double>(build, {w53});
    CHECK(r.max_rel_err <= 1e-8);
  }
}

TEST_CASE("gru_step gradients match finite differences over three chained steps") {
  RngStream rng(31);
  int din = 3, dh = 4, m = 2;
  std::vector<Mat> inputs;
  for (int g = 0; g < 3; ++g) {
    inputs.push_back(testutil::randm<double>(din, dh, rng, 0.5));  // W
    inputs.push_back(testutil::randm<double>(dh, dh, rng, 0.5));   // U
    inputs.push_back(testutil::randm<double>(1, dh, rng, 0.5));    // b
  }
  for (int s = 0; s < 3; ++s) inputs.push_back(testutil::randm<double>(m, din, rng));
  Mat w = testutil::randm<double>(m, dh, rng);

  auto build = [&](Tape<double>& t, const std::vector<V>& xs) {
    GruStepParams<double> p{xs[0], xs[1], xs[2], xs[3], xs[4], xs[5], xs[6], xs[7], xs[8]};
    V h = t.constant(Mat::Zero(m, dh));
    for (int s = 0; s < 3; ++s) h = gru_step(xs[static_cast<size_t>(9 + s)], h, p);
    return weighted_sum(t, h, w);
  };
  auto r = grad_check<double>(build, inputs, 1e-5);
  CHECK(r.max_rel_err <= 1e-4);
  CHECK(r.max_rel_err <= 1e-7);  // in practice far below the contract bound
}

TEST_CASE("straight_through copies gradient and blocks the target") {
  Tape<double> t;
  RngStream rng(5);
  Mat v = testutil::randm<double>(1, 4, rng);
  Mat c = testutil::randm<double>(1, 4, rng);
  V vv = t.leaf(v);
  V q = straight_through(vv, c);
  CHECK((t.val(q) - c).cwiseAbs().maxCoeff() == 0.0);

  Mat w = testutil::randm<double>(1, 4, rng);
  V loss = sum_all(mul(q, t.constant(w)));
  t.backward(loss);
  CHECK((t.grad(vv) - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dropout preserves expectation and is identity in eval mode") {
  Tape<double> t;
  Mat x = Mat::Constant(1, 8, 2.0);
  V xv = t.input(x);
  V same = dropout(xv, 0.3, nullptr, /*training=*/false);
  CHECK(same.id == xv.id);

  RngStream rng(99);
  int trials = 100000;
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(8);
  for (int i = 0; i < trials; ++i) {
    Tape<double> tt(false);
    V d = dropout(tt.input(x), 0.3, &rng, true);
    acc += tt.val(d).row(0);
  }
  acc /= trials;
  for (int j = 0; j < 8; ++j) {
    CHECK(acc(j) == doctest::Approx(2.0).epsilon(0.01));
  }
}

TEST_CASE("non-recording tape is deterministic and refuses backward") {
  RngStream rng(17);
  Mat x = testutil::randm<double>(3, 3, rng);
  auto run = [&]() {
    Tape<double> t(false);
    V out = row_softmax(matmul(t.input(x), t.input(x)));
    return Mat(t.val(out));
  };
  Mat a = run();
  Mat b = run();
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  Tape<double> t(false);
  V out = sum_all(t.input(x));
  CHECK_THROWS_AS(t.backward(out), Error);
}

TEST_CASE("seeded gradients fold into the reverse sweep") {
  // d/dx of (sum(y) + <s, y>) where y = 2x must be 2 * (1 + s).
  Tape<double> t;
  Mat x = Mat::Ones(1, 3);
  V xv = t.leaf(x);
  V y = scale(xv, 2.0);
  V loss = sum_all(y);
  Mat s(1, 3);
  s << 0.5, -1.0, 2.0;
  t.seed(y, s);
  t.backward(loss);
  Mat g = t.grad(xv);
  for (int j = 0; j < 3; ++j) {
    CHECK(g(0, j) == doctest::Approx(2.0 * (1.0 + s(0, j))));
  }
}

TEST_CASE("log of non-positive input raises a numeric error") {
  Tape<double> t;
  Mat x(1, 2);
  x << 1.0, -1.0;
  CHECK_THROWS_AS(ad::log(t.input(x)), Error);
}
