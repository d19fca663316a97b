// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "scalabl/autodiff.hpp"
#include "scalabl/errors.hpp"
#include "scalabl/linalg.hpp"
#include "scalabl/ops.hpp"
#include "test_util.hpp"

namespace scalabl {
namespace {

using testing::grad_matches;
using testing::randn;
using testing::randu;
using V = std::vector<Var>;

// Weighted sum so every output entry gets a distinct upstream gradient.
Var weighted(Tape& tape, const Var& y, std::uint64_t seed = 99) {
  RngStream rng(seed, 0);
  const Var w = tape.constant(randn(rng, y.shape()));
  return ad::sum(ad::mul(y, w));
}

TEST(Autodiff, SumGivesOnes) {
  Parameter p("p", Tensor::matrix({{1, 2}, {3, 4}}));
  Tape tape;
  tape.backward(ad::sum(tape.param(p)));
  EXPECT_EQ(p.grad, Tensor::ones({2, 2}));
}

TEST(Autodiff, HalfSquaredNormGivesValue) {
  RngStream rng(1, 0);
  Parameter p("p", randn(rng, {3, 2}));
  Tape tape;
  const Var v = tape.param(p);
  tape.backward(ad::scale(ad::sum(ad::mul(v, v)), 0.5));
  EXPECT_LT(max_abs_diff(p.grad, p.value), 1e-15);
}

TEST(Autodiff, NonScalarLossRejected) {
  Parameter p("p", Tensor::zeros({2}));
  Tape tape;
  EXPECT_THROW(tape.backward(tape.param(p)), ShapeError);
}

TEST(Autodiff, UnreachedParameterGetsZeroGradient) {
  Parameter a("a", Tensor::ones({2})), b("b", Tensor::ones({2}));
  Tape tape;
  const Var va = tape.param(a);
  tape.param(b);
  tape.backward(ad::sum(va));
  EXPECT_EQ(b.grad, Tensor::zeros({2}));
}

TEST(Autodiff, FrozenParameterAccumulatesNothing) {
  Parameter a("a", Tensor::ones({2}), false);
  Tape tape;
  tape.backward(ad::sum(ad::mul(tape.param(a), tape.param(a))));
  EXPECT_EQ(a.grad, Tensor::zeros({2}));
}

TEST(Autodiff, GradientsAccumulateAcrossTapes) {
  Parameter p("p", Tensor::ones({3}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(ad::sum(tape.param(p)));
  }
  EXPECT_EQ(p.grad, Tensor::full({3}, 2.0));
}

TEST(Autodiff, NonFiniteResultIsAnError) {
  Tape tape;
  const Var x = tape.constant(Tensor::vector({-1.0}));
  EXPECT_THROW(ad::log(x), NumericError);
}

TEST(Autodiff, MatmulSumGradientIsOnesTimesBTranspose) {
  RngStream rng(2, 0);
  const Tensor a = randn(rng, {3, 4}), b = randn(rng, {4, 2});
  Parameter pa("a", a), pb("b", b);
  Tape tape;
  tape.backward(ad::sum(ad::matmul(tape.param(pa), tape.param(pb))));
  EXPECT_LT(max_abs_diff(pa.grad, matmul(Tensor::ones({3, 2}), b.transposed())), 1e-14);
  EXPECT_TRUE(grad_matches([](Tape& t, const V& x) { return ad::sum(ad::matmul(x[0], x[1])); }, {a, b},
                           1e-6, 1e-5));
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  testing::GraphFn fn;
  bool positive = false;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  static const std::vector<int> targets = {2, 0, 3};
  static const std::vector<int> ids = {1, 4, 1, 0};
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape& t, const V& x) { return weighted(t, ad::matmul(x[0], x[1])); }},
      {"matmul_nt", {{3, 4}, {5, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::matmul_nt(x[0], x[1])); }},
      {"transpose", {{3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::transpose(x[0])); }},
      {"reshape", {{3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::reshape(x[0], {2, 6})); }},
      {"add", {{3, 4}, {3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::add(x[0], x[1])); }},
      {"sub", {{3, 4}, {3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::sub(x[0], x[1])); }},
      {"mul", {{3, 4}, {3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::mul(x[0], x[1])); }},
      {"scale", {{3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::scale(x[0], -2.5)); }},
      {"add_scalar", {{3}}, [](Tape& t, const V& x) { return weighted(t, ad::mul(ad::add_scalar(x[0], 1.5), x[0])); }},
      {"add_rowvec", {{3, 4}, {4}}, [](Tape& t, const V& x) { return weighted(t, ad::add_rowvec(x[0], x[1])); }},
      {"mul_rowvec", {{3, 4}, {4}}, [](Tape& t, const V& x) { return weighted(t, ad::mul_rowvec(x[0], x[1])); }},
      {"exp", {{3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::exp(x[0])); }},
      {"log", {{3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::log(x[0])); }, true},
      {"relu", {{3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::relu(x[0])); }},
      {"tanh", {{3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::tanh(x[0])); }},
      {"diag_embed", {{4}}, [](Tape& t, const V& x) { return weighted(t, ad::diag_embed(x[0])); }},
      {"softmax_rows", {{3, 5}}, [](Tape& t, const V& x) { return weighted(t, ad::softmax_rows(x[0])); }},
      {"layer_norm_rows", {{3, 6}}, [](Tape& t, const V& x) { return weighted(t, ad::layer_norm_rows(x[0])); }},
      {"cross_entropy", {{3, 4}}, [](Tape&, const V& x) { return ad::cross_entropy(x[0], targets); }},
      {"sum", {{3, 4}}, [](Tape&, const V& x) { return ad::sum(ad::mul(x[0], x[0])); }},
      {"mean", {{3, 4}}, [](Tape&, const V& x) { return ad::mean(ad::mul(x[0], x[0])); }},
      {"slice_rows", {{5, 3}}, [](Tape& t, const V& x) { return weighted(t, ad::slice_rows(x[0], 1, 4)); }},
      {"slice_cols", {{3, 5}}, [](Tape& t, const V& x) { return weighted(t, ad::slice_cols(x[0], 2, 5)); }},
      {"concat_cols", {{3, 2}, {3, 4}}, [](Tape& t, const V& x) { return weighted(t, ad::concat_cols({x[0], x[1]})); }},
      {"concat_rows", {{2, 3}, {4, 3}}, [](Tape& t, const V& x) { return weighted(t, ad::concat_rows({x[0], x[1]})); }},
      {"gather_rows", {{5, 3}}, [](Tape& t, const V& x) { return weighted(t, ad::gather_rows(x[0], ids)); }},
      {"mean_pool", {{6, 3}}, [](Tape& t, const V& x) { return weighted(t, ad::mean_pool(x[0], 3)); }},
      {"attention", {{8, 4}, {8, 4}, {8, 4}},
       [](Tape& t, const V& x) { return weighted(t, ad::attention(x[0], x[1], x[2], 4, 2)); }},
      {"qr_q", {{3, 3}}, [](Tape&, const V& x) { return ad::sum(ad::qr(x[0]).first); }},
      {"qr_both", {{4, 4}},
       [](Tape& t, const V& x) {
         const auto [q, r] = ad::qr(x[0]);
         return ad::add(weighted(t, q, 5), weighted(t, r, 6));
       }},
      {"cholesky", {{3, 3}},
       [](Tape& t, const V& x) {
         // Symmetric positive definite input built from x.
         const Var spd = ad::add(ad::matmul_nt(x[0], x[0]), t.constant(Tensor::eye(3)));
         return ad::sum(ad::cholesky(spd));
       }},
  };
}

TEST(OpGradient, EveryOpMatchesCentralDifferences) {
  RngStream rng(77, 0);
  for (const OpCase& c : op_cases()) {
    std::vector<Tensor> inputs;
    for (const Shape& s : c.shapes) inputs.push_back(c.positive ? randu(rng, s, 0.5, 2.0) : randn(rng, s));
    EXPECT_TRUE(grad_matches(c.fn, inputs, 1e-6)) << c.name;
  }
}

TEST(OpGradient, CholeskyOfSymmetricInputDirectly) {
  // sum(L) w.r.t. sigma with symmetric perturbations: FD over the symmetric
  // part equals the symmetrized analytic gradient.
  RngStream rng(78, 0);
  const Tensor g = randn(rng, {3, 3});
  const Tensor sigma = matmul(g, g.transposed()) + Tensor::eye(3);
  Parameter p("sigma", sigma);
  {
    Tape tape;
    tape.backward(ad::sum(ad::cholesky(tape.param(p))));
  }
  const double h = 1e-6;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      Tensor up = sigma, down = sigma;
      up(i, j) += h;
      down(i, j) -= h;
      if (i != j) {
        up(j, i) += h;
        down(j, i) -= h;
      }
      const auto total = [](const Tensor& l) {
        double s = 0;
        for (double v : l.data()) s += v;
        return s;
      };
      const double numeric = (total(cholesky(up)) - total(cholesky(down))) / (2 * h);
      const double analytic = i == j ? p.grad(i, i) : p.grad(i, j) + p.grad(j, i);
      EXPECT_NEAR(analytic, numeric, 1e-4 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST(OpGradient, RandomInputsAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(seed, 11);
    const Tensor x = randn(rng, {4, 6});
    EXPECT_TRUE(grad_matches([](Tape& t, const V& v) { return weighted(t, ad::layer_norm_rows(ad::tanh(v[0]))); },
                             {x}));
    EXPECT_TRUE(grad_matches([](Tape& t, const V& v) { return weighted(t, ad::softmax_rows(ad::exp(v[0]))); },
                             {0.3 * x}));
  }
}

}  // namespace
}  // namespace scalabl
