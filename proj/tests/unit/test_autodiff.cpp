#include <cmath>
#include <memory>
#include <vector>

#include <doctest.h>

#include "aetsep/autodiff.hpp"
#include "aetsep/error.hpp"
#include "test_util.hpp"

using namespace aetsep;
using ad::Var;
using aetsep::testing::inner;
using aetsep::testing::random_tensor;
using aetsep::testing::random_vector;

TEST_SUITE("autodiff") {

TEST_CASE("conv1d self inner product") {
  const Tensor f = random_tensor({1, 8}, 1);
  const Var out = ad::conv1d(ad::constant(Tensor::vector(f.to_vector())), ad::constant(f), 8);
  REQUIRE(out.shape() == Tensor::Shape{1, 1});
  CHECK(out.value()[0] == doctest::Approx(inner(f.to_vector(), f.to_vector())).epsilon(1e-14));
}

TEST_CASE("conv1d zero signal gives zero output") {
  const Var out = ad::conv1d(ad::constant(Tensor({64})), ad::constant(random_tensor({2, 8}, 2)), 4);
  for (double v : out.value().to_vector()) CHECK(v == 0.0);
}

TEST_CASE("conv1d matches nested loops") {
  const auto x = random_vector(64, 3);
  const Tensor f = random_tensor({2, 8}, 4);
  const std::size_t h = 4, n_taps = 8, frames = (64 - 8) / 4 + 1;
  const Var out = ad::conv1d(ad::constant(Tensor::vector(x)), ad::constant(f), h);
  REQUIRE(out.shape() == Tensor::Shape{frames, 2});
  double err = 0.0;
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::size_t k = 0; k < 2; ++k) {
      double s = 0.0;
      for (std::size_t t = 0; t < n_taps; ++t) s += x[n * h + t] * f.at(k, t);
      err = std::max(err, std::abs(s - out.value().at(n, k)));
    }
  }
  CHECK(err < 1e-12);
}

TEST_CASE("conv1d errors") {
  const Var f = ad::constant(random_tensor({2, 8}, 5));
  CHECK_THROWS_AS(ad::conv1d(ad::constant(Tensor({7})), f, 1), InputTooShortError);
  CHECK_THROWS_AS(ad::conv1d(ad::constant(Tensor({16})), f, 0), ConfigError);
}

TEST_CASE("conv1d is linear") {
  const auto x = random_vector(64, 6), y = random_vector(64, 7);
  const Var f = ad::constant(random_tensor({3, 8}, 8));
  const double a = 0.7, b = -1.9;
  std::vector<double> xy(64);
  for (std::size_t i = 0; i < 64; ++i) xy[i] = a * x[i] + b * y[i];
  const auto cx = ad::conv1d(ad::constant(Tensor::vector(x)), f, 4).value();
  const auto cy = ad::conv1d(ad::constant(Tensor::vector(y)), f, 4).value();
  const auto cxy = ad::conv1d(ad::constant(Tensor::vector(xy)), f, 4).value();
  double err = 0.0;
  for (std::size_t i = 0; i < cxy.size(); ++i) {
    err = std::max(err, std::abs(cxy[i] - (a * cx[i] + b * cy[i])));
  }
  CHECK(err < 1e-12);
}

TEST_CASE("transposed_conv1d single frame is weighted filter sum") {
  const Tensor f = random_tensor({3, 8}, 9);
  const Tensor g({1, 3}, std::vector<double>{0.5, -2.0, 1.5});
  const Var out = ad::transposed_conv1d(ad::constant(g), ad::constant(f), 4);
  REQUIRE(out.value().size() == 8);
  for (std::size_t t = 0; t < 8; ++t) {
    const double want = 0.5 * f.at(0, t) - 2.0 * f.at(1, t) + 1.5 * f.at(2, t);
    CHECK(out.value()[t] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("transposed_conv1d zero grid and shape errors") {
  const Var f = ad::constant(random_tensor({2, 8}, 10));
  const Var out = ad::transposed_conv1d(ad::constant(Tensor({5, 2})), f, 4);
  CHECK(out.value().size() == 4 * 4 + 8);
  for (double v : out.value().to_vector()) CHECK(v == 0.0);
  CHECK_THROWS_AS(ad::transposed_conv1d(ad::constant(Tensor({5, 3})), f, 4), ConfigError);
}

TEST_CASE("conv1d and transposed_conv1d are adjoint") {
  const Tensor x = Tensor::vector(random_vector(64, 11));
  const Tensor f = random_tensor({2, 8}, 12);
  const std::size_t frames = (64 - 8) / 4 + 1;
  const Tensor g = random_tensor({frames, 2}, 13);
  const auto fx = ad::conv1d(ad::constant(x), ad::constant(f), 4).value();
  const auto tg = ad::transposed_conv1d(ad::constant(g), ad::constant(f), 4).value();
  REQUIRE(tg.size() == 64);
  CHECK(std::abs(inner(fx.to_vector(), g.to_vector()) - inner(x.to_vector(), tg.to_vector())) < 1e-10);
}

TEST_CASE("elementwise values") {
  const Var z = ad::constant(Tensor::vector({0.0}));
  CHECK(ad::softplus(z).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(ad::sigmoid(z).value()[0] == 0.5);
  const Var p = ad::variable(Tensor::vector({-2.0, 0.0, 3.0}));
  ad::backward(ad::reduce_sum(ad::abs(p)));
  CHECK(p.grad()[0] == -1.0);
  CHECK(p.grad()[1] == 0.0);
  CHECK(p.grad()[2] == 1.0);
  const Var q = ad::variable(Tensor::vector({0.0}));
  ad::backward(ad::reduce_sum(ad::sigmoid(q)));
  CHECK(q.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("div_guarded adds epsilon to the denominator") {
  const Var a = ad::constant(Tensor::vector({1.0, 2.0}));
  const Var b = ad::constant(Tensor::vector({0.0, 4.0}));
  const auto out = ad::div_guarded(a, b).value();
  CHECK(out[0] == doctest::Approx(1.0 / ad::kDivEpsilon));
  CHECK(out[1] == doctest::Approx(2.0 / (4.0 + ad::kDivEpsilon)).epsilon(1e-15));
}

TEST_CASE("elementwise shape mismatch throws") {
  const Var a = ad::constant(Tensor({3}));
  const Var b = ad::constant(Tensor({4}));
  CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  CHECK_THROWS_AS(ad::mul(a, b), ShapeError);
  CHECK_THROWS_AS(ad::dot(a, b), ShapeError);
}

TEST_CASE("dense identity, zero input and loop oracle") {
  const Tensor in = random_tensor({2, 3}, 14);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const auto same = ad::dense(ad::constant(in), ad::constant(eye), ad::constant(Tensor({3}))).value();
  CHECK(same.to_vector() == in.to_vector());

  const Tensor w = random_tensor({3, 2}, 15);
  const Tensor b = Tensor::vector({0.25, -0.75});
  const auto zero_in = ad::dense(ad::constant(Tensor({2, 3})), ad::constant(w), ad::constant(b)).value();
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(zero_in.at(r, 0) == 0.25);
    CHECK(zero_in.at(r, 1) == -0.75);
  }

  const auto out = ad::dense(ad::constant(in), ad::constant(w), ad::constant(b)).value();
  double err = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      double s = b[c];
      for (std::size_t i = 0; i < 3; ++i) s += in.at(r, i) * w.at(i, c);
      err = std::max(err, std::abs(s - out.at(r, c)));
    }
  }
  CHECK(err < 1e-12);
  CHECK_THROWS_AS(ad::dense(ad::constant(in), ad::constant(Tensor({4, 2})), ad::constant(b)),
                  ConfigError);
}

TEST_CASE("backward analytic gradients") {
  const Tensor p0 = Tensor::vector(random_vector(7, 16));
  const Var p = ad::variable(p0);
  ad::backward(ad::dot(p, p));
  for (std::size_t i = 0; i < 7; ++i) CHECK(p.grad()[i] == 2.0 * p0[i]);

  const Var q = ad::variable(p0);
  ad::backward(ad::reduce_sum(ad::sigmoid(q)));
  for (std::size_t i = 0; i < 7; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-p0[i]));
    CHECK(q.grad()[i] == doctest::Approx(s * (1.0 - s)).epsilon(1e-14));
  }
}

TEST_CASE("backward requires a scalar root") {
  const Var p = ad::variable(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(ad::backward(ad::square(p)), ShapeError);
}

TEST_CASE("ops reject non-finite results") {
  const Var big = ad::constant(Tensor::vector({1e200}));
  CHECK_THROWS_AS(ad::square(big), NumericError);
}

TEST_CASE("frozen parameter keeps no gradient") {
  auto frozen = std::make_shared<ad::Parameter>("f", Tensor::vector({1.0, 2.0}), false);
  auto live = std::make_shared<ad::Parameter>("l", Tensor::vector({3.0, 4.0}), true);
  ad::backward(ad::dot(frozen->var(), live->var()));
  CHECK(frozen->grad().empty());
  CHECK(live->grad().to_vector() == std::vector<double>{1.0, 2.0});
  live->zero_grad();
  CHECK(live->grad()[0] == 0.0);
}

TEST_CASE("grad_check on quadratic and softplus chain") {
  auto p = std::make_shared<ad::Parameter>("p", Tensor::vector(random_vector(6, 17)), true);
  const std::vector<ad::ParameterPtr> params{p};
  const auto quad = ad::grad_check([&] { return ad::dot(p->var(), p->var()); }, params);
  CHECK(quad.max_rel_error() < 1e-9);

  ad::GradCheckOptions o;
  o.delta = 1e-6;
  o.tolerance = 1e-6;
  const auto chain = ad::grad_check(
      [&] { return ad::reduce_sum(ad::softplus(ad::scale(ad::softplus(p->var()), 1.7))); },
      params, o);
  CHECK(chain.passed());
  CHECK(chain.max_rel_error() < 1e-6);
}

TEST_CASE("grad_check excludes the abs kink") {
  auto p = std::make_shared<ad::Parameter>("p", Tensor::vector({0.0, 0.4, -0.9}), true);
  const std::vector<ad::ParameterPtr> params{p};
  ad::GradCheckOptions o;
  o.exclude = [](std::size_t, std::size_t, double v) { return v == 0.0; };
  const auto r = ad::grad_check([&] { return ad::reduce_sum(ad::abs(p->var())); }, params, o);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].excluded == 1);
  CHECK(r.entries[0].probed == 2);
  CHECK(r.passed());
}

TEST_CASE("identical inputs give bitwise identical forward values") {
  auto run = [] {
    const Var x = ad::constant(Tensor::vector(random_vector(64, 18)));
    const Var f = ad::constant(random_tensor({4, 8}, 19));
    return ad::softplus(ad::abs(ad::conv1d(x, f, 2))).value().to_vector();
  };
  CHECK(run() == run());
}

}  // TEST_SUITE
