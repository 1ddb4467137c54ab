#include <cmath>
#include <numbers>
#include <vector>

#include <doctest.h>

#include "aetsep/error.hpp"
#include "aetsep/metrics.hpp"
#include "aetsep/objectives.hpp"
#include "test_util.hpp"

using namespace aetsep;
using aetsep::testing::inner;
using aetsep::testing::random_vector;

namespace {

ad::Var cv(const std::vector<double>& v) { return ad::constant(Tensor::vector(v)); }
double val(const ad::Var& v) { return v.value()[0]; }

std::vector<double> axpy(double a, const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> out(y);
  for (std::size_t i = 0; i < y.size(); ++i) out[i] += a * x[i];
  return out;
}

// Removes the projection of z onto y.
std::vector<double> orthogonalize(std::vector<double> z, const std::vector<double>& y) {
  return axpy(-inner(z, y) / inner(y, y), y, z);
}

// Harmonic signal with a slow amplitude envelope.
std::vector<double> speechlike(std::size_t n, std::uint64_t seed) {
  const auto r = random_vector(8, seed, 0.0, 1.0);
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double s = static_cast<double>(t) / 16000.0;
    const double env = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * (3.0 + r[0]) * s);
    double v = 0.0;
    for (int h = 1; h <= 12; ++h) v += std::sin(2 * std::numbers::pi * (140.0 + 20 * r[1]) * h * s + r[h % 8]) / h;
    x[t] = 0.1 * env * v;
  }
  return x;
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("mse") {
  const auto y = random_vector(64, 1);
  CHECK(val(obj::mse_loss(cv(y), cv(y))) == 0.0);
  std::vector<double> y1(y);
  for (auto& v : y1) v += 1.0;
  CHECK(val(obj::mse_loss(cv(y1), cv(y))) == doctest::Approx(1.0).epsilon(1e-14));
  const auto x = random_vector(64, 2);
  double s = 0.0;
  for (std::size_t i = 0; i < 64; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  CHECK(std::abs(val(obj::mse_loss(cv(x), cv(y))) - s / 64) < 1e-12);
  CHECK_THROWS_AS(obj::mse_loss(cv(x), cv(random_vector(63, 3))), ShapeError);
}

TEST_CASE("sdr loss") {
  const auto y = random_vector(128, 4);
  const double yy = inner(y, y);
  CHECK(val(obj::sdr_loss(cv(y), cv(y))) == doctest::Approx(1.0 / yy).epsilon(1e-14));
  std::vector<double> y2(y);
  for (auto& v : y2) v *= 2.0;
  CHECK(val(obj::sdr_loss(cv(y2), cv(y))) == doctest::Approx(1.0 / yy).epsilon(1e-14));
  const auto x = random_vector(128, 5);
  const double xy = inner(x, y);
  CHECK(std::abs(val(obj::sdr_loss(cv(x), cv(y))) - inner(x, x) / (xy * xy)) < 1e-12);
  const auto z = orthogonalize(random_vector(128, 6), y);
  CHECK_THROWS_AS(obj::sdr_loss(cv(z), cv(y)), DegenerateCorrelationError);
}

TEST_CASE("sdr loss grows with interference leakage") {
  const auto y = random_vector(256, 7);
  const auto z = orthogonalize(random_vector(256, 8), y);
  double prev = val(obj::sdr_loss(cv(y), cv(y)));
  for (double eps : {0.05, 0.1, 0.2, 0.4}) {
    const double cur = val(obj::sdr_loss(cv(axpy(eps, z, y)), cv(y)));
    CHECK(cur > prev);
    CHECK(val(obj::sdr_loss(cv(axpy(-eps, z, y)), cv(y))) == doctest::Approx(cur));
    prev = cur;
  }
}

TEST_CASE("sir loss") {
  const auto y = random_vector(128, 9);
  const auto z = orthogonalize(random_vector(128, 10), y);
  CHECK(std::abs(val(obj::sir_loss(cv(y), cv(y), cv(z)))) < 1e-24);
  const auto z2 = random_vector(128, 11);
  const double zz = inner(z2, z2), zy = inner(z2, y);
  CHECK(val(obj::sir_loss(cv(z2), cv(y), cv(z2))) == doctest::Approx(zz * zz / (zy * zy)).epsilon(1e-12));
  const auto x = random_vector(128, 12);
  std::vector<double> x3(x);
  for (auto& v : x3) v *= 3.0;
  const double base = val(obj::sir_loss(cv(x), cv(y), cv(z2)));
  CAPTURE(base);
  CHECK(std::abs(val(obj::sir_loss(cv(x3), cv(y), cv(z2))) - base) < 1e-12 * std::abs(base));
}

TEST_CASE("sar loss") {
  const auto y = random_vector(128, 13);
  const auto z = orthogonalize(random_vector(128, 14), y);
  CHECK(val(obj::sar_loss(cv(y), cv(y), cv(z))) == doctest::Approx(1.0).epsilon(1e-14));
  const auto x = random_vector(128, 15);
  const auto z2 = random_vector(128, 16);
  CHECK(std::abs(val(obj::sar_loss(cv(x), cv(y), cv(z2))) - val(obj::sar_loss(cv(x), cv(z2), cv(y)))) <
        1e-12);
  const double xy = inner(x, y), xz = inner(x, z2);
  const double want = inner(x, x) / (xy * xy / inner(y, y) + xz * xz / inner(z2, z2));
  CHECK(std::abs(val(obj::sar_loss(cv(x), cv(y), cv(z2))) - want) < 1e-12);
}

TEST_CASE("third octave bands") {
  obj::StoiConfig cfg;
  const Tensor b = obj::third_octave_band_matrix(cfg, 16000.0);
  REQUIRE(b.rows() == 15);
  REQUIRE(b.cols() == 257);
  for (std::size_t j = 0; j < 15; ++j) {
    double count = 0.0;
    for (std::size_t k = 0; k < 257; ++k) count += b.at(j, k);
    CHECK(count >= 1.0);
  }
  for (std::size_t k = 0; k < 257; ++k) {
    double owners = 0.0;
    for (std::size_t j = 0; j < 15; ++j) owners += b.at(j, k);
    CHECK(owners <= 1.0);
  }
  // Bin membership against the band edges; cf_3 is an octave above cf_0.
  for (std::size_t j = 0; j < 15; ++j) {
    const double cf = 150.0 * std::pow(2.0, j / 3.0);
    for (std::size_t k = 0; k < 257; ++k) {
      const double f = k * 16000.0 / 512.0;
      const bool inside = f >= cf * std::pow(2.0, -1.0 / 6) && f < cf * std::pow(2.0, 1.0 / 6);
      CHECK(b.at(j, k) == (inside ? 1.0 : 0.0));
    }
  }
  cfg.fft_len = 64;
  CHECK_THROWS_AS(obj::third_octave_band_matrix(cfg, 16000.0), ConfigError);
}

TEST_CASE("stoi self value, scaling and noise ordering") {
  const obj::StoiConfig cfg;
  const auto y = speechlike(32000, 17);
  CHECK(val(obj::stoi_value(cv(y), cv(y), cfg, 16000.0)) == doctest::Approx(1.0).epsilon(1e-9));
  std::vector<double> half(y);
  for (auto& v : half) v *= 0.5;
  CHECK(std::abs(val(obj::stoi_value(cv(half), cv(y), cfg, 16000.0)) - 1.0) < 1e-9);
  CHECK(std::abs(val(obj::stoi_value(cv(half), cv(y), cfg, 16000.0)) -
                 metrics::stoi_reference(half, y, 16000.0)) < 1e-9);

  auto noisy = [&](double snr_db, std::uint64_t seed) {
    auto n = random_vector(y.size(), seed);
    const double g = std::sqrt(inner(y, y) / inner(n, n) / std::pow(10.0, snr_db / 10.0));
    return axpy(g, n, y);
  };
  const double loud = val(obj::stoi_value(cv(noisy(0.0, 18)), cv(y), cfg, 16000.0));
  const double quiet = val(obj::stoi_value(cv(noisy(20.0, 19)), cv(y), cfg, 16000.0));
  CHECK(loud < quiet);
  CHECK(loud >= -1.0);
  CHECK(quiet <= 1.0);
}

TEST_CASE("stoi rejects short input") {
  const obj::StoiConfig cfg;
  const auto y = random_vector(20 * 128, 20);
  CHECK_THROWS_AS(obj::stoi_value(cv(y), cv(y), cfg, 16000.0), InputTooShortError);
  CHECK_THROWS_AS(metrics::stoi_reference(y, y, 16000.0), InputTooShortError);
}

TEST_CASE("loss grammar") {
  const auto l = obj::parse_loss("0.75*SDR + 0.25*neg_stoi");
  REQUIRE(l.terms.size() == 2);
  CHECK(l.terms[0].weight == 0.75);
  CHECK(l.terms[0].term.kind == obj::TermKind::kNegSdr);
  CHECK(l.terms[1].term.kind == obj::TermKind::kNegStoi);
  CHECK(obj::parse_loss(l.to_string()).to_string() == l.to_string());
  CHECK(obj::parse_loss("mse").terms.size() == 1);
  const auto sir_sar = obj::parse_loss("0.5*sir+0.5*sar");
  CHECK(sir_sar.terms[0].term.kind == obj::TermKind::kNegSir);
  CHECK(sir_sar.terms[1].term.kind == obj::TermKind::kNegSar);
  CHECK(sir_sar.terms[1].weight == 0.5);
  CHECK_THROWS_AS(obj::parse_loss(""), ConfigError);
  CHECK_THROWS_AS(obj::parse_loss("0.5*pesq"), ConfigError);
  CHECK_THROWS_AS(obj::parse_loss("sdr+"), ConfigError);
}

TEST_CASE("composite evaluation") {
  const obj::LossContext ctx;
  const auto y = speechlike(8000, 21);
  const auto z = speechlike(8000, 22);
  auto x = axpy(0.3, z, y);
  const auto n = random_vector(8000, 23, -0.01, 0.01);
  x = axpy(1.0, n, x);

  CHECK(val(obj::composite_eval(obj::parse_loss("sdr"), cv(x), cv(y), cv(z), ctx)) ==
        val(obj::sdr_loss(cv(x), cv(y))));
  const double sdr = val(obj::sdr_loss(cv(x), cv(y)));
  const double stoi = val(obj::stoi_value(cv(x), cv(y), ctx.stoi, ctx.sample_rate));
  const double got = val(obj::composite_eval(obj::parse_loss("0.75*sdr+0.25*stoi"), cv(x), cv(y), cv(z), ctx));
  CHECK(std::abs(got - (0.75 * sdr - 0.25 * stoi)) < 1e-12);

  auto scaled = obj::parse_loss("0.5*sir+0.5*sar");
  scaled.terms[0].term.norm_const = 4.0;
  const double want = 0.5 * val(obj::sir_loss(cv(x), cv(y), cv(z))) / 4.0 +
                      0.5 * val(obj::sar_loss(cv(x), cv(y), cv(z)));
  CHECK(std::abs(val(obj::composite_eval(scaled, cv(x), cv(y), cv(z), ctx)) - want) < 1e-12);
}

TEST_CASE("unity calibration") {
  const obj::LossContext ctx;
  auto batch_for = [](std::uint64_t seed) {
    std::vector<obj::LossSample> batch;
    for (std::uint64_t i = 0; i < 3; ++i) {
      const auto y = speechlike(6000, seed + 10 * i);
      const auto z = speechlike(6000, seed + 10 * i + 1);
      auto x = axpy(0.5, z, y);
      x = axpy(1.0, random_vector(6000, seed + i, -0.02, 0.02), x);
      batch.push_back({Tensor::vector(x), Tensor::vector(y), Tensor::vector(z)});
    }
    return batch;
  };
  const auto b1 = batch_for(100), b2 = batch_for(200);
  for (const char* spec : {"mse", "sdr", "0.75*sdr+0.25*stoi", "0.5*sir+0.5*sar"}) {
    CAPTURE(spec);
    const auto c1 = obj::calibrate_unity(obj::parse_loss(spec), b1, ctx);
    for (double m : obj::term_means(c1, b1, ctx)) CHECK(std::abs(std::abs(m) - 1.0) < 1e-9);
    const auto again = obj::calibrate_unity(c1, b1, ctx);
    for (std::size_t i = 0; i < c1.terms.size(); ++i) {
      CHECK(again.terms[i].term.norm_const == doctest::Approx(c1.terms[i].term.norm_const).epsilon(1e-14));
    }
    const auto c2 = obj::calibrate_unity(obj::parse_loss(spec), b2, ctx);
    CHECK(c2.terms[0].term.norm_const != c1.terms[0].term.norm_const);
    for (double m : obj::term_means(c2, b2, ctx)) CHECK(std::abs(std::abs(m) - 1.0) < 1e-9);
  }
}

TEST_CASE("neg sdr ranks candidates like the reference sdr") {
  const auto y = random_vector(512, 24);
  const auto z = orthogonalize(random_vector(512, 25), y);
  const auto n = random_vector(512, 26);
  std::vector<std::vector<double>> cands;
  for (double a : {0.0, 0.2, 0.5, 1.0}) {
    for (double b : {0.0, 0.1, 0.4}) {
      auto c = axpy(b, n, axpy(a, z, y));
      const double g = 1.0 / std::sqrt(inner(c, c));
      for (auto& v : c) v *= g;
      cands.push_back(c);
    }
  }
  std::size_t best_loss = 0, best_sdr = 0;
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double l = val(obj::sdr_loss(cv(cands[i]), cv(y)));
    const double s = metrics::bss_eval(cands[i], y, z).sdr_db;
    if (l < lo) lo = l, best_loss = i;
    if (s > hi) hi = s, best_sdr = i;
  }
  CHECK(best_loss == best_sdr);
}

}  // TEST_SUITE
