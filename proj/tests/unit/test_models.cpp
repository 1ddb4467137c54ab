#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <doctest.h>

#include "aetsep/error.hpp"
#include "aetsep/models.hpp"
#include "aetsep/objectives.hpp"
#include "aetsep/trainer.hpp"
#include "test_util.hpp"

using namespace aetsep;
using aetsep::testing::random_vector;
using model::Variant;

namespace {

model::ArchitectureSpec small_spec(Variant v) {
  model::ArchitectureSpec s;
  s.variant = v;
  s.window_len = 32;
  s.stride = 8;
  s.hidden = {8, 8};
  s.seed = 7;
  return s;
}

ad::Var mixture_var(std::size_t len, std::uint64_t seed) {
  return ad::constant(Tensor::vector(random_vector(len, seed)));
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b, std::size_t lo,
                 std::size_t hi) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

// One SDR-loss Adam step on a random mixture.
void train_one_step(model::SeparationModel& m) {
  const ad::Var x = mixture_var(256, 31);
  const auto fwd = m.forward(x);
  const std::size_t n = fwd.estimate.value().size();
  auto target = random_vector(256, 32);
  target.resize(n);
  ad::backward(obj::sdr_loss(fwd.estimate, ad::constant(Tensor::vector(target))));
  train::Adam opt(1e-2);
  opt.step(m.trainable_parameters());
}

// |DFT| of x at integer bin k.
double dft_magnitude(const std::vector<double>& x, double k) {
  std::complex<double> s = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    s += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * k * static_cast<double>(t) / n);
  }
  return std::abs(s);
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("variant names round trip and unknown names throw") {
  for (Variant v : model::kAllVariants) CHECK(model::parse_variant(model::to_string(v)) == v);
  CHECK_THROWS_AS(model::parse_variant("wavenet"), ConfigError);
}

TEST_CASE("dense parameter count matches the widths") {
  model::ArchitectureSpec s;
  s.variant = Variant::kStft;
  const model::SeparationModel m(s);
  const std::size_t k = s.n_freq();
  std::vector<std::size_t> widths{k, 512, 512, 512, k};
  std::size_t want = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) want += widths[i] * widths[i + 1] + widths[i + 1];
  CHECK(m.dense_parameter_count() == want);

  s.variant = Variant::kFullAetMask;
  const std::size_t k2 = s.channels();
  const model::SeparationModel m2(s);
  CHECK(m2.dense_parameter_count() ==
        k2 * 512 + 512 + 2 * (512 * 512 + 512) + 512 * k2 + k2);
}

TEST_CASE("aet keeps analysis and synthesis tied after training") {
  for (Variant v : {Variant::kAet, Variant::kAetMask}) {
    model::SeparationModel m(small_spec(v));
    CHECK(m.analysis_bank() == m.synthesis_bank());
    for (int i = 0; i < 3; ++i) train_one_step(m);
    CHECK(m.analysis_bank()->value().to_vector() == m.synthesis_bank()->value().to_vector());
  }
}

TEST_CASE("fixed front ends stay bitwise unchanged by training") {
  for (Variant v : {Variant::kStft, Variant::kStftSmoothed, Variant::kStftSmoothedMask}) {
    model::SeparationModel m(small_spec(v));
    const Tensor before = m.analysis_bank()->value();
    const Tensor smooth_before =
        m.smoothing_bank() ? m.smoothing_bank()->value() : Tensor();
    train_one_step(m);
    CHECK(m.analysis_bank()->value().to_vector() == before.to_vector());
    if (m.smoothing_bank()) CHECK(m.smoothing_bank()->value().to_vector() == smooth_before.to_vector());
  }
}

TEST_CASE("trainable parameter lists") {
  const model::SeparationModel stft(small_spec(Variant::kStft));
  for (const auto& p : stft.trainable_parameters()) {
    CHECK(p != stft.analysis_bank());
    CHECK(p != stft.synthesis_bank());
  }
  CHECK(stft.trainable_parameters().size() == 2 * stft.dense_layers().size());

  const model::SeparationModel full(small_spec(Variant::kFullAet));
  const auto fp = full.trainable_parameters();
  REQUIRE(fp.size() == 3 + 2 * full.dense_layers().size());
  CHECK(fp[0] == full.analysis_bank());
  CHECK(fp[1] == full.synthesis_bank());
  CHECK(fp[2] == full.smoothing_bank());
  CHECK(fp[3] == full.dense_layers()[0].weight);

  const model::SeparationModel aet(small_spec(Variant::kAet));
  auto taps = [](const model::SeparationModel& m) {
    std::size_t n = 0;
    for (const auto& p : m.trainable_parameters()) n += p->value().size();
    return n;
  };
  const auto& s = full.spec();
  CHECK(taps(full) - taps(aet) == s.channels() * s.window_len);
}

TEST_CASE("mask output lies in (0, 1)") {
  const model::SeparationModel m(small_spec(Variant::kFullAetMask));
  const auto fwd = m.forward(mixture_var(256, 33));
  for (double v : fwd.net_out.values.value().to_vector()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("unit mask reproduces the front-end round trip") {
  const std::size_t len = 2000;
  const ad::Var x = mixture_var(len, 34);
  for (Variant v : {Variant::kStftSmoothedMask, Variant::kAetMask, Variant::kFullAetMask}) {
    const std::string name = model::to_string(v);
    CAPTURE(name);
    const model::SeparationModel m(small_spec(v));
    const auto est = m.forward(x, model::NetOverride::kUnit).estimate.value().to_vector();
    std::vector<double> ref;
    if (model::has_fixed_front_end(v)) {
      ref = x.value().to_vector();
    } else {
      const auto& s = m.spec();
      const auto grid = dsp::analyze(x, m.analysis_bank()->var(), s.stride).values;
      ref = dsp::synthesize(grid, m.synthesis_bank()->var(), s.stride, dsp::FilterKind::kTrainable,
                            Tensor())
                .value()
                .to_vector();
    }
    REQUIRE(est.size() <= ref.size());
    CHECK(rel_error(est, ref, 32, est.size() - 32) < 1e-6);
  }
}

TEST_CASE("direct variants with pass-through output reproduce the round trip") {
  const ad::Var x = mixture_var(2000, 35);
  for (Variant v : {Variant::kStft, Variant::kStftSmoothed}) {
    const model::SeparationModel m(small_spec(v));
    const auto est = m.forward(x, model::NetOverride::kPassThrough).estimate.value().to_vector();
    CHECK(rel_error(est, x.value().to_vector(), 32, est.size() - 32) < 1e-6);
  }
}

TEST_CASE("mask commutes with the modulation-carrier split") {
  const model::SeparationModel m(small_spec(Variant::kAetMask));
  const auto fwd = m.forward(mixture_var(512, 36));
  const auto& mask = fwd.net_out.values.value();
  const auto& raw = fwd.raw.values.value();
  const auto& src = fwd.source.values.value();
  double err = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) err = std::max(err, std::abs(src[i] - mask[i] * raw[i]));
  CHECK(err < 1e-6);
}

TEST_CASE("frame count is shared by every grid") {
  for (Variant v : model::kAllVariants) {
    const model::SeparationModel m(small_spec(v));
    const auto fwd = m.forward(mixture_var(500, 37));
    const std::size_t t = fwd.raw.values.value().rows();
    CHECK(fwd.modulation.values.value().rows() == t);
    CHECK(fwd.carrier.values.value().rows() == t);
    CHECK(fwd.net_out.values.value().rows() == t);
    CHECK(fwd.estimate.value().size() == m.output_length(500));
    CHECK(m.output_length(500) == (t - 1) * 8 + 32);
  }
}

TEST_CASE("stft pass-through keeps tone energy") {
  model::ArchitectureSpec s = small_spec(Variant::kStft);
  s.window_len = 256;
  s.stride = 64;
  const model::SeparationModel m(s);
  const std::size_t len = 16000 + 256;
  std::vector<double> x(len);
  for (std::size_t t = 0; t < len; ++t) x[t] = 0.3 * std::sin(2 * std::numbers::pi * 250.0 * t / 16000.0);
  const auto est = m.forward(ad::constant(Tensor::vector(x)), model::NetOverride::kPassThrough)
                       .estimate.value()
                       .to_vector();
  REQUIRE(est.size() >= 16000 + 128);
  // One second starting half a window in: 250 Hz falls on bin 250.
  const std::vector<double> e(est.begin() + 128, est.begin() + 128 + 16000);
  const std::vector<double> r(x.begin() + 128, x.begin() + 128 + 16000);
  const double want = dft_magnitude(r, 250.0);
  CHECK(std::abs(dft_magnitude(e, 250.0) - want) / want < 0.01);
}

TEST_CASE("short mixtures throw") {
  const model::SeparationModel m(small_spec(Variant::kFullAet));
  CHECK_THROWS_AS(m.forward(mixture_var(31, 38)), InputTooShortError);
}

TEST_CASE("invalid specs throw") {
  auto s = small_spec(Variant::kAet);
  s.stride = 64;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec(Variant::kAet);
  s.hidden.clear();
  CHECK_THROWS_AS(model::SeparationModel{s}, ConfigError);
}

TEST_CASE("spec text and checkpoint round trip") {
  auto s = small_spec(Variant::kFullAetMask);
  s.fourier_init = true;
  const auto back = model::spec_from_text(model::spec_to_text(s));
  CHECK(model::spec_to_text(back) == model::spec_to_text(s));

  for (Variant v : model::kAllVariants) {
    const std::string name = model::to_string(v);
    CAPTURE(name);
    model::SeparationModel m(small_spec(v));
    train_one_step(m);
    const std::string path = aetsep::testing::scratch_dir("ckpt") + "/m.aet";
    model::save_checkpoint(path, m);
    const auto loaded = model::load_checkpoint(path);
    const ad::Var x = mixture_var(400, 39);
    CHECK(loaded.forward(x).estimate.value().to_vector() == m.forward(x).estimate.value().to_vector());
    CHECK(loaded.parameters().size() == m.parameters().size());
  }
}

TEST_CASE("clone is independent") {
  model::SeparationModel m(small_spec(Variant::kFullAet));
  const auto c = m.clone();
  const ad::Var x = mixture_var(300, 40);
  CHECK(c.forward(x).estimate.value().to_vector() == m.forward(x).estimate.value().to_vector());
  train_one_step(m);
  CHECK(c.forward(x).estimate.value().to_vector() != m.forward(x).estimate.value().to_vector());
}

}  // TEST_SUITE
