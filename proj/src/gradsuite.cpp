#include "aetsep/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "aetsep/autodiff.hpp"
#include "aetsep/models.hpp"
#include "aetsep/objectives.hpp"
#include "aetsep/transforms.hpp"

namespace aetsep::diag {

namespace {

using ad::ParameterPtr;
using ad::Var;

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Tensor::Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng_);
    return t;
  }

  // Values with magnitude in [lo, hi] and random sign.
  Tensor away_from_zero(Tensor::Shape shape, double lo, double hi) {
    Tensor t = uniform(std::move(shape), lo, hi);
    std::bernoulli_distribution sign(0.5);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (sign(rng_)) t[i] = -t[i];
    }
    return t;
  }

  ParameterPtr param(const std::string& name, Tensor value) {
    return std::make_shared<ad::Parameter>(name, std::move(value), true);
  }

  // Fixed linear read-out so every output element gets a distinct weight.
  // Deterministic, since f is re-evaluated for every probe.
  static Var readout(const Var& v) {
    Tensor w(v.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.7 * static_cast<double>(i) + 0.3);
    return ad::reduce_sum(ad::mul(v, ad::constant(std::move(w))));
  }

  void check(const std::string& group, const std::string& name,
             const std::function<Var()>& f, const std::vector<ParameterPtr>& params,
             double tolerance, std::size_t max_probes = 0,
             std::function<bool(std::size_t, std::size_t, double)> exclude = {}) {
    ad::GradCheckOptions o;
    o.delta = kDelta;
    o.tolerance = tolerance;
    o.scale_floor = 1e-7;
    o.max_probes_per_parameter = max_probes;
    o.exclude = std::move(exclude);
    const auto report = ad::grad_check(f, params, o);
    GradSuiteEntry e;
    e.group = group;
    e.name = name;
    e.tolerance = tolerance;
    for (const auto& r : report.entries) {
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
      e.probed += r.probed;
      e.excluded += r.excluded;
    }
    e.passed = report.passed();
    result.entries.push_back(std::move(e));
  }

  GradSuiteResult result;

 private:
  std::mt19937_64 rng_;
};

void op_checks(Suite& s) {
  const double tol = kOpTolerance;
  {
    auto sig = s.param("signal", s.uniform({40}, -1, 1));
    auto fil = s.param("filters", s.uniform({3, 8}, -1, 1));
    s.check("op", "conv1d", [&] { return s.readout(ad::conv1d(sig->var(), fil->var(), 3)); },
            {sig, fil}, tol);
  }
  {
    auto grid = s.param("grid", s.uniform({5, 3}, -1, 1));
    auto fil = s.param("filters", s.uniform({3, 8}, -1, 1));
    s.check("op", "transposed_conv1d",
            [&] { return s.readout(ad::transposed_conv1d(grid->var(), fil->var(), 3)); },
            {grid, fil}, tol);
  }
  {
    auto grid = s.param("grid", s.uniform({6, 4}, -1, 1));
    auto fil = s.param("filters", s.uniform({4, 3}, -1, 1));
    s.check("op", "causal_depthwise_conv",
            [&] { return s.readout(ad::causal_depthwise_conv(grid->var(), fil->var())); },
            {grid, fil}, tol);
  }
  {
    auto x = s.param("input", s.uniform({5, 4}, -1, 1));
    auto w = s.param("weight", s.uniform({4, 3}, -1, 1));
    auto b = s.param("bias", s.uniform({3}, -1, 1));
    s.check("op", "dense", [&] { return s.readout(ad::dense(x->var(), w->var(), b->var())); },
            {x, w, b}, tol);
  }
  {
    auto a = s.param("a", s.uniform({3, 4}, -1, 1));
    auto b = s.param("b", s.uniform({4, 2}, -1, 1));
    s.check("op", "matmul", [&] { return s.readout(ad::matmul(a->var(), b->var())); }, {a, b},
            tol);
  }

  using Unary = Var (*)(const Var&);
  struct UnaryCase {
    const char* name;
    Unary fn;
    Tensor value;
  };
  const std::vector<UnaryCase> unary = {
      {"abs", ad::abs, s.away_from_zero({20}, 0.05, 1.0)},
      {"softplus", ad::softplus, s.uniform({20}, -6, 6)},
      {"sigmoid", ad::sigmoid, s.uniform({20}, -6, 6)},
      {"square", ad::square, s.uniform({20}, -2, 2)},
      {"sqrt", ad::sqrt, s.uniform({20}, 0.2, 2)},
      {"neg", ad::neg, s.uniform({20}, -2, 2)},
      {"reduce_sum", ad::reduce_sum, s.uniform({4, 5}, -2, 2)},
      {"mean", ad::mean, s.uniform({4, 5}, -2, 2)},
      {"duplicate_cols", ad::duplicate_cols, s.uniform({4, 3}, -2, 2)},
  };
  for (const auto& c : unary) {
    auto a = s.param("a", c.value);
    const Unary fn = c.fn;
    s.check("op", c.name, [&] { return s.readout(fn(a->var())); }, {a}, tol);
  }

  using Binary = Var (*)(const Var&, const Var&);
  struct BinaryCase {
    const char* name;
    Binary fn;
    Tensor lhs, rhs;
  };
  const std::vector<BinaryCase> binary = {
      {"add", ad::add, s.uniform({4, 3}, -1, 1), s.uniform({4, 3}, -1, 1)},
      {"sub", ad::sub, s.uniform({4, 3}, -1, 1), s.uniform({4, 3}, -1, 1)},
      {"mul", ad::mul, s.uniform({4, 3}, -1, 1), s.uniform({4, 3}, -1, 1)},
      {"div", ad::div, s.uniform({4, 3}, -1, 1), s.away_from_zero({4, 3}, 0.5, 2.0)},
      {"dot", ad::dot, s.uniform({12}, -1, 1), s.uniform({12}, -1, 1)},
  };
  for (const auto& c : binary) {
    auto a = s.param("a", c.lhs);
    auto b = s.param("b", c.rhs);
    const Binary fn = c.fn;
    s.check("op", c.name, [&] { return s.readout(fn(a->var(), b->var())); }, {a, b}, tol);
  }
  {
    auto a = s.param("a", s.uniform({4, 3}, -1, 1));
    auto b = s.param("b", s.uniform({4, 3}, 0.5, 2.0));
    s.check("op", "div_guarded",
            [&] { return s.readout(ad::div_guarded(a->var(), b->var())); }, {a, b}, tol);
  }
  {
    const double floor = 0.1;
    auto a = s.param("a", s.uniform({30}, -1, 1));
    s.check("op", "clamp_min", [&] { return s.readout(ad::clamp_min(a->var(), floor)); }, {a},
            tol, 0, [floor](std::size_t, std::size_t, double v) {
              return std::abs(v - floor) < 1e-3;  // kink
            });
  }
  {
    auto a = s.param("a", s.uniform({10}, -1, 1));
    s.check("op", "scale", [&] { return s.readout(ad::scale(a->var(), -2.5)); }, {a}, tol);
    s.check("op", "add_scalar",
            [&] { return s.readout(ad::square(ad::add_scalar(a->var(), 0.7))); }, {a}, tol);
  }
  {
    auto a = s.param("a", s.uniform({4, 6}, -1, 1));
    s.check("op", "slice_cols", [&] { return s.readout(ad::slice_cols(a->var(), 1, 4)); }, {a},
            tol);
  }
}

void transform_checks(Suite& s) {
  const double tol = kOpTolerance;
  {
    auto raw = s.param("raw", s.away_from_zero({5, 6}, 0.1, 1.0));
    s.check("transform", "magnitude_phase_pair",
            [&] {
              auto [mag, phase] = dsp::magnitude_phase_pair(
                  {raw->var(), dsp::GridKind::kRaw}, 3);
              return ad::add(s.readout(mag.values), s.readout(phase.values));
            },
            {raw}, tol);
  }
  {
    auto raw = s.param("raw", s.away_from_zero({6, 4}, 0.1, 1.0));
    auto smooth = s.param("smoothing", s.uniform({4, 3}, 0.1, 1.0));
    s.check("transform", "smooth_rectify",
            [&] {
              return s.readout(
                  dsp::smooth_rectify({raw->var(), dsp::GridKind::kRaw}, smooth->var()).values);
            },
            {raw, smooth}, tol);
    s.check("transform", "carrier",
            [&] {
              const dsp::LatentGrid x{raw->var(), dsp::GridKind::kRaw};
              return s.readout(dsp::carrier(x, dsp::smooth_rectify(x, smooth->var())).values);
            },
            {raw, smooth}, tol);
  }
  {
    // Fourier synthesis banks are frozen and windowed; the overlap-add
    // normalizer vanishes where the window does.
    auto grid = s.param("grid", s.uniform({5, 10}, -1, 1));
    const Tensor window = dsp::hann_window(8);
    Tensor filters = s.uniform({10, 8}, -1, 1);
    for (std::size_t k = 0; k < 10; ++k) {
      for (std::size_t t = 0; t < 8; ++t) filters.at(k, t) *= window[t];
    }
    const Var fil = ad::constant(filters);
    s.check("transform", "synthesize_fourier",
            [&] {
              return s.readout(dsp::synthesize(grid->var(), fil, 2,
                                                dsp::FilterKind::kFourierFixed, window));
            },
            {grid}, tol);
  }
}

void model_checks(Suite& s) {
  const Tensor x = s.uniform({64}, -0.5, 0.5);
  const Tensor y = s.uniform({64}, -0.5, 0.5);
  for (auto v : model::kAllVariants) {
    model::ArchitectureSpec spec;
    spec.variant = v;
    spec.window_len = 16;
    spec.stride = 4;
    spec.smoothing_len = 3;
    spec.hidden = {6};
    spec.seed = 11;
    const model::SeparationModel m(spec);
    const auto params = m.trainable_parameters();
    s.check("model", model::to_string(v),
            [&] {
              auto est = m.forward(ad::constant(x)).estimate;
              const std::size_t n = est.value().size();
              Tensor ref({n});
              for (std::size_t i = 0; i < n; ++i) ref[i] = y[i];
              return obj::mse_loss(est, ad::constant(ref));
            },
            params, kOpTolerance);
  }
}

void loss_checks(Suite& s) {
  const double tol = kLossTolerance;
  obj::LossContext ctx;
  const std::size_t short_len = 256;
  {
    const Var y = ad::constant(s.uniform({short_len}, -1, 1));
    const Var z = ad::constant(s.uniform({short_len}, -1, 1));
    auto x = s.param("x", s.uniform({short_len}, -1, 1));
    for (auto kind : {obj::TermKind::kMse, obj::TermKind::kNegSdr, obj::TermKind::kNegSir,
                      obj::TermKind::kNegSar}) {
      s.check("loss", obj::to_string(kind),
              [&] { return obj::term_value(kind, x->var(), y, z, ctx); }, {x}, tol);
    }
  }
  {
    // STOI needs at least `context` frames.
    const std::size_t len =
        ctx.stoi.window_len + (ctx.stoi.context + 4) * ctx.stoi.hop;
    const Tensor yv = s.uniform({len}, -1, 1);
    Tensor xv = yv;
    const Tensor noise = s.uniform({len}, -1, 1);
    for (std::size_t i = 0; i < len; ++i) xv[i] += 0.7 * noise[i];
    const Var y = ad::constant(yv);
    const Var z = ad::constant(noise);
    auto x = s.param("x", xv);
    s.check("loss", obj::to_string(obj::TermKind::kNegStoi),
            [&] { return obj::term_value(obj::TermKind::kNegStoi, x->var(), y, z, ctx); }, {x},
            tol, 400);
  }
}

}  // namespace

bool GradSuiteResult::passed() const {
  for (const auto& e : entries) {
    if (!e.passed) return false;
  }
  return !entries.empty();
}

GradSuiteResult run_gradient_suite(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Suite s(seed);
  op_checks(s);
  transform_checks(s);
  model_checks(s);
  loss_checks(s);
  s.result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return std::move(s.result);
}

std::string format_gradient_suite(const GradSuiteResult& result) {
  std::string out;
  char line[256];
  for (const auto& e : result.entries) {
    std::snprintf(line, sizeof(line), "%s %s/%s max_rel=%.3e tol=%.0e probed=%zu excluded=%zu\n",
                  e.passed ? "PASS" : "FAIL", e.group.c_str(), e.name.c_str(), e.max_rel_error,
                  e.tolerance, e.probed, e.excluded);
    out += line;
  }
  std::snprintf(line, sizeof(line), "%s gradient suite (%zu checks, %.1f s)\n",
                result.passed() ? "PASS" : "FAIL", result.entries.size(), result.seconds);
  return out + line;
}

}  // namespace aetsep::diag
