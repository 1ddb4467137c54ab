#include "aetsep/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "aetsep/error.hpp"

namespace aetsep::obj {

namespace {

void require_same_length(const ad::Var& a, const ad::Var& b, const char* what) {
  if (a.value().size() != b.value().size()) {
    throw ShapeError(std::string(what) + ": length mismatch (" +
                     std::to_string(a.value().size()) + " vs " +
                     std::to_string(b.value().size()) + ")");
  }
}

ad::Var flat(const ad::Var& v) {
  if (v.value().rank() == 1) return v;
  // Flatten [1 x L] style inputs through a zero-cost reshape op.
  const std::size_t n = v.value().size();
  return ad::make_op("flatten", v.value().reshaped({n}), {v}, [](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

void require_correlation(double sq, const char* what) {
  if (!(sq > kCorrelationFloor)) {
    throw DegenerateCorrelationError(
        std::string(what) + ": squared correlation " + std::to_string(sq) +
        " is below the floor; estimate is orthogonal to the reference");
  }
}

double self_dot(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

std::string lower(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

TermKind parse_term_name(const std::string& name) {
  std::string n = name;
  if (n.rfind("neg_", 0) == 0) n = n.substr(4);
  if (n == "mse") return TermKind::kMse;
  if (n == "sdr") return TermKind::kNegSdr;
  if (n == "sir") return TermKind::kNegSir;
  if (n == "sar") return TermKind::kNegSar;
  if (n == "stoi") return TermKind::kNegStoi;
  throw ConfigError("unknown loss term '" + name + "'");
}

const char* grammar_name(TermKind kind) {
  switch (kind) {
    case TermKind::kMse: return "mse";
    case TermKind::kNegSdr: return "sdr";
    case TermKind::kNegSir: return "sir";
    case TermKind::kNegSar: return "sar";
    case TermKind::kNegStoi: return "stoi";
  }
  return "?";
}

// STFT filters for STOI: window_len-sample Hann frames zero-padded to an
// fft_len-point transform, cos rows then sin rows for bins 0..fft_len/2.
Tensor stoi_analysis_bank(const StoiConfig& cfg) {
  const std::size_t bins = cfg.fft_len / 2 + 1;
  Tensor bank({2 * bins, cfg.window_len});
  for (std::size_t t = 0; t < cfg.window_len; ++t) {
    const double w =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) /
                             static_cast<double>(cfg.window_len));
    for (std::size_t k = 0; k < bins; ++k) {
      const double ph = 2.0 * std::numbers::pi *
                        static_cast<double>((k * t) % cfg.fft_len) /
                        static_cast<double>(cfg.fft_len);
      bank.at(k, t) = w * std::cos(ph);
      bank.at(bins + k, t) = w * std::sin(ph);
    }
  }
  return bank;
}

// Band envelopes sqrt(sum_{bins in band} |STFT|^2): [frames x bands].
ad::Var band_envelopes(const ad::Var& signal, const StoiConfig& cfg,
                       const Tensor& bank, const Tensor& band_t) {
  const std::size_t bins = cfg.fft_len / 2 + 1;
  auto spec = ad::conv1d(signal, ad::constant(bank), cfg.hop);
  auto power = ad::add(ad::square(ad::slice_cols(spec, 0, bins)),
                       ad::square(ad::slice_cols(spec, bins, 2 * bins)));
  return ad::sqrt(ad::matmul(power, ad::constant(band_t)));
}

// Clipped, normalized centered correlation of one context segment. Column
// data is read with `stride` between consecutive frames. If `gx` is
// non-null, adds `g` times the gradient w.r.t. x into it (same stride).
double segment_correlation(const double* x, const double* y, std::size_t stride,
                           std::size_t n, double clip, double* gx, double g,
                           std::vector<double>& scratch) {
  scratch.assign(3 * n, 0.0);
  double* xb = scratch.data();
  double* u = xb + n;
  double* v = u + n;
  double nx2 = 0.0, ny2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    nx2 += x[i * stride] * x[i * stride];
    ny2 += y[i * stride] * y[i * stride];
  }
  const double nx = std::sqrt(nx2);
  const double alpha = nx > 0.0 ? std::sqrt(ny2) / nx : 0.0;
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    xb[i] = std::min(alpha * x[i * stride], clip * y[i * stride]);
    mu += xb[i];
    mv += y[i * stride];
  }
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double nu2 = 0.0, nv2 = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = xb[i] - mu;
    v[i] = y[i * stride] - mv;
    nu2 += u[i] * u[i];
    nv2 += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (nu2 <= 0.0 || nv2 <= 0.0) return 0.0;
  const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  const double d = uv / (nu * nv);
  if (gx == nullptr || nx <= 0.0) return d;

  // d(d)/du, re-centered, routed through the min to the scaled branch.
  double gmean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = g * (v[i] / (nu * nv) - d * u[i] / nu2);  // reuse u for grad
    gmean += u[i];
  }
  gmean /= static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool scaled_branch = alpha * x[i * stride] <= clip * y[i * stride];
    xb[i] = scaled_branch ? u[i] - gmean : 0.0;  // reuse xb for grad wrt a
    s += x[i * stride] * xb[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    gx[i * stride] += alpha * (xb[i] - x[i * stride] * s / nx2);
  }
  return d;
}

ad::Var mean_segment_correlation(const ad::Var& xhat, Tensor yhat,
                                 std::size_t context, double clip) {
  const std::size_t frames = xhat.value().dim(0);
  const std::size_t bands = xhat.value().dim(1);
  const std::size_t segments = frames - context + 1;
  std::vector<double> scratch;
  double total = 0.0;
  for (std::size_t m = context - 1; m < frames; ++m) {
    const std::size_t start = (m + 1 - context) * bands;
    for (std::size_t j = 0; j < bands; ++j) {
      total += segment_correlation(xhat.value().data() + start + j,
                                   yhat.data() + start + j, bands, context,
                                   clip, nullptr, 0.0, scratch);
    }
  }
  const double count = static_cast<double>(segments * bands);
  return ad::make_op(
      "stoi_correlation", Tensor::scalar(total / count), {xhat},
      [y = std::move(yhat), context, clip, frames, bands, count](ad::Node& self) {
        ad::Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        const double go = self.grad[0] / count;
        std::vector<double> scratch;
        for (std::size_t m = context - 1; m < frames; ++m) {
          const std::size_t start = (m + 1 - context) * bands;
          for (std::size_t j = 0; j < bands; ++j) {
            segment_correlation(p.value.data() + start + j, y.data() + start + j,
                                bands, context, clip, g.data() + start + j, go,
                                scratch);
          }
        }
      });
}

}  // namespace

const char* to_string(TermKind kind) {
  switch (kind) {
    case TermKind::kMse: return "mse";
    case TermKind::kNegSdr: return "neg_sdr";
    case TermKind::kNegSir: return "neg_sir";
    case TermKind::kNegSar: return "neg_sar";
    case TermKind::kNegStoi: return "neg_stoi";
  }
  return "?";
}

std::string CompositeLoss::to_string() const {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) os << '+';
    if (terms[i].weight != 1.0) os << terms[i].weight << '*';
    os << grammar_name(terms[i].term.kind);
  }
  return os.str();
}

CompositeLoss parse_loss(std::string_view text) {
  const std::string s = lower(text);
  if (s.empty()) throw ConfigError("empty loss specification");
  CompositeLoss loss;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t plus = s.find('+', pos);
    const std::string piece =
        s.substr(pos, plus == std::string::npos ? std::string::npos : plus - pos);
    if (piece.empty()) throw ConfigError("malformed loss specification '" + std::string(text) + "'");
    WeightedTerm wt;
    const std::size_t star = piece.find('*');
    std::string name = piece;
    if (star != std::string::npos) {
      const std::string w = piece.substr(0, star);
      name = piece.substr(star + 1);
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), value);
      if (ec != std::errc() || ptr != w.data() + w.size() || !std::isfinite(value)) {
        throw ConfigError("bad loss weight '" + w + "'");
      }
      wt.weight = value;
    }
    wt.term.kind = parse_term_name(name);
    loss.terms.push_back(wt);
    if (plus == std::string::npos) break;
    pos = plus + 1;
  }
  return loss;
}

double StoiConfig::clip_factor() const {
  return 1.0 + std::pow(10.0, -beta_db / 20.0);
}

ad::Var mse_loss(const ad::Var& x, const ad::Var& y) {
  require_same_length(x, y, "mse_loss");
  return ad::mean(ad::square(ad::sub(flat(x), flat(y))));
}

ad::Var sdr_loss(const ad::Var& x, const ad::Var& y) {
  require_same_length(x, y, "sdr_loss");
  auto xf = flat(x);
  auto xy = ad::dot(xf, flat(y));
  require_correlation(xy.value()[0] * xy.value()[0], "sdr_loss");
  return ad::div(ad::dot(xf, xf), ad::square(xy));
}

ad::Var sir_loss(const ad::Var& x, const ad::Var& y, const ad::Var& z) {
  require_same_length(x, y, "sir_loss");
  require_same_length(x, z, "sir_loss");
  auto xf = flat(x);
  auto xy = ad::dot(xf, flat(y));
  require_correlation(xy.value()[0] * xy.value()[0], "sir_loss");
  return ad::div(ad::square(ad::dot(xf, flat(z))), ad::square(xy));
}

ad::Var sar_loss(const ad::Var& x, const ad::Var& y, const ad::Var& z) {
  require_same_length(x, y, "sar_loss");
  require_same_length(x, z, "sar_loss");
  const double yy = self_dot(y.value());
  const double zz = self_dot(z.value());
  if (yy <= 0.0 || zz <= 0.0) {
    throw DegenerateCorrelationError("sar_loss: source or interference is all zeros");
  }
  auto xf = flat(x);
  auto den = ad::add(ad::scale(ad::square(ad::dot(xf, flat(y))), 1.0 / yy),
                     ad::scale(ad::square(ad::dot(xf, flat(z))), 1.0 / zz));
  require_correlation(den.value()[0], "sar_loss");
  return ad::div(ad::dot(xf, xf), den);
}

Tensor third_octave_band_matrix(const StoiConfig& cfg, double sample_rate) {
  if (cfg.fft_len == 0 || cfg.fft_len % 2 != 0) {
    throw ConfigError("STOI fft length must be even and positive");
  }
  const std::size_t bins = cfg.fft_len / 2 + 1;
  Tensor bands({cfg.n_bands, bins});
  const double bin_hz = sample_rate / static_cast<double>(cfg.fft_len);
  for (std::size_t j = 0; j < cfg.n_bands; ++j) {
    const double cf = cfg.lowest_center_hz * std::pow(2.0, static_cast<double>(j) / 3.0);
    const double lo = cf * std::pow(2.0, -1.0 / 6.0);
    const double hi = cf * std::pow(2.0, 1.0 / 6.0);
    if (hi > cfg.highest_edge_hz) {
      throw ConfigError("third-octave band " + std::to_string(j) +
                        " extends past the configured ceiling");
    }
    std::size_t count = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= lo && f < hi) {
        bands.at(j, k) = 1.0;
        ++count;
      }
    }
    if (count == 0) {
      throw ConfigError("third-octave band " + std::to_string(j) + " (centre " +
                        std::to_string(cf) + " Hz) holds no FFT bin");
    }
  }
  return bands;
}

std::size_t stoi_frame_count(std::size_t len, const StoiConfig& cfg) {
  if (len < cfg.window_len) return 0;
  return (len - cfg.window_len) / cfg.hop + 1;
}

ad::Var stoi_value(const ad::Var& x, const ad::Var& y, const StoiConfig& cfg,
                   double sample_rate) {
  require_same_length(x, y, "stoi_value");
  const std::size_t frames = stoi_frame_count(x.value().size(), cfg);
  if (frames < cfg.context) {
    throw InputTooShortError("stoi: " + std::to_string(frames) +
                             " frames, need at least " +
                             std::to_string(cfg.context));
  }
  const Tensor bank = stoi_analysis_bank(cfg);
  const Tensor bands = third_octave_band_matrix(cfg, sample_rate);
  Tensor band_t({bands.dim(1), bands.dim(0)});
  band_t.matrix() = bands.matrix().transpose();
  auto xhat = band_envelopes(flat(x), cfg, bank, band_t);
  Tensor yhat = band_envelopes(ad::constant(flat(y).value()), cfg, bank, band_t).value();
  return mean_segment_correlation(xhat, std::move(yhat), cfg.context,
                                  cfg.clip_factor());
}

ad::Var term_value(TermKind kind, const ad::Var& x, const ad::Var& y,
                   const ad::Var& z, const LossContext& ctx) {
  switch (kind) {
    case TermKind::kMse: return mse_loss(x, y);
    case TermKind::kNegSdr: return sdr_loss(x, y);
    case TermKind::kNegSir: return sir_loss(x, y, z);
    case TermKind::kNegSar: return sar_loss(x, y, z);
    case TermKind::kNegStoi:
      return ad::neg(stoi_value(x, y, ctx.stoi, ctx.sample_rate));
  }
  throw ConfigError("unknown loss term");
}

ad::Var composite_eval(const CompositeLoss& loss, const ad::Var& x,
                       const ad::Var& y, const ad::Var& z,
                       const LossContext& ctx) {
  if (loss.terms.empty()) throw ConfigError("composite loss has no terms");
  ad::Var total;
  for (const auto& wt : loss.terms) {
    if (!(wt.term.norm_const > 0.0) || !std::isfinite(wt.weight)) {
      throw ConfigError("loss term needs a finite weight and positive norm constant");
    }
    auto t = ad::scale(term_value(wt.term.kind, x, y, z, ctx),
                       wt.weight / wt.term.norm_const);
    total = total ? ad::add(total, t) : t;
  }
  return total;
}

std::vector<double> term_means(const CompositeLoss& loss,
                               std::span<const LossSample> batch,
                               const LossContext& ctx) {
  if (batch.empty()) throw ConfigError("empty batch");
  std::vector<double> means(loss.terms.size(), 0.0);
  for (const auto& s : batch) {
    auto x = ad::constant(s.estimate);
    auto y = ad::constant(s.target);
    auto z = ad::constant(s.interference);
    for (std::size_t i = 0; i < loss.terms.size(); ++i) {
      const auto& t = loss.terms[i].term;
      means[i] += term_value(t.kind, x, y, z, ctx).value()[0] / t.norm_const;
    }
  }
  for (double& m : means) m /= static_cast<double>(batch.size());
  return means;
}

CompositeLoss calibrate_unity(const CompositeLoss& loss,
                              std::span<const LossSample> batch,
                              const LossContext& ctx) {
  CompositeLoss raw = loss;
  for (auto& wt : raw.terms) wt.term.norm_const = 1.0;
  const auto means = term_means(raw, batch, ctx);
  for (std::size_t i = 0; i < raw.terms.size(); ++i) {
    const double m = std::abs(means[i]);
    if (!(m >= kCorrelationFloor) || !std::isfinite(m)) {
      throw DegenerateCorrelationError(
          std::string("calibration: term ") + to_string(raw.terms[i].term.kind) +
          " is degenerate on the calibration batch");
    }
    raw.terms[i].term.norm_const = m;
  }
  return raw;
}

}  // namespace aetsep::obj
