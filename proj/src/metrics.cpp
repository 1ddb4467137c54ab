#include "aetsep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/SVD>

#include "aetsep/error.hpp"

namespace aetsep::metrics {

namespace {

double dotp(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double energy(const std::vector<double>& a) { return dotp(a, a); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double ratio_db(double num, double den) {
  if (den <= 0.0) return num > 0.0 ? kDbClamp : 0.0;
  if (num <= 0.0) return -kDbClamp;
  const double db = 10.0 * std::log10(num / den);
  return std::clamp(db, -kDbClamp, kDbClamp);
}

BssDecomposition bss_decompose(std::span<const double> x,
                               std::span<const double> y,
                               std::span<const double> z) {
  if (x.size() != y.size() || x.size() != z.size()) {
    throw ShapeError("bss_eval: estimate, target and interference lengths differ");
  }
  const double yy = dotp(y, y);
  if (!(yy > 0.0)) throw ConfigError("bss_eval: target signal is all zeros");
  const double zz = dotp(z, z);
  const double yz = dotp(y, z);
  const double xy = dotp(x, y);
  const double xz = dotp(x, z);

  // Pseudo-inverse of the 2x2 Gram matrix; singular values below
  // 1e-12 * largest are treated as zero.
  Eigen::Matrix2d gram;
  gram << yy, yz, yz, zz;
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(gram, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  Eigen::Vector2d inv_sv = Eigen::Vector2d::Zero();
  for (int i = 0; i < 2; ++i) {
    if (sv(i) > 1e-12 * sv(0)) inv_sv(i) = 1.0 / sv(i);
  }
  const Eigen::Vector2d coef =
      svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose() *
      Eigen::Vector2d(xy, xz);

  BssDecomposition d;
  d.coef_target = coef(0);
  d.coef_interf = coef(1);
  const double target_scale = xy / yy;
  const std::size_t n = x.size();
  d.s_target.resize(n);
  d.e_interf.resize(n);
  d.e_artif.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double proj = coef(0) * y[i] + coef(1) * z[i];
    d.s_target[i] = target_scale * y[i];
    d.e_interf[i] = proj - d.s_target[i];
    d.e_artif[i] = x[i] - proj;
  }
  return d;
}

BssScores bss_eval(std::span<const double> x, std::span<const double> y,
                   std::span<const double> z) {
  const auto d = bss_decompose(x, y, z);
  const std::size_t n = x.size();
  std::vector<double> distortion(n), target_plus_interf(n);
  for (std::size_t i = 0; i < n; ++i) {
    distortion[i] = d.e_interf[i] + d.e_artif[i];
    target_plus_interf[i] = d.s_target[i] + d.e_interf[i];
  }
  const double st = energy(d.s_target);
  BssScores s;
  s.sdr_db = ratio_db(st, energy(distortion));
  s.sir_db = ratio_db(st, energy(d.e_interf));
  s.sar_db = ratio_db(energy(target_plus_interf), energy(d.e_artif));
  return s;
}

double stoi_reference(std::span<const double> x, std::span<const double> y,
                      double sample_rate) {
  constexpr std::size_t kFrame = 256, kFft = 512, kHop = 128, kBands = 15,
                        kContext = 30;
  constexpr double kBetaDb = -15.0;
  if (x.size() != y.size()) throw ShapeError("stoi_reference: length mismatch");
  if (x.size() < kFrame || (x.size() - kFrame) / kHop + 1 < kContext) {
    throw InputTooShortError("stoi_reference: fewer than 30 frames");
  }
  const std::size_t frames = (x.size() - kFrame) / kHop + 1;
  const std::size_t bins = kFft / 2 + 1;

  // Twiddle table over one period of the 512-point transform.
  std::vector<double> cos_tab(kFft), sin_tab(kFft), hann(kFrame);
  for (std::size_t i = 0; i < kFft; ++i) {
    cos_tab[i] = std::cos(2.0 * std::numbers::pi * double(i) / double(kFft));
    sin_tab[i] = std::sin(2.0 * std::numbers::pi * double(i) / double(kFft));
  }
  for (std::size_t t = 0; t < kFrame; ++t) {
    hann[t] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * double(t) / double(kFrame)));
  }

  // Band membership per bin (-1 = none).
  std::vector<int> band_of(bins, -1);
  for (std::size_t b = 0; b < kBands; ++b) {
    const double centre = 150.0 * std::exp2(double(b) / 3.0);
    const double lower = centre / std::exp2(1.0 / 6.0);
    const double upper = centre * std::exp2(1.0 / 6.0);
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double hz = double(k) * sample_rate / double(kFft);
      if (hz >= lower && hz < upper) {
        band_of[k] = int(b);
        any = true;
      }
    }
    if (!any) throw ConfigError("stoi_reference: empty third-octave band");
  }

  auto envelopes = [&](std::span<const double> s) {
    std::vector<double> env(frames * kBands, 0.0);
    std::vector<double> seg(kFrame);
    for (std::size_t m = 0; m < frames; ++m) {
      for (std::size_t t = 0; t < kFrame; ++t) seg[t] = s[m * kHop + t] * hann[t];
      for (std::size_t k = 0; k < bins; ++k) {
        if (band_of[k] < 0) continue;
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < kFrame; ++t) {
          const std::size_t ph = (k * t) % kFft;
          re += seg[t] * cos_tab[ph];
          im += seg[t] * sin_tab[ph];
        }
        env[m * kBands + std::size_t(band_of[k])] += re * re + im * im;
      }
    }
    for (double& e : env) e = std::sqrt(e);
    return env;
  };
  const auto ex = envelopes(x);
  const auto ey = envelopes(y);

  const double ceiling = 1.0 + std::pow(10.0, -kBetaDb / 20.0);
  double sum = 0.0;
  std::size_t count = 0;
  double xs[kContext], ys[kContext];
  for (std::size_t m = kContext - 1; m < frames; ++m) {
    for (std::size_t b = 0; b < kBands; ++b) {
      double nx = 0.0, ny = 0.0;
      for (std::size_t i = 0; i < kContext; ++i) {
        const std::size_t f = m + 1 - kContext + i;
        xs[i] = ex[f * kBands + b];
        ys[i] = ey[f * kBands + b];
        nx += xs[i] * xs[i];
        ny += ys[i] * ys[i];
      }
      const double gain = nx > 0.0 ? std::sqrt(ny) / std::sqrt(nx) : 0.0;
      double mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < kContext; ++i) {
        xs[i] = std::min(gain * xs[i], ceiling * ys[i]);
        mx += xs[i];
        my += ys[i];
      }
      mx /= double(kContext);
      my /= double(kContext);
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (std::size_t i = 0; i < kContext; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
      }
      if (sxx > 0.0 && syy > 0.0) sum += sxy / (std::sqrt(sxx) * std::sqrt(syy));
      ++count;
    }
  }
  return sum / double(count);
}

double nearest_rank(std::vector<double> values, double percent) {
  if (values.empty()) throw ConfigError("nearest_rank: no values");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

SeparationReport aggregate(std::vector<MetricScores> rows) {
  if (rows.empty()) throw ConfigError("aggregate: no rows");
  SeparationReport r;
  auto quantiles = [&](double MetricScores::*field) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& row : rows) v.push_back(row.*field);
    return Quantiles{nearest_rank(v, 50.0), nearest_rank(v, 25.0),
                     nearest_rank(v, 75.0)};
  };
  r.sdr_db = quantiles(&MetricScores::sdr_db);
  r.sir_db = quantiles(&MetricScores::sir_db);
  r.sar_db = quantiles(&MetricScores::sar_db);
  r.stoi = quantiles(&MetricScores::stoi);
  r.rows = std::move(rows);
  return r;
}

nlohmann::json to_json(const SeparationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"id", row.id},
                    {"sdr_db", row.sdr_db},
                    {"sir_db", row.sir_db},
                    {"sar_db", row.sar_db},
                    {"stoi", row.stoi}});
  }
  auto q = [](const Quantiles& v) {
    return nlohmann::json{{"median", v.median}, {"p25", v.p25}, {"p75", v.p75}};
  };
  return {{"rows", rows},
          {"aggregates",
           {{"sdr_db", q(report.sdr_db)},
            {"sir_db", q(report.sir_db)},
            {"sar_db", q(report.sar_db)},
            {"stoi", q(report.stoi)}}},
          {"db_clamp", kDbClamp}};
}

std::string to_csv(const SeparationReport& report) {
  std::ostringstream os;
  os << "id,sdr_db,sir_db,sar_db,stoi\n";
  for (const auto& row : report.rows) {
    os << row.id << ',' << fmt(row.sdr_db) << ',' << fmt(row.sir_db) << ','
       << fmt(row.sar_db) << ',' << fmt(row.stoi) << '\n';
  }
  return os.str();
}

void write_report(const std::string& csv_path, const std::string& json_path,
                  const SeparationReport& report) {
  if (!csv_path.empty()) {
    std::ofstream f(csv_path);
    if (!f) throw IoError("cannot write " + csv_path);
    f << to_csv(report);
  }
  if (!json_path.empty()) {
    std::ofstream f(json_path);
    if (!f) throw IoError("cannot write " + json_path);
    f << to_json(report).dump(2) << '\n';
  }
}

}  // namespace aetsep::metrics
