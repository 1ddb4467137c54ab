#pragma once

// Reference (non-differentiable) separation metrics used for reporting and
// as independent oracles for the training objectives.

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace aetsep::metrics {

// Reported dB values are clamped to [-kDbClamp, kDbClamp].
inline constexpr double kDbClamp = 100.0;

// Whole-signal decomposition x = s_target + e_interf + e_artif over
// span{y, z}.
struct BssDecomposition {
  std::vector<double> s_target;
  std::vector<double> e_interf;
  std::vector<double> e_artif;
  // Projection of x onto span{y, z} is coef_target * y + coef_interf * z.
  double coef_target = 0.0;
  double coef_interf = 0.0;
};

struct BssScores {
  double sdr_db = 0.0;
  double sir_db = 0.0;
  double sar_db = 0.0;
};

BssDecomposition bss_decompose(std::span<const double> x,
                               std::span<const double> y,
                               std::span<const double> z);
BssScores bss_eval(std::span<const double> x, std::span<const double> y,
                   std::span<const double> z);

// 10 log10(num / den) clamped to +-kDbClamp (den == 0 -> +kDbClamp).
double ratio_db(double num, double den);

// STOI computed with plain loops (512-point DFT of 256-sample Hann frames,
// hop 128, 15 third-octave bands from 150 Hz, 30-frame context, -15 dB
// clip, no silent-frame removal). Shares no code with the differentiable
// objective so the two can check each other.
double stoi_reference(std::span<const double> x, std::span<const double> y,
                      double sample_rate);

struct MetricScores {
  std::string id;
  double sdr_db = 0.0;
  double sir_db = 0.0;
  double sar_db = 0.0;
  double stoi = 0.0;
};

struct Quantiles {
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
};

struct SeparationReport {
  std::vector<MetricScores> rows;
  Quantiles sdr_db;
  Quantiles sir_db;
  Quantiles sar_db;
  Quantiles stoi;
};

// Nearest-rank percentile: sorted[ceil(p / 100 * n) - 1].
double nearest_rank(std::vector<double> values, double percent);

SeparationReport aggregate(std::vector<MetricScores> rows);

nlohmann::json to_json(const SeparationReport& report);
std::string to_csv(const SeparationReport& report);
void write_report(const std::string& csv_path, const std::string& json_path,
                  const SeparationReport& report);

}  // namespace aetsep::metrics
