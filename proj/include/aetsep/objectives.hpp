#pragma once

// Waveform-domain training objectives. x is the network output, y the
// source of interest, z the interference; y and z are constants.
//
// The ratio objectives are already oriented for minimization:
//   sdr:  <x,x> / <x,y>^2
//   sir:  <x,z>^2 / <x,y>^2
//   sar:  <x,x> / (<x,y>^2 / <y,y> + <x,z>^2 / <z,z>)
// and the STOI term contributes -stoi.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aetsep/autodiff.hpp"
#include "aetsep/tensor.hpp"

namespace aetsep::obj {

// Floor on squared correlations in the ratio objectives.
inline constexpr double kCorrelationFloor = 1e-12;

enum class TermKind { kMse, kNegSdr, kNegSir, kNegSar, kNegStoi };

const char* to_string(TermKind kind);

struct LossTerm {
  TermKind kind = TermKind::kNegSdr;
  double norm_const = 1.0;
};

struct WeightedTerm {
  double weight = 1.0;
  LossTerm term;
};

struct CompositeLoss {
  std::vector<WeightedTerm> terms;

  // Canonical grammar form, e.g. "0.75*sdr+0.25*stoi".
  std::string to_string() const;
};

// Parses "mse", "sdr", "0.75*sdr+0.25*stoi", "0.5*SIR + 0.5*SAR", ...
// Term names: mse, sdr, sir, sar, stoi (a "neg_" prefix is accepted).
// Throws ConfigError on malformed input.
CompositeLoss parse_loss(std::string_view text);

struct StoiConfig {
  std::size_t fft_len = 512;
  std::size_t window_len = 256;
  std::size_t hop = 128;
  std::size_t n_bands = 15;
  double lowest_center_hz = 150.0;
  double highest_edge_hz = 10000.0;
  std::size_t context = 30;
  double beta_db = -15.0;

  // 1 + 10^(-beta / 20).
  double clip_factor() const;
};

ad::Var mse_loss(const ad::Var& x, const ad::Var& y);
ad::Var sdr_loss(const ad::Var& x, const ad::Var& y);
ad::Var sir_loss(const ad::Var& x, const ad::Var& y, const ad::Var& z);
ad::Var sar_loss(const ad::Var& x, const ad::Var& y, const ad::Var& z);

// [n_bands x (fft_len / 2 + 1)] 0/1 matrix; band j covers bins whose centre
// frequency lies in [cf_j 2^(-1/6), cf_j 2^(1/6)), cf_j = lowest 2^(j/3).
// Bands above Nyquist are truncated to the available bins; an empty band
// is a ConfigError.
Tensor third_octave_band_matrix(const StoiConfig& cfg, double sample_rate);

// Differentiable STOI of x against the reference y (no silent-frame
// removal). Frames m >= context - 1 contribute; zero-variance context
// vectors contribute 0.
ad::Var stoi_value(const ad::Var& x, const ad::Var& y, const StoiConfig& cfg,
                   double sample_rate);

// Number of STFT frames STOI sees for a signal of `len` samples.
std::size_t stoi_frame_count(std::size_t len, const StoiConfig& cfg);

struct LossContext {
  StoiConfig stoi;
  double sample_rate = 16000.0;
};

ad::Var term_value(TermKind kind, const ad::Var& x, const ad::Var& y,
                   const ad::Var& z, const LossContext& ctx);

// sum_i weight_i * term_i(x, y, z) / norm_const_i
ad::Var composite_eval(const CompositeLoss& loss, const ad::Var& x,
                       const ad::Var& y, const ad::Var& z,
                       const LossContext& ctx);

struct LossSample {
  Tensor estimate;
  Tensor target;
  Tensor interference;
};

// Sets each norm_const to |mean raw term value| over the batch so that every
// term evaluates to magnitude 1 on it. Throws DegenerateCorrelationError if a
// term's mean magnitude is below kCorrelationFloor.
CompositeLoss calibrate_unity(const CompositeLoss& loss,
                              std::span<const LossSample> batch,
                              const LossContext& ctx);

// Mean of term_i / norm_const_i over the batch, one entry per term.
std::vector<double> term_means(const CompositeLoss& loss,
                               std::span<const LossSample> batch,
                               const LossContext& ctx);

}  // namespace aetsep::obj
