#pragma once

// Short-time analysis/synthesis built on the differentiation core.
//
// Channel layout for Fourier banks: rows [0, n_freq) are windowed cosines,
// rows [n_freq, 2 n_freq) windowed sines of the same frequencies. Magnitude
// pairing, masks and smoothing banks all index this layout.

#include <cstddef>
#include <string>
#include <utility>

#include "aetsep/autodiff.hpp"
#include "aetsep/tensor.hpp"
#include "aetsep/waveform.hpp"

namespace aetsep::dsp {

enum class FilterKind { kFourierFixed, kTrainable };

struct FilterBank {
  Tensor filters;  // K x N taps
  std::size_t stride = 1;
  FilterKind kind = FilterKind::kTrainable;
  // Analysis window for the Fourier kind; drives the overlap-add normalizer.
  Tensor window;

  std::size_t channels() const { return filters.dim(0); }
  std::size_t length() const { return filters.dim(1); }
};

enum class GridKind { kRaw, kModulation, kCarrier, kMask, kMagnitude, kPhasePair };

const char* to_string(GridKind kind);

// Frames x channels grid in a short-time domain plus what it represents.
struct LatentGrid {
  ad::Var values;
  GridKind kind = GridKind::kRaw;
};

// Floor used by the phase-pair division and the overlap-add normalizer.
inline constexpr double kGuardEpsilon = 1e-8;

// Periodic Hann window, w(t) = 0.5 - 0.5 cos(2 pi t / len).
Tensor hann_window(std::size_t len);

// Frequency count that gives exact overlap-add reconstruction: bins
// 0 .. window_len / 2 inclusive.
std::size_t fourier_bins(std::size_t window_len);

// Rows k < n_freq: w(t) cos(2 pi k t / window_len); rows n_freq + k:
// w(t) sin(2 pi k t / window_len). Requires an even window_len.
FilterBank build_fourier_filterbank(std::size_t n_freq, std::size_t window_len,
                                    std::size_t stride);

// Dual of build_fourier_filterbank for overlap-add synthesis: the same rows
// scaled by 1/N (DC and Nyquist) or 2/N (other bins), so that each
// synthesized frame is w(t)^2 x(t) and dividing by the overlap-add
// normalizer recovers x.
FilterBank build_fourier_synthesis_bank(std::size_t n_freq,
                                        std::size_t window_len,
                                        std::size_t stride);

// sum_n w(m - n h)^2 for m in [0, (frames - 1) h + N), clamped below at eps.
Tensor overlap_add_normalizer(const Tensor& window, std::size_t stride,
                              std::size_t frames);

// Rectangular averaging filters (1 / taps each), one row per channel.
Tensor rectangular_smoothing(std::size_t channels, std::size_t taps);

std::size_t frame_count(std::size_t signal_len, std::size_t filter_len,
                        std::size_t stride);
std::size_t synthesis_length(std::size_t frames, std::size_t filter_len,
                             std::size_t stride);

// Raw short-time transform X (conv1d of the signal with the filters).
LatentGrid analyze(const ad::Var& signal, const ad::Var& filters,
                   std::size_t stride);
Tensor analyze(const Waveform& x, const FilterBank& fb);

// magnitude[n, k] = sqrt(X[n, k]^2 + X[n, k + n_freq]^2);
// phase_pair = X / max(magnitude, eps) with the magnitude repeated over the
// (cos, sin) halves.
std::pair<LatentGrid, LatentGrid> magnitude_phase_pair(const LatentGrid& raw,
                                                       std::size_t n_freq);

// M = softplus(|X| filtered causally along frames by the smoothing bank).
LatentGrid smooth_rectify(const LatentGrid& raw, const ad::Var& smoothing);

// C = X / (M + eps).
LatentGrid carrier(const LatentGrid& raw, const LatentGrid& modulation);

// Transposed convolution back to a waveform. The Fourier kind divides by the
// overlap-add normalizer of `window`; the trainable kind does not.
ad::Var synthesize(const ad::Var& grid, const ad::Var& filters,
                   std::size_t stride, FilterKind kind, const Tensor& window);
Waveform synthesize(const Tensor& grid, const FilterBank& fb,
                    double sample_rate);

}  // namespace aetsep::dsp
