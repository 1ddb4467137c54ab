#include "aetsep/transforms.hpp"

#include <cmath>
#include <numbers>

#include "aetsep/error.hpp"

namespace aetsep::dsp {

const char* to_string(GridKind kind) {
  switch (kind) {
    case GridKind::kRaw: return "raw";
    case GridKind::kModulation: return "modulation";
    case GridKind::kCarrier: return "carrier";
    case GridKind::kMask: return "mask";
    case GridKind::kMagnitude: return "magnitude";
    case GridKind::kPhasePair: return "phase_pair";
  }
  return "unknown";
}

Tensor hann_window(std::size_t len) {
  Tensor w({len});
  for (std::size_t t = 0; t < len; ++t) {
    w[t] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) /
                                static_cast<double>(len));
  }
  return w;
}

std::size_t fourier_bins(std::size_t window_len) { return window_len / 2 + 1; }

namespace {

FilterBank fourier_bank(std::size_t n_freq, std::size_t window_len,
                        std::size_t stride, bool dual) {
  if (window_len == 0 || window_len % 2 != 0) {
    throw ConfigError("Fourier filterbank needs an even, positive window length");
  }
  if (stride == 0) throw ConfigError("filterbank stride must be positive");
  if (n_freq == 0 || n_freq > window_len / 2 + 1) {
    throw ConfigError("Fourier filterbank: n_freq must lie in [1, window_len/2 + 1]");
  }
  FilterBank fb;
  fb.stride = stride;
  fb.kind = FilterKind::kFourierFixed;
  fb.window = hann_window(window_len);
  fb.filters = Tensor({2 * n_freq, window_len});
  const double n = static_cast<double>(window_len);
  for (std::size_t k = 0; k < n_freq; ++k) {
    double weight = 1.0;
    if (dual) weight = (k == 0 || 2 * k == window_len) ? 1.0 / n : 2.0 / n;
    for (std::size_t t = 0; t < window_len; ++t) {
      // Reduce k*t modulo N first so large arguments stay exact.
      const double phase = 2.0 * std::numbers::pi *
                           static_cast<double>((k * t) % window_len) / n;
      const double w = weight * fb.window[t];
      fb.filters.at(k, t) = w * std::cos(phase);
      fb.filters.at(n_freq + k, t) = w * std::sin(phase);
    }
  }
  return fb;
}

}  // namespace

FilterBank build_fourier_filterbank(std::size_t n_freq, std::size_t window_len,
                                    std::size_t stride) {
  return fourier_bank(n_freq, window_len, stride, false);
}

FilterBank build_fourier_synthesis_bank(std::size_t n_freq,
                                        std::size_t window_len,
                                        std::size_t stride) {
  return fourier_bank(n_freq, window_len, stride, true);
}

std::size_t frame_count(std::size_t signal_len, std::size_t filter_len,
                        std::size_t stride) {
  if (stride == 0) throw ConfigError("stride must be positive");
  if (signal_len < filter_len) return 0;
  return (signal_len - filter_len) / stride + 1;
}

std::size_t synthesis_length(std::size_t frames, std::size_t filter_len,
                             std::size_t stride) {
  if (frames == 0) return 0;
  return (frames - 1) * stride + filter_len;
}

Tensor overlap_add_normalizer(const Tensor& window, std::size_t stride,
                              std::size_t frames) {
  const std::size_t n = window.size();
  Tensor norm({synthesis_length(frames, n, stride)});
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t t = 0; t < n; ++t) norm[f * stride + t] += window[t] * window[t];
  }
  for (double& v : norm.values()) v = std::max(v, kGuardEpsilon);
  return norm;
}

Tensor rectangular_smoothing(std::size_t channels, std::size_t taps) {
  if (taps == 0) throw ConfigError("smoothing length must be at least 1");
  return Tensor({channels, taps}, 1.0 / static_cast<double>(taps));
}

LatentGrid analyze(const ad::Var& signal, const ad::Var& filters,
                   std::size_t stride) {
  return {ad::conv1d(signal, filters, stride), GridKind::kRaw};
}

Tensor analyze(const Waveform& x, const FilterBank& fb) {
  auto sig = ad::constant(Tensor::vector(x.samples));
  return analyze(sig, ad::constant(fb.filters), fb.stride).values.value();
}

std::pair<LatentGrid, LatentGrid> magnitude_phase_pair(const LatentGrid& raw,
                                                       std::size_t n_freq) {
  const auto& shape = raw.values.shape();
  if (shape.size() != 2 || shape[1] != 2 * n_freq) {
    throw ShapeError("magnitude_phase_pair: grid " + shape_string(shape) +
                     " does not have 2 x " + std::to_string(n_freq) + " channels");
  }
  auto re = ad::slice_cols(raw.values, 0, n_freq);
  auto im = ad::slice_cols(raw.values, n_freq, 2 * n_freq);
  auto mag = ad::sqrt(ad::add(ad::square(re), ad::square(im)));
  auto denom = ad::duplicate_cols(ad::clamp_min(mag, kGuardEpsilon));
  auto phase = ad::div(raw.values, denom);
  return {LatentGrid{mag, GridKind::kMagnitude},
          LatentGrid{phase, GridKind::kPhasePair}};
}

LatentGrid smooth_rectify(const LatentGrid& raw, const ad::Var& smoothing) {
  auto smoothed = ad::causal_depthwise_conv(ad::abs(raw.values), smoothing);
  return {ad::softplus(smoothed), GridKind::kModulation};
}

LatentGrid carrier(const LatentGrid& raw, const LatentGrid& modulation) {
  return {ad::div_guarded(raw.values, modulation.values), GridKind::kCarrier};
}

ad::Var synthesize(const ad::Var& grid, const ad::Var& filters,
                   std::size_t stride, FilterKind kind, const Tensor& window) {
  auto y = ad::transposed_conv1d(grid, filters, stride);
  if (kind == FilterKind::kTrainable) return y;
  if (window.size() != filters.value().dim(1)) {
    throw ConfigError("synthesize: window length does not match filter length");
  }
  Tensor inv = overlap_add_normalizer(window, stride, grid.value().dim(0));
  for (double& v : inv.values()) v = 1.0 / v;
  return ad::mul(y, ad::constant(std::move(inv)));
}

Waveform synthesize(const Tensor& grid, const FilterBank& fb,
                    double sample_rate) {
  auto y = synthesize(ad::constant(grid), ad::constant(fb.filters), fb.stride,
                      fb.kind, fb.window);
  return Waveform{y.value().to_vector(), sample_rate};
}

}  // namespace aetsep::dsp
