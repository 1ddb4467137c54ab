#pragma once

#include <cstddef>
#include <vector>

namespace aetsep {

inline constexpr double kDefaultSampleRate = 16000.0;

// Mono audio, nominal amplitude range [-1, 1].
struct Waveform {
  std::vector<double> samples;
  double sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

double rms(const std::vector<double>& x);

}  // namespace aetsep
