#pragma once

// The seven end-to-end separation architectures:
//
//   stft                 Fourier magnitudes -> dense -> recombine with phase
//   stft_smoothed        fixed Fourier bank, smoothed modulation M, carrier C
//   stft_smoothed_mask   as above, sigmoid mask applied to M * C
//   aet / aet_mask       trainable analysis bank, synthesis uses the same taps
//   full_aet / _mask     independent trainable analysis and synthesis banks
//
// Direct variants estimate the source modulation (softplus output) and
// multiply it with the mixture carrier; mask variants estimate a (0, 1) mask
// and apply it to M * C.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "aetsep/autodiff.hpp"
#include "aetsep/transforms.hpp"
#include "aetsep/waveform.hpp"

namespace aetsep::model {

enum class Variant {
  kStft,
  kStftSmoothed,
  kStftSmoothedMask,
  kAet,
  kAetMask,
  kFullAet,
  kFullAetMask,
};

inline constexpr Variant kAllVariants[] = {
    Variant::kStft,    Variant::kStftSmoothed, Variant::kStftSmoothedMask,
    Variant::kAet,     Variant::kAetMask,      Variant::kFullAet,
    Variant::kFullAetMask};

const char* to_string(Variant v);
// Throws ConfigError for unknown names.
Variant parse_variant(std::string_view name);

bool is_mask(Variant v);
bool has_fixed_front_end(Variant v);  // stft, stft_smoothed, stft_smoothed_mask
bool shares_synthesis(Variant v);     // aet, aet_mask

struct ArchitectureSpec {
  Variant variant = Variant::kFullAetMask;
  std::size_t window_len = 1024;
  std::size_t stride = 16;
  std::size_t smoothing_len = 5;
  std::vector<std::size_t> hidden{512, 512, 512};
  std::uint64_t seed = 0;
  // Initialize trainable banks from the Fourier bank instead of uniform noise.
  bool fourier_init = false;
  double sample_rate = kDefaultSampleRate;

  // Throws ConfigError on an invalid combination.
  void validate() const;
  std::size_t n_freq() const { return dsp::fourier_bins(window_len); }
  std::size_t channels() const { return 2 * n_freq(); }
  std::size_t net_input_width() const;
};

// Replaces the dense stack output; used for identity diagnostics.
enum class NetOverride {
  kNone,
  kUnit,         // all-ones mask
  kPassThrough,  // net_out = net input (magnitude or modulation)
};

struct ForwardResult {
  ad::Var estimate;           // [L'] valid region, L' = (T - 1) h + N
  dsp::LatentGrid raw;        // X
  dsp::LatentGrid modulation; // M, or the magnitude for stft
  dsp::LatentGrid carrier;    // C, or the phase pair for stft
  dsp::LatentGrid net_out;    // dense stack output (mask or modulation)
  dsp::LatentGrid source;     // grid handed to synthesis
};

struct DenseLayer {
  ad::ParameterPtr weight;
  ad::ParameterPtr bias;
};

class SeparationModel {
 public:
  explicit SeparationModel(ArchitectureSpec spec);

  const ArchitectureSpec& spec() const { return spec_; }

  ForwardResult forward(const ad::Var& mixture,
                        NetOverride override_net = NetOverride::kNone) const;
  // Forward pass on plain samples; returns the valid-region estimate.
  Waveform separate(const Waveform& mixture,
                    NetOverride override_net = NetOverride::kNone) const;
  // Length of the estimate for a mixture of `len` samples.
  std::size_t output_length(std::size_t len) const;

  // Dense stack alone: [T x net_input_width] -> [T x net_output_width].
  ad::Var net(const ad::Var& input) const;

  // Every parameter once, in checkpoint order: analysis, synthesis (unless
  // shared), smoothing (absent for stft), dense layers by depth.
  std::vector<ad::ParameterPtr> parameters() const;
  std::vector<ad::ParameterPtr> trainable_parameters() const;

  const ad::ParameterPtr& analysis_bank() const { return analysis_; }
  const ad::ParameterPtr& synthesis_bank() const { return synthesis_; }
  const ad::ParameterPtr& smoothing_bank() const { return smoothing_; }
  const std::vector<DenseLayer>& dense_layers() const { return layers_; }
  std::size_t dense_parameter_count() const;

  // Deep copy with independent parameter storage.
  SeparationModel clone() const;

 private:
  ArchitectureSpec spec_;
  ad::ParameterPtr analysis_;
  ad::ParameterPtr synthesis_;
  ad::ParameterPtr smoothing_;
  std::vector<DenseLayer> layers_;
  Tensor window_;  // Fourier analysis window (fixed front ends only)
};

// Serialized "key=value" lines; round-trips through spec_from_text.
std::string spec_to_text(const ArchitectureSpec& spec);
ArchitectureSpec spec_from_text(const std::string& text);

// Named-tensor checkpoint (spec text + every parameter). Loading reproduces
// forward outputs bitwise.
void save_checkpoint(const std::string& path, const SeparationModel& model);
SeparationModel load_checkpoint(const std::string& path);

}  // namespace aetsep::model
