#pragma once

// Speaker corpora, 0 dB two-speaker mixtures, and a synthetic toy corpus.
//
// Corpus layout (real or synthetic):
//   root/manifest.json
//   root/<speaker-id>/<file>.wav
// manifest.json:
//   {"sample_rate": 16000,
//    "speakers": [{"id": "B00", "class": "B", "split": "train",
//                  "files": ["B00/B00_000.wav", ...]}, ...]}
// File paths are relative to root. Every speaker belongs to exactly one
// split ("train" or "test"), so the two speaker sets are disjoint.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "aetsep/waveform.hpp"

namespace aetsep::data {

// Every snippet is scaled to this RMS before mixing (0 dB mixtures).
inline constexpr double kReferenceRms = 0.05;

struct SpeakerEntry {
  std::string id;
  std::string speaker_class;
  std::string split;
  std::vector<std::string> files;
};

class SpeakerCorpus {
 public:
  SpeakerCorpus(std::string root, double sample_rate,
                std::vector<SpeakerEntry> speakers);

  // Reads root/manifest.json. Throws IoError / ConfigError.
  static SpeakerCorpus open(const std::string& root);
  void write_manifest() const;

  const std::string& root() const { return root_; }
  double sample_rate() const { return sample_rate_; }
  const std::vector<SpeakerEntry>& speakers() const { return speakers_; }
  const SpeakerEntry& speaker(std::string_view id) const;
  // Sorted ids matching split and class; an empty filter matches all.
  std::vector<std::string> speaker_ids(std::string_view split,
                                       std::string_view speaker_class) const;

  // Decoded utterance, cached after the first load. Thread-safe. Throws
  // IoError when the file rate differs from the corpus rate.
  std::shared_ptr<const Waveform> utterance(std::string_view speaker_id,
                                            std::size_t index) const;

 private:
  struct Cache;
  std::string root_;
  double sample_rate_;
  std::vector<SpeakerEntry> speakers_;
  std::shared_ptr<Cache> cache_;
};

struct MixtureExample {
  std::string id;
  Waveform mixture;
  Waveform target;
  Waveform interference;
  // Provenance.
  std::uint64_t seed = 0;
  std::string target_speaker;
  std::string interference_speaker;
  std::string target_file;
  std::string interference_file;
  std::size_t target_offset = 0;
  std::size_t interference_offset = 0;
};

// Draws an utterance and a snippet offset per speaker from `seed`, scales
// both snippets to kReferenceRms and sums them. Snippets that are silent
// are redrawn. Throws ConfigError if a speaker has no utterance of at least
// dur_s seconds, NumericError if the mixture would clip.
MixtureExample make_mixture(const SpeakerCorpus& corpus,
                            std::string_view target_speaker,
                            std::string_view interference_speaker,
                            double dur_s, std::uint64_t seed);

// Builds a 0 dB example from whole waveforms (truncated to the shorter).
MixtureExample mix_pair(std::string id, const Waveform& target,
                        const Waveform& interference);

// Mixture recipe: which speakers, and the example seed handed to
// make_mixture.
struct MixtureDraw {
  std::string target_speaker;
  std::string interference_speaker;
  std::uint64_t seed = 0;
};

struct DatasetOptions {
  double minutes = 10.0;
  std::size_t batch_size = 8;
  double snippet_s = 2.0;
  std::uint64_t seed = 0;
  std::string split = "train";
  std::string target_class = "B";
  std::string interference_class = "A";
};

// A fixed set of ceil(minutes * 60 / snippet_s) mixtures, drawn with
// replacement over speaker pairs and utterances. Every epoch visits the
// same examples in the same order.
class MixtureStream {
 public:
  MixtureStream(std::shared_ptr<const SpeakerCorpus> corpus,
                DatasetOptions options);

  const DatasetOptions& options() const { return options_; }
  std::size_t example_count() const { return draws_.size(); }
  std::size_t batches_per_epoch() const;
  const std::vector<MixtureDraw>& draws() const { return draws_; }

  MixtureExample example(std::size_t index) const;
  // The last batch of an epoch may be short.
  std::vector<MixtureExample> batch(std::size_t index) const;
  std::vector<MixtureExample> all() const;

 private:
  std::shared_ptr<const SpeakerCorpus> corpus_;
  DatasetOptions options_;
  std::vector<MixtureDraw> draws_;
};

MixtureStream dataset_iter(std::shared_ptr<const SpeakerCorpus> corpus,
                           double minutes, std::size_t batch_size,
                           std::uint64_t seed);

// Test manifests: a JSON list of wav triplets or (target, interference)
// pairs, paths relative to the manifest directory.
//   {"examples": [{"id": "...", "mixture": "m.wav", "target": "t.wav",
//                  "interference": "i.wav"}, ...]}
// Entries without "mixture" are mixed on the fly with mix_pair.
std::vector<MixtureExample> load_test_manifest(const std::string& path);
// Writes <dir>/<id>_{mix,target,interf}.wav and <dir>/manifest.json.
void write_test_manifest(const std::string& dir,
                         const std::vector<MixtureExample>& examples);

// ---------------------------------------------------------------------------
// Synthetic toy speakers.

struct ToySpeakerProfile {
  std::string id;
  std::string speaker_class;
  double pitch_lo_hz = 0.0;
  double pitch_hi_hz = 0.0;
  // Vowel targets, three resonance centres each.
  std::vector<std::vector<double>> vowels_hz;
  std::vector<double> bandwidths_hz;
  double fricative_hz = 0.0;
  // Share of aspiration noise relative to the harmonic part.
  double noise_mix = 0.0;
  double spectral_tilt = 1.0;
  double harmonic_ceiling_hz = 6000.0;
  std::uint64_t seed = 0;
};

struct ToyCorpusOptions {
  std::size_t speakers_per_class = 4;
  double minutes = 10.0;
  std::uint64_t seed = 0;
  double sample_rate = kDefaultSampleRate;
  double min_utterance_s = 3.0;
  double max_utterance_s = 5.0;
  double test_fraction = 0.25;
};

// Class "A" pitch 80-160 Hz, class "B" 180-300 Hz. Each class range is cut
// into disjoint per-speaker slices.
std::vector<ToySpeakerProfile> make_toy_profiles(std::size_t per_class,
                                                 std::uint64_t seed);

Waveform synth_utterance(const ToySpeakerProfile& profile, double seconds,
                         double sample_rate, std::uint64_t seed);

// Writes float32 WAVs plus manifest.json under out_dir and returns the
// opened corpus. Utterances are generated round-robin over speakers until
// the total reaches `minutes`.
SpeakerCorpus synth_toy_corpus(const std::string& out_dir,
                               const ToyCorpusOptions& options);

// Seed mixing for derived streams (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
// Unbiased draw from [0, n).
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);
double uniform_real(std::mt19937_64& rng, double lo, double hi);

}  // namespace aetsep::data
