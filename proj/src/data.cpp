#include "aetsep/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>

#include <nlohmann/json.hpp>

#include "aetsep/error.hpp"
#include "aetsep/wav.hpp"

namespace aetsep::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw ConfigError("uniform_index over an empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

// ---------------------------------------------------------------------------
// SpeakerCorpus

struct SpeakerCorpus::Cache {
  std::mutex mu;
  std::map<std::string, std::shared_ptr<const Waveform>> loaded;
};

SpeakerCorpus::SpeakerCorpus(std::string root, double sample_rate,
                             std::vector<SpeakerEntry> speakers)
    : root_(std::move(root)),
      sample_rate_(sample_rate),
      speakers_(std::move(speakers)),
      cache_(std::make_shared<Cache>()) {
  if (!(sample_rate_ > 0)) throw ConfigError("corpus sample rate must be positive");
  std::sort(speakers_.begin(), speakers_.end(),
            [](const SpeakerEntry& a, const SpeakerEntry& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < speakers_.size(); ++i) {
    const auto& s = speakers_[i];
    if (s.id.empty()) throw ConfigError("speaker with empty id");
    if (i > 0 && speakers_[i - 1].id == s.id) {
      throw ConfigError("duplicate speaker id " + s.id);
    }
    if (s.split != "train" && s.split != "test") {
      throw ConfigError("speaker " + s.id + " has split '" + s.split +
                        "', expected train or test");
    }
  }
}

SpeakerCorpus SpeakerCorpus::open(const std::string& root) {
  const fs::path path = fs::path(root) / "manifest.json";
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
    std::vector<SpeakerEntry> speakers;
    for (const auto& s : j.at("speakers")) {
      SpeakerEntry e;
      e.id = s.at("id").get<std::string>();
      e.speaker_class = s.value("class", std::string());
      e.split = s.value("split", std::string("train"));
      e.files = s.at("files").get<std::vector<std::string>>();
      speakers.push_back(std::move(e));
    }
    return SpeakerCorpus(root, j.value("sample_rate", kDefaultSampleRate),
                         std::move(speakers));
  } catch (const json::exception& e) {
    throw IoError("malformed corpus manifest " + path.string() + ": " + e.what());
  }
}

void SpeakerCorpus::write_manifest() const {
  json speakers = json::array();
  for (const auto& s : speakers_) {
    speakers.push_back({{"id", s.id},
                        {"class", s.speaker_class},
                        {"split", s.split},
                        {"files", s.files}});
  }
  const json j = {{"sample_rate", sample_rate_}, {"speakers", speakers}};
  const fs::path path = fs::path(root_) / "manifest.json";
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

const SpeakerEntry& SpeakerCorpus::speaker(std::string_view id) const {
  auto it = std::lower_bound(
      speakers_.begin(), speakers_.end(), id,
      [](const SpeakerEntry& e, std::string_view v) { return e.id < v; });
  if (it == speakers_.end() || it->id != id) {
    throw ConfigError("unknown speaker " + std::string(id));
  }
  return *it;
}

std::vector<std::string> SpeakerCorpus::speaker_ids(
    std::string_view split, std::string_view speaker_class) const {
  std::vector<std::string> ids;
  for (const auto& s : speakers_) {
    if (!split.empty() && s.split != split) continue;
    if (!speaker_class.empty() && s.speaker_class != speaker_class) continue;
    ids.push_back(s.id);
  }
  return ids;
}

std::shared_ptr<const Waveform> SpeakerCorpus::utterance(
    std::string_view speaker_id, std::size_t index) const {
  const auto& s = speaker(speaker_id);
  if (index >= s.files.size()) {
    throw ConfigError("speaker " + s.id + " has no utterance " + std::to_string(index));
  }
  const std::string path = (fs::path(root_) / s.files[index]).string();
  {
    std::lock_guard<std::mutex> lock(cache_->mu);
    auto it = cache_->loaded.find(path);
    if (it != cache_->loaded.end()) return it->second;
  }
  auto w = std::make_shared<Waveform>(wav::load(path));
  if (w->sample_rate != sample_rate_) {
    throw IoError(path + " is sampled at " + std::to_string(w->sample_rate) +
                  " Hz, corpus rate is " + std::to_string(sample_rate_));
  }
  std::lock_guard<std::mutex> lock(cache_->mu);
  return cache_->loaded.emplace(path, std::move(w)).first->second;
}

// ---------------------------------------------------------------------------
// Mixtures

namespace {

constexpr double kSilenceRms = 1e-6;
constexpr int kSnippetAttempts = 32;

std::vector<double> scaled(const double* begin, std::size_t n) {
  std::vector<double> out(begin, begin + n);
  const double r = rms(out);
  const double g = kReferenceRms / r;
  for (double& v : out) v *= g;
  return out;
}

struct Snippet {
  std::string file;
  std::size_t offset = 0;
  std::vector<double> samples;
};

Snippet draw_snippet(const SpeakerCorpus& corpus, std::string_view speaker,
                     std::size_t len, std::mt19937_64& rng) {
  const auto& entry = corpus.speaker(speaker);
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < entry.files.size(); ++i) {
    if (corpus.utterance(speaker, i)->size() >= len) usable.push_back(i);
  }
  if (usable.empty()) {
    throw ConfigError("speaker " + entry.id + " has no utterance of " +
                      std::to_string(len) + " samples");
  }
  for (int attempt = 0; attempt < kSnippetAttempts; ++attempt) {
    const std::size_t u = usable[uniform_index(rng, usable.size())];
    const auto w = corpus.utterance(speaker, u);
    const std::size_t offset = uniform_index(rng, w->size() - len + 1);
    const double* p = w->samples.data() + offset;
    double e = 0.0;
    for (std::size_t i = 0; i < len; ++i) e += p[i] * p[i];
    if (std::sqrt(e / static_cast<double>(len)) > kSilenceRms) {
      return {entry.files[u], offset, scaled(p, len)};
    }
  }
  throw ConfigError("speaker " + entry.id + " yielded only silent snippets");
}

void check_headroom(const MixtureExample& ex) {
  for (double v : ex.mixture.samples) {
    if (!(std::abs(v) < 1.0)) {
      throw NumericError("mixture " + ex.id + " clips after normalization");
    }
  }
}

}  // namespace

MixtureExample make_mixture(const SpeakerCorpus& corpus,
                            std::string_view target_speaker,
                            std::string_view interference_speaker,
                            double dur_s, std::uint64_t seed) {
  if (!(dur_s > 0)) throw ConfigError("snippet duration must be positive");
  const auto len = static_cast<std::size_t>(std::llround(dur_s * corpus.sample_rate()));
  std::mt19937_64 rng(seed);
  Snippet t = draw_snippet(corpus, target_speaker, len, rng);
  Snippet z = draw_snippet(corpus, interference_speaker, len, rng);

  MixtureExample ex;
  ex.seed = seed;
  ex.target_speaker = std::string(target_speaker);
  ex.interference_speaker = std::string(interference_speaker);
  ex.target_file = t.file;
  ex.interference_file = z.file;
  ex.target_offset = t.offset;
  ex.interference_offset = z.offset;
  char id[64];
  std::snprintf(id, sizeof(id), "%016llx", static_cast<unsigned long long>(seed));
  ex.id = ex.target_speaker + "+" + ex.interference_speaker + "_" + id;
  const double sr = corpus.sample_rate();
  ex.target = {std::move(t.samples), sr};
  ex.interference = {std::move(z.samples), sr};
  ex.mixture = {std::vector<double>(len), sr};
  for (std::size_t i = 0; i < len; ++i) {
    ex.mixture.samples[i] = ex.target.samples[i] + ex.interference.samples[i];
  }
  check_headroom(ex);
  return ex;
}

MixtureExample mix_pair(std::string id, const Waveform& target,
                        const Waveform& interference) {
  if (target.sample_rate != interference.sample_rate) {
    throw ConfigError("sample rate mismatch in pair " + id);
  }
  const std::size_t len = std::min(target.size(), interference.size());
  if (len == 0) throw ConfigError("empty waveform in pair " + id);
  if (rms(std::vector<double>(target.samples.begin(), target.samples.begin() + len)) <=
          kSilenceRms ||
      rms(std::vector<double>(interference.samples.begin(),
                              interference.samples.begin() + len)) <= kSilenceRms) {
    throw ConfigError("silent source in pair " + id);
  }
  MixtureExample ex;
  ex.id = std::move(id);
  const double sr = target.sample_rate;
  ex.target = {scaled(target.samples.data(), len), sr};
  ex.interference = {scaled(interference.samples.data(), len), sr};
  ex.mixture = {std::vector<double>(len), sr};
  for (std::size_t i = 0; i < len; ++i) {
    ex.mixture.samples[i] = ex.target.samples[i] + ex.interference.samples[i];
  }
  check_headroom(ex);
  return ex;
}

// ---------------------------------------------------------------------------
// MixtureStream

MixtureStream::MixtureStream(std::shared_ptr<const SpeakerCorpus> corpus,
                             DatasetOptions options)
    : corpus_(std::move(corpus)), options_(std::move(options)) {
  if (!corpus_) throw ConfigError("null corpus");
  if (!(options_.minutes > 0)) throw ConfigError("minutes must be positive");
  if (!(options_.snippet_s > 0)) throw ConfigError("snippet_s must be positive");
  if (options_.batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto targets = corpus_->speaker_ids(options_.split, options_.target_class);
  const auto interferers =
      corpus_->speaker_ids(options_.split, options_.interference_class);
  if (targets.empty() || interferers.empty()) {
    throw ConfigError("corpus has no " + options_.split + " speakers of class '" +
                      (targets.empty() ? options_.target_class
                                       : options_.interference_class) + "'");
  }
  // Tolerance keeps e.g. 0.1 * 60 / 2 from rounding up to an extra example.
  const double exact = options_.minutes * 60.0 / options_.snippet_s;
  const auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  std::mt19937_64 rng(options_.seed);
  draws_.reserve(count);
  for (std::size_t k = 0; k < std::max<std::size_t>(count, 1); ++k) {
    MixtureDraw d;
    d.target_speaker = targets[uniform_index(rng, targets.size())];
    d.interference_speaker = interferers[uniform_index(rng, interferers.size())];
    d.seed = derive_seed(options_.seed, k);
    draws_.push_back(std::move(d));
  }
}

std::size_t MixtureStream::batches_per_epoch() const {
  return (draws_.size() + options_.batch_size - 1) / options_.batch_size;
}

MixtureExample MixtureStream::example(std::size_t index) const {
  const auto& d = draws_.at(index);
  return make_mixture(*corpus_, d.target_speaker, d.interference_speaker,
                      options_.snippet_s, d.seed);
}

std::vector<MixtureExample> MixtureStream::batch(std::size_t index) const {
  if (index >= batches_per_epoch()) throw ConfigError("batch index out of range");
  const std::size_t begin = index * options_.batch_size;
  const std::size_t end = std::min(begin + options_.batch_size, draws_.size());
  std::vector<MixtureExample> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(example(i));
  return out;
}

std::vector<MixtureExample> MixtureStream::all() const {
  std::vector<MixtureExample> out;
  out.reserve(draws_.size());
  for (std::size_t i = 0; i < draws_.size(); ++i) out.push_back(example(i));
  return out;
}

MixtureStream dataset_iter(std::shared_ptr<const SpeakerCorpus> corpus,
                           double minutes, std::size_t batch_size,
                           std::uint64_t seed) {
  DatasetOptions o;
  o.minutes = minutes;
  o.batch_size = batch_size;
  o.seed = seed;
  return MixtureStream(std::move(corpus), std::move(o));
}

// ---------------------------------------------------------------------------
// Test manifests

std::vector<MixtureExample> load_test_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  const fs::path dir = fs::path(path).parent_path();
  std::vector<MixtureExample> out;
  try {
    const json j = json::parse(is);
    for (const auto& e : j.at("examples")) {
      const std::string id = e.value("id", "ex" + std::to_string(out.size()));
      const Waveform t = wav::load((dir / e.at("target").get<std::string>()).string());
      const Waveform z =
          wav::load((dir / e.at("interference").get<std::string>()).string());
      if (!e.contains("mixture")) {
        out.push_back(mix_pair(id, t, z));
        continue;
      }
      MixtureExample ex;
      ex.id = id;
      ex.mixture = wav::load((dir / e.at("mixture").get<std::string>()).string());
      ex.target = t;
      ex.interference = z;
      if (ex.mixture.size() != t.size() || t.size() != z.size()) {
        throw ShapeError("triplet " + id + " has mismatched lengths");
      }
      out.push_back(std::move(ex));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed test manifest " + path + ": " + e.what());
  }
  if (out.empty()) throw ConfigError("test manifest " + path + " lists no examples");
  return out;
}

void write_test_manifest(const std::string& dir,
                         const std::vector<MixtureExample>& examples) {
  fs::create_directories(dir);
  json list = json::array();
  for (const auto& ex : examples) {
    const std::string m = ex.id + "_mix.wav", t = ex.id + "_target.wav",
                      z = ex.id + "_interf.wav";
    wav::save((fs::path(dir) / m).string(), ex.mixture);
    wav::save((fs::path(dir) / t).string(), ex.target);
    wav::save((fs::path(dir) / z).string(), ex.interference);
    list.push_back({{"id", ex.id}, {"mixture", m}, {"target", t}, {"interference", z}});
  }
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + dir);
  os << json{{"examples", list}}.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Toy speakers

namespace {

constexpr double kClassAPitch[2] = {80.0, 160.0};
constexpr double kClassBPitch[2] = {180.0, 300.0};
constexpr std::size_t kVowelsPerSpeaker = 5;
constexpr std::size_t kControlPeriod = 32;

ToySpeakerProfile make_profile(const std::string& cls, std::size_t index,
                               std::size_t count, std::uint64_t seed) {
  const double* range = cls == "A" ? kClassAPitch : kClassBPitch;
  const double width = (range[1] - range[0]) / static_cast<double>(count);
  ToySpeakerProfile p;
  char id[16];
  std::snprintf(id, sizeof(id), "%s%02zu", cls.c_str(), index);
  p.id = id;
  p.speaker_class = cls;
  p.seed = seed;
  // Slices are separated by a small gap so ranges never touch.
  p.pitch_lo_hz = range[0] + width * static_cast<double>(index) + 0.05 * width;
  p.pitch_hi_hz = range[0] + width * static_cast<double>(index + 1) - 0.05 * width;

  // Class B sits higher in frequency throughout: formants, frication and
  // harmonic extent. Class A is darker, with a steeper tilt.
  std::mt19937_64 rng(seed);
  const bool high = cls == "B";
  const double scale = (high ? 1.4 : 0.8) * uniform_real(rng, 0.96, 1.04);
  for (std::size_t v = 0; v < kVowelsPerSpeaker; ++v) {
    p.vowels_hz.push_back({scale * uniform_real(rng, 300.0, 800.0),
                           scale * uniform_real(rng, 900.0, 2200.0),
                           scale * uniform_real(rng, 2400.0, 3100.0)});
  }
  p.bandwidths_hz = {high ? 90.0 : 60.0, high ? 130.0 : 90.0, high ? 200.0 : 140.0};
  p.fricative_hz = (high ? 6000.0 : 2600.0) * uniform_real(rng, 0.92, 1.08);
  p.noise_mix = (high ? 0.06 : 0.03) * uniform_real(rng, 0.8, 1.2);
  p.spectral_tilt = high ? 0.6 : 1.5;
  p.harmonic_ceiling_hz = high ? 7000.0 : 3500.0;
  return p;
}

// Second-order resonator used to colour noise.
struct Resonator {
  double a1 = 0, a2 = 0, g = 0, y1 = 0, y2 = 0;
  Resonator(double centre, double bandwidth, double sr) {
    const double r = std::exp(-std::numbers::pi * bandwidth / sr);
    a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * centre / sr);
    a2 = -r * r;
    g = 1.0 - r;
  }
  double step(double x) {
    const double y = g * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

double raised_cosine_envelope(double t, double dur, double ramp) {
  if (t < 0 || t > dur) return 0.0;
  const double r = std::min(ramp, dur / 2);
  if (t < r) return 0.5 - 0.5 * std::cos(std::numbers::pi * t / r);
  if (t > dur - r) return 0.5 - 0.5 * std::cos(std::numbers::pi * (dur - t) / r);
  return 1.0;
}

}  // namespace

std::vector<ToySpeakerProfile> make_toy_profiles(std::size_t per_class,
                                                 std::uint64_t seed) {
  if (per_class == 0) throw ConfigError("need at least one speaker per class");
  std::vector<ToySpeakerProfile> out;
  std::uint64_t stream = 0;
  for (const std::string cls : {"A", "B"}) {
    for (std::size_t i = 0; i < per_class; ++i) {
      out.push_back(make_profile(cls, i, per_class, derive_seed(seed, stream++)));
    }
  }
  return out;
}

Waveform synth_utterance(const ToySpeakerProfile& p, double seconds,
                         double sample_rate, std::uint64_t seed) {
  if (!(seconds > 0) || !(sample_rate > 0)) {
    throw ConfigError("utterance duration and rate must be positive");
  }
  const auto len = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit_noise(0.0, 1.0);

  // Syllable plan: voiced segments separated by gaps, some with frication.
  struct Segment {
    std::size_t begin, end;
    bool voiced;
    std::size_t vowel;
    double pitch_start, pitch_end;
  };
  std::vector<Segment> plan;
  std::size_t pos = static_cast<std::size_t>(uniform_real(rng, 0.02, 0.08) * sample_rate);
  double pitch = uniform_real(rng, p.pitch_lo_hz, p.pitch_hi_hz);
  while (pos < len) {
    const auto syl = static_cast<std::size_t>(uniform_real(rng, 0.12, 0.32) * sample_rate);
    const double next_pitch = uniform_real(rng, p.pitch_lo_hz, p.pitch_hi_hz);
    plan.push_back({pos, std::min(len, pos + syl), true,
                    uniform_index(rng, p.vowels_hz.size()), pitch, next_pitch});
    pitch = next_pitch;
    pos += syl;
    if (pos >= len) break;
    const auto gap = static_cast<std::size_t>(uniform_real(rng, 0.05, 0.25) * sample_rate);
    if (uniform_real(rng, 0.0, 1.0) < 0.35) {
      plan.push_back({pos, std::min(len, pos + gap), false, 0, 0.0, 0.0});
    }
    pos += gap;
  }

  std::vector<double> out(len, 0.0);
  const double nyquist_cap = std::min(p.harmonic_ceiling_hz, 0.45 * sample_rate);
  Resonator fric(p.fricative_hz, 0.25 * p.fricative_hz, sample_rate);
  std::vector<double> amps;
  std::vector<double> prev_formants = p.vowels_hz.front();
  double phase = 0.0;
  const double vibrato_rate = uniform_real(rng, 4.0, 6.0);

  for (const auto& seg : plan) {
    const std::size_t n = seg.end - seg.begin;
    const double dur = static_cast<double>(n) / sample_rate;
    if (!seg.voiced) {
      for (std::size_t i = 0; i < n; ++i) {
        const double env = raised_cosine_envelope(i / sample_rate, dur, 0.015);
        out[seg.begin + i] += 0.6 * env * fric.step(unit_noise(rng));
      }
      continue;
    }
    const auto& target = p.vowels_hz[seg.vowel];
    Resonator breath(target[1], 400.0, sample_rate);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = i / sample_rate;
      const double frac = static_cast<double>(i) / static_cast<double>(n);
      const double f0 = std::clamp(
          (seg.pitch_start + (seg.pitch_end - seg.pitch_start) * frac) *
              (1.0 + 0.01 * std::sin(2.0 * std::numbers::pi * vibrato_rate * t)),
          p.pitch_lo_hz, p.pitch_hi_hz);
      if (i % kControlPeriod == 0) {
        // Formants glide from the previous vowel over the first 40 ms.
        const double g = std::min(1.0, t / 0.04);
        std::vector<double> formants(3);
        for (int k = 0; k < 3; ++k) {
          formants[k] = prev_formants[k] + (target[k] - prev_formants[k]) * g;
        }
        const auto harmonics = static_cast<std::size_t>(nyquist_cap / f0);
        amps.assign(harmonics, 0.0);
        for (std::size_t h = 1; h <= harmonics; ++h) {
          const double f = h * f0;
          double shape = 0.1;
          const double gains[3] = {1.0, 0.7, 0.4};
          for (int k = 0; k < 3; ++k) {
            const double d = (f - formants[k]) / (0.5 * p.bandwidths_hz[k]);
            shape += gains[k] / (1.0 + d * d);
          }
          amps[h - 1] = shape / std::pow(static_cast<double>(h), p.spectral_tilt);
        }
      }
      phase += 2.0 * std::numbers::pi * f0 / sample_rate;
      if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
      const double c1 = std::cos(phase), s1 = std::sin(phase);
      double c = 1.0, s = 0.0, acc = 0.0;
      for (double a : amps) {
        const double cn = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = cn;
        acc += a * s;
      }
      const double env = raised_cosine_envelope(t, dur, 0.02);
      out[seg.begin + i] += env * (acc + p.noise_mix * 8.0 * breath.step(unit_noise(rng)));
    }
    prev_formants = target;
  }

  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0) {
    for (double& v : out) v *= 0.5 / peak;
  }
  return {std::move(out), sample_rate};
}

SpeakerCorpus synth_toy_corpus(const std::string& out_dir,
                               const ToyCorpusOptions& o) {
  if (!(o.minutes > 0)) throw ConfigError("minutes must be positive");
  if (o.speakers_per_class < 2) {
    throw ConfigError("toy corpus needs at least two speakers per class");
  }
  if (!(o.min_utterance_s > 0) || o.max_utterance_s < o.min_utterance_s) {
    throw ConfigError("invalid utterance duration range");
  }
  const auto profiles = make_toy_profiles(o.speakers_per_class, o.seed);
  const std::size_t n = o.speakers_per_class;
  const std::size_t n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(o.test_fraction * n)), 1, n - 1);
  std::vector<bool> is_test(n, false);
  for (std::size_t k = 0; k < n_test; ++k) {
    is_test[static_cast<std::size_t>((k + 0.5) * n / n_test)] = true;
  }

  fs::create_directories(out_dir);
  std::vector<SpeakerEntry> speakers;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    fs::create_directories(fs::path(out_dir) / profiles[i].id);
    speakers.push_back({profiles[i].id, profiles[i].speaker_class,
                        is_test[i % n] ? "test" : "train", {}});
  }

  std::mt19937_64 rng(derive_seed(o.seed, 0xC0FFEE));
  const double total_target = o.minutes * 60.0;
  double total = 0.0;
  // Every speaker gets at least one utterance even for tiny budgets.
  for (std::size_t k = 0; total < total_target || k < profiles.size(); ++k) {
    const std::size_t s = k % profiles.size();
    const double seconds = uniform_real(rng, o.min_utterance_s, o.max_utterance_s);
    const Waveform w = synth_utterance(profiles[s], seconds, o.sample_rate,
                                       derive_seed(profiles[s].seed, k));
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03zu.wav", profiles[s].id.c_str(),
                  speakers[s].files.size());
    const std::string rel = profiles[s].id + "/" + name;
    wav::save((fs::path(out_dir) / rel).string(), w);
    speakers[s].files.push_back(rel);
    total += w.duration();
  }
  SpeakerCorpus corpus(out_dir, o.sample_rate, std::move(speakers));
  corpus.write_manifest();
  return corpus;
}

}  // namespace aetsep::data
