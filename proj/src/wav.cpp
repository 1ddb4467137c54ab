#include "aetsep/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "aetsep/error.hpp"

namespace aetsep {

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace aetsep

namespace aetsep::wav {

namespace {

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Waveform load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError("not a RIFF/WAVE file: " + path);
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const auto len = read_le<std::uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // Tolerate a data chunk whose size field overruns the file.
      if (std::memcmp(chunk, "data", 4) != 0) throw IoError("truncated chunk in " + path);
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw IoError("short fmt chunk in " + path);
      format = read_le<std::uint16_t>(chunk + 8);
      channels = read_le<std::uint16_t>(chunk + 10);
      rate = read_le<std::uint32_t>(chunk + 12);
      bits = read_le<std::uint16_t>(chunk + 22);
      if (format == kFormatExtensible) {
        if (len < 40) throw IoError("short extensible fmt chunk in " + path);
        format = read_le<std::uint16_t>(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min<std::size_t>(len, bytes.size() - body);
    }
    pos = body + len + (len & 1u);
  }
  if (channels == 0 || rate == 0) throw IoError("missing fmt chunk in " + path);
  if (data == nullptr) throw IoError("missing data chunk in " + path);

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw IoError("unsupported WAV encoding (format " + std::to_string(format) +
                  ", " + std::to_string(bits) + " bits) in " + path);
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);

  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + (i * channels + c) * width;
      acc += pcm16 ? read_le<std::int16_t>(p) / 32768.0
                   : static_cast<double>(read_le<float>(p));
    }
    w.samples[i] = channels == 1 ? acc : acc / channels;
  }
  return w;
}

void save(const std::string& path, const Waveform& w, SampleFormat format) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  const bool pcm16 = format == SampleFormat::kPcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.size() * bits / 8);

  os.write("RIFF", 4);
  write_le<std::uint32_t>(os, 36 + data_len);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, pcm16 ? kFormatPcm : kFormatFloat);
  write_le<std::uint16_t>(os, 1);
  write_le<std::uint32_t>(os, rate);
  write_le<std::uint32_t>(os, rate * bits / 8);
  write_le<std::uint16_t>(os, bits / 8);
  write_le<std::uint16_t>(os, bits);
  os.write("data", 4);
  write_le<std::uint32_t>(os, data_len);
  for (double v : w.samples) {
    if (pcm16) {
      const double s = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
      write_le<std::int16_t>(os, static_cast<std::int16_t>(s));
    } else {
      write_le<float>(os, static_cast<float>(v));
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace aetsep::wav
