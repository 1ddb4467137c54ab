#pragma once

#include <string>

#include "aetsep/waveform.hpp"

namespace aetsep::wav {

enum class SampleFormat { kFloat32, kPcm16 };

// Reads 16-bit PCM or 32-bit IEEE float RIFF/WAVE (plain or extensible
// header). Multichannel files are averaged to mono. Throws IoError on
// malformed or unsupported files.
Waveform load(const std::string& path);

// PCM16 writes round(x * 32768) clamped to [-32768, 32767].
void save(const std::string& path, const Waveform& w,
          SampleFormat format = SampleFormat::kFloat32);

}  // namespace aetsep::wav
