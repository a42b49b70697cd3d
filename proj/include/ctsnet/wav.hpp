#pragma once

// RIFF/WAVE I/O limited to what the pipeline consumes: 16-bit signed PCM,
// mono, 16 kHz. Unsupported files are rejected with the offending field
// named; writes clip out-of-range samples with a warning on stderr.

#include <string>

#include "ctsnet/stft.hpp"

namespace ctsnet {

Waveform wav_read(const std::string& path);

// Returns the number of clipped samples (0 in the normal case).
int64_t wav_write(const std::string& path, const Waveform& w);

}  // namespace ctsnet
