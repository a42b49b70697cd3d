#pragma once

// Desk-scale corpus: deterministic clean signals (harmonic tones with AM/FM
// envelopes and a speech-like spectral tilt) and noises (one-pole colored
// noise, babble-like tone mixtures), mixed at exact SNRs drawn from the
// configured range.

#include <cmath>
#include <string>
#include <vector>

#include "ctsnet/losses.hpp"
#include "ctsnet/rng.hpp"
#include "ctsnet/stft.hpp"

namespace ctsnet {

struct MixtureSpec {
  int64_t clean_id = 0;
  int64_t noise_id = 0;
  double snr_db = 0.0;
  int64_t noise_offset = 0;
};

struct MixturePair {
  Waveform clean;
  Waveform mixture;
  MixtureSpec spec;
};

struct Dataset {
  std::vector<MixturePair> pairs;
  std::vector<std::string> notes;  // non-fatal events (offset resamples etc.)
};

struct CorpusConfig {
  uint64_t seed = 7;
  int64_t pairs = 10;
  double utterance_seconds = 1.0;
  double snr_min_db = -5.0;
  double snr_max_db = 0.0;
  double snr_step_db = 1.0;
};

inline double energy(const Waveform& w) {
  double e = 0.0;
  for (double v : w.samples) e += v * v;
  return e;
}

// Scales the noise so 10*log10(|s|^2 / |a n|^2) == snr_db and returns s + a n.
inline Waveform mix_at_snr(const Waveform& clean, const Waveform& noise,
                           double snr_db) {
  require(clean.size() == noise.size(),
          "mix_at_snr requires equal lengths, got " +
              std::to_string(clean.size()) + " vs " +
              std::to_string(noise.size()));
  const double es = energy(clean);
  const double en = energy(noise);
  if (es <= 0.0) throw NumericError("mix_at_snr: clean signal has no energy");
  if (en <= 0.0) throw NumericError("mix_at_snr: noise segment has no energy");
  const double alpha = std::sqrt(es / (en * std::pow(10.0, snr_db / 10.0)));
  Waveform out;
  out.sample_rate = clean.sample_rate;
  out.samples.resize(clean.samples.size());
  for (size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] = clean.samples[i] + alpha * noise.samples[i];
  return out;
}

namespace datadetail {

inline Waveform harmonic_clean(int64_t samples, Rng& rng) {
  Waveform w;
  w.samples.assign(size_t(samples), 0.0);
  const double f0 = rng.uniform(90.0, 280.0);
  const int harmonics = 4 + int(rng.below(6));
  const double am_rate = rng.uniform(1.5, 4.0);
  const double am_phase = rng.uniform(0.0, 6.28318);
  const double vib_rate = rng.uniform(4.0, 7.0);
  const double vib_depth = rng.uniform(0.0, 0.01);
  std::vector<double> hphase(size_t(harmonics));
  for (auto& p : hphase) p = rng.uniform(0.0, 6.28318);
  double phase = rng.uniform(0.0, 6.28318);
  for (int64_t n = 0; n < samples; ++n) {
    const double t = double(n) / kSampleRate;
    const double vib = 1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * t);
    phase += 2.0 * M_PI * f0 * vib / kSampleRate;
    const double am = 0.55 + 0.45 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
    double v = 0.0;
    for (int h = 1; h <= harmonics; ++h)
      v += std::sin(h * phase + hphase[size_t(h - 1)]) / double(h);
    w.samples[size_t(n)] = am * v;
  }
  // Soft 10 ms onset/offset ramps, then normalize to peak 0.5.
  const int64_t ramp = kSampleRate / 100;
  for (int64_t n = 0; n < ramp && n < samples; ++n) {
    const double r = double(n) / double(ramp);
    w.samples[size_t(n)] *= r;
    w.samples[size_t(samples - 1 - n)] *= r;
  }
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0)
    for (double& v : w.samples) v *= 0.5 / peak;
  return w;
}

inline Waveform colored_noise(int64_t samples, Rng& rng) {
  Waveform w;
  w.samples.assign(size_t(samples), 0.0);
  const double a = rng.uniform(0.6, 0.95);
  double y = 0.0;
  for (int64_t n = 0; n < samples; ++n) {
    y = a * y + (1.0 - a) * rng.normal();
    w.samples[size_t(n)] = y;
  }
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0)
    for (double& v : w.samples) v *= 0.5 / peak;
  return w;
}

inline Waveform babble_noise(int64_t samples, Rng& rng) {
  Waveform w;
  w.samples.assign(size_t(samples), 0.0);
  const int voices = 8 + int(rng.below(8));
  for (int v = 0; v < voices; ++v) {
    const double f = rng.uniform(100.0, 3000.0);
    const double am_rate = rng.uniform(0.5, 6.0);
    const double am_phase = rng.uniform(0.0, 6.28318);
    const double phase0 = rng.uniform(0.0, 6.28318);
    const double drift = rng.uniform(-20.0, 20.0);
    for (int64_t n = 0; n < samples; ++n) {
      const double t = double(n) / kSampleRate;
      const double am = 0.5 + 0.5 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
      w.samples[size_t(n)] +=
          am * std::sin(2.0 * M_PI * (f + drift * t) * t + phase0);
    }
  }
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0)
    for (double& v : w.samples) v *= 0.5 / peak;
  return w;
}

}  // namespace datadetail

// Deterministic given the seed: same seed, bit-identical corpus.
inline Dataset synth_corpus(const CorpusConfig& cfg) {
  require(cfg.pairs > 0, "corpus needs at least one pair");
  require(cfg.snr_max_db >= cfg.snr_min_db && cfg.snr_step_db > 0,
          "empty SNR range");
  Dataset ds;
  Rng rng(cfg.seed);
  const int64_t samples =
      std::max<int64_t>(kFftSize, int64_t(cfg.utterance_seconds * kSampleRate));
  const int64_t snr_count =
      int64_t((cfg.snr_max_db - cfg.snr_min_db) / cfg.snr_step_db) + 1;

  for (int64_t i = 0; i < cfg.pairs; ++i) {
    MixturePair pair;
    pair.spec.clean_id = i;
    pair.spec.noise_id = i;
    pair.spec.snr_db = cfg.snr_min_db + double(i % snr_count) * cfg.snr_step_db;
    Rng prng = rng.fork(uint64_t(i) + 1);
    pair.clean = datadetail::harmonic_clean(samples, prng);

    // Noise track is longer than the utterance; a random cut is taken.
    const int64_t noise_len = samples * 2;
    Waveform track = (i % 2 == 0) ? datadetail::colored_noise(noise_len, prng)
                                  : datadetail::babble_noise(noise_len, prng);
    Waveform cut;
    cut.samples.resize(size_t(samples));
    for (int attempt = 0;; ++attempt) {
      pair.spec.noise_offset = int64_t(prng.below(uint64_t(noise_len - samples + 1)));
      std::copy(track.samples.begin() + pair.spec.noise_offset,
                track.samples.begin() + pair.spec.noise_offset + samples,
                cut.samples.begin());
      if (energy(cut) > 0.0) break;
      ds.notes.push_back("pair " + std::to_string(i) +
                         ": zero-energy noise cut, resampled offset");
      require(attempt < 64, "noise track has no energy anywhere");
    }

    pair.mixture = mix_at_snr(pair.clean, cut, pair.spec.snr_db);
    double peak = 0.0;
    for (double v : pair.mixture.samples) peak = std::max(peak, std::fabs(v));
    if (peak > 0.99) {
      // Rescale the pair jointly; the clean/noise ratio is unchanged.
      const double s = 0.99 / peak;
      for (double& v : pair.mixture.samples) v *= s;
      for (double& v : pair.clean.samples) v *= s;
    }
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

}  // namespace ctsnet
