#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "echomap/autodiff/tensor.hpp"
#include "echomap/dsp/fft.hpp"

namespace echomap::dsp {

// Binaural impulse response: samples [2,L] plus its rate.
struct Rir {
  ad::NdArray samples;
  double sample_rate = 8000.0;

  int length() const { return samples.shape.size() == 2 ? samples.shape[1] : 0; }
};

// Log-compressed magnitude spectrogram [2,F,T] with the analysis settings it
// was produced under.
struct Spectrogram {
  ad::NdArray values;
  double sample_rate = 8000.0;
  int window_len = 128;
  int hop = 32;
};

struct StftConfig {
  int win = 128;  // periodic Hann window, also the FFT size
  int hop = 32;
};

inline std::vector<double> hann_periodic(int win) {
  std::vector<double> w(static_cast<std::size_t>(win));
  for (int n = 0; n < win; ++n)
    w[static_cast<std::size_t>(n)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / static_cast<double>(win)));
  return w;
}

namespace detail {

// Windowed frame centered at t*hop, zero-padded at the edges, transformed in
// place. Returns the full complex spectrum of length win.
inline std::vector<std::complex<double>> frame_spectrum(const std::vector<double>& x, int t,
                                                        const StftConfig& cfg,
                                                        const std::vector<double>& window) {
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.win));
  const long long c = static_cast<long long>(t) * cfg.hop;
  for (int n = 0; n < cfg.win; ++n) {
    const long long idx = c - cfg.win / 2 + n;
    double v = 0.0;
    if (idx >= 0 && idx < static_cast<long long>(x.size())) v = x[static_cast<std::size_t>(idx)];
    buf[static_cast<std::size_t>(n)] = v * window[static_cast<std::size_t>(n)];
  }
  fft_inplace(buf, false);
  return buf;
}

}  // namespace detail

// Single-channel building block: out[f,t] = log(1 + |X_f(t)|) with
// F = win/2 bins (DC kept, Nyquist dropped) and T = len/hop frames.
inline ad::NdArray stft_log_mag_1d(const std::vector<double>& x, const StftConfig& cfg = {}) {
  if (cfg.win <= 0 || cfg.hop <= 0 || cfg.win % 2 != 0)
    throw std::invalid_argument("stft: bad window/hop");
  if (x.empty() || x.size() % static_cast<std::size_t>(cfg.hop) != 0)
    throw std::invalid_argument("stft: signal length must be a positive multiple of hop");
  const int F = cfg.win / 2;
  const int T = static_cast<int>(x.size()) / cfg.hop;
  const auto window = hann_periodic(cfg.win);
  ad::NdArray out = ad::NdArray::zeros({F, T});
  for (int t = 0; t < T; ++t) {
    auto spec = detail::frame_spectrum(x, t, cfg, window);
    for (int f = 0; f < F; ++f)
      out.data[static_cast<std::size_t>(f) * T + t] =
          std::log1p(std::abs(spec[static_cast<std::size_t>(f)]));
  }
  return out;
}

inline Spectrogram stft_log_mag(const Rir& rir, const StftConfig& cfg = {}) {
  if (rir.samples.shape.size() != 2 || rir.samples.shape[0] != 2)
    throw std::invalid_argument("stft_log_mag: want samples [2,L]");
  const std::size_t L = static_cast<std::size_t>(rir.samples.shape[1]);
  std::vector<double> ch(L);
  Spectrogram out;
  out.sample_rate = rir.sample_rate;
  out.window_len = cfg.win;
  out.hop = cfg.hop;
  for (int c = 0; c < 2; ++c) {
    std::copy(rir.samples.data.begin() + static_cast<std::ptrdiff_t>(c * L),
              rir.samples.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * L), ch.begin());
    ad::NdArray s = stft_log_mag_1d(ch, cfg);
    if (c == 0) {
      out.values = ad::NdArray::zeros({2, s.shape[0], s.shape[1]});
      std::copy(s.data.begin(), s.data.end(), out.values.data.begin());
    } else {
      std::copy(s.data.begin(), s.data.end(),
                out.values.data.begin() + static_cast<std::ptrdiff_t>(s.data.size()));
    }
  }
  return out;
}

namespace detail {

// Phase retrieval for one channel by ISTFT/STFT projections from a
// zero-phase start (fully deterministic). Returns a signal of length T*hop.
inline std::vector<double> griffin_lim_1d(const ad::NdArray& log_mag, const StftConfig& cfg,
                                          int iterations) {
  if (log_mag.shape.size() != 2) throw std::invalid_argument("griffin_lim: want [F,T]");
  const int F = log_mag.shape[0], T = log_mag.shape[1];
  if (F != cfg.win / 2) throw std::invalid_argument("griffin_lim: F must equal win/2");
  const int L = T * cfg.hop;
  const auto window = hann_periodic(cfg.win);

  // Invert the log(1+m) compression; clip tiny negatives from model output.
  std::vector<double> mag(static_cast<std::size_t>(F) * T);
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::max(std::expm1(log_mag.data[i]), 0.0);

  // Full-band complex spectra per frame (Nyquist zero, conjugate symmetry).
  std::vector<std::vector<std::complex<double>>> spec(
      static_cast<std::size_t>(T),
      std::vector<std::complex<double>>(static_cast<std::size_t>(cfg.win)));
  auto project_magnitude = [&](const std::vector<std::vector<std::complex<double>>>& phase_src,
                               bool zero_phase) {
    for (int t = 0; t < T; ++t) {
      auto& s = spec[static_cast<std::size_t>(t)];
      std::fill(s.begin(), s.end(), std::complex<double>(0.0, 0.0));
      for (int f = 0; f < F; ++f) {
        const double m = mag[static_cast<std::size_t>(f) * T + t];
        std::complex<double> ph(1.0, 0.0);
        if (!zero_phase) {
          const std::complex<double> p =
              phase_src[static_cast<std::size_t>(t)][static_cast<std::size_t>(f)];
          const double a = std::abs(p);
          if (a > 1e-300) ph = p / a;
        }
        s[static_cast<std::size_t>(f)] = m * ph;
      }
      for (int f = 1; f < F; ++f)
        s[static_cast<std::size_t>(cfg.win - f)] = std::conj(s[static_cast<std::size_t>(f)]);
    }
  };

  std::vector<double> x(static_cast<std::size_t>(L), 0.0);
  auto istft = [&]() {
    std::fill(x.begin(), x.end(), 0.0);
    std::vector<double> wsum(static_cast<std::size_t>(L), 0.0);
    std::vector<std::complex<double>> buf;
    for (int t = 0; t < T; ++t) {
      buf = spec[static_cast<std::size_t>(t)];
      fft_inplace(buf, true);
      const long long c = static_cast<long long>(t) * cfg.hop;
      for (int n = 0; n < cfg.win; ++n) {
        const long long idx = c - cfg.win / 2 + n;
        if (idx < 0 || idx >= L) continue;
        const double w = window[static_cast<std::size_t>(n)];
        x[static_cast<std::size_t>(idx)] += buf[static_cast<std::size_t>(n)].real() * w;
        wsum[static_cast<std::size_t>(idx)] += w * w;
      }
    }
    for (int i = 0; i < L; ++i)
      if (wsum[static_cast<std::size_t>(i)] > 1e-12)
        x[static_cast<std::size_t>(i)] /= wsum[static_cast<std::size_t>(i)];
  };

  project_magnitude({}, true);
  istft();
  std::vector<std::vector<std::complex<double>>> analyzed(static_cast<std::size_t>(T));
  for (int it = 0; it < iterations; ++it) {
    for (int t = 0; t < T; ++t)
      analyzed[static_cast<std::size_t>(t)] = frame_spectrum(x, t, cfg, window);
    project_magnitude(analyzed, false);
    istft();
  }
  return x;
}

}  // namespace detail

inline Rir griffin_lim(const Spectrogram& spec, int iterations = 32) {
  if (spec.values.shape.size() != 3 || spec.values.shape[0] != 2)
    throw std::invalid_argument("griffin_lim: want values [2,F,T]");
  const int F = spec.values.shape[1], T = spec.values.shape[2];
  const StftConfig cfg{spec.window_len, spec.hop};
  Rir out;
  out.sample_rate = spec.sample_rate;
  out.samples = ad::NdArray::zeros({2, T * cfg.hop});
  const std::size_t per = static_cast<std::size_t>(F) * T;
  for (int c = 0; c < 2; ++c) {
    ad::NdArray ch({F, T},
                   std::vector<double>(spec.values.data.begin() + static_cast<std::ptrdiff_t>(c * per),
                                       spec.values.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * per)));
    auto sig = detail::griffin_lim_1d(ch, cfg, iterations);
    std::copy(sig.begin(), sig.end(),
              out.samples.data.begin() + static_cast<std::ptrdiff_t>(c) * static_cast<std::ptrdiff_t>(sig.size()));
  }
  return out;
}

}  // namespace echomap::dsp
