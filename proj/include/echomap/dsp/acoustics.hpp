#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "echomap/autodiff/tensor.hpp"
#include "echomap/dsp/spectrogram.hpp"

namespace echomap::dsp {

inline constexpr double kEdcFloorDb = -100.0;
inline constexpr double kEdcFloorRatio = 1e-10;  // 10^(floor/10)
inline constexpr double kDrrClampDb = 80.0;

// A decay-based quantity that cannot be estimated from the given curve
// (e.g. the EDC never reaches -25 dB). Callers skip the affected metric.
class UnmeasurableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Backward-integrated energy decay curve, normalized to 0 dB at the first
// entry and floored at -100 dB.
struct EdcCurve {
  std::vector<double> db;
};

inline EdcCurve schroeder_edc(const std::vector<double>& energy) {
  if (energy.empty()) throw std::invalid_argument("schroeder_edc: empty input");
  EdcCurve out;
  out.db.resize(energy.size());
  double acc = 0.0;
  for (std::size_t i = energy.size(); i-- > 0;) {
    if (!(energy[i] >= 0.0)) throw std::invalid_argument("schroeder_edc: negative energy");
    acc += energy[i];
    out.db[i] = acc;
  }
  const double e0 = out.db[0];
  if (e0 <= 0.0) throw std::invalid_argument("schroeder_edc: zero total energy");
  for (double& v : out.db) v = 10.0 * std::log10(std::max(v / e0, kEdcFloorRatio));
  return out;
}

inline EdcCurve schroeder_edc_from_rir_channel(const std::vector<double>& h) {
  std::vector<double> e(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) e[i] = h[i] * h[i];
  return schroeder_edc(e);
}

// Reverberation time from an EDC: least-squares fit between the first -5 dB
// and first -25 dB crossings, extrapolated to -60 dB. `frame_rate` is entries
// per second. Throws UnmeasurableError when the curve never reaches -25 dB.
inline double rt60_estimate(const EdcCurve& edc, double frame_rate) {
  if (frame_rate <= 0.0) throw std::invalid_argument("rt60: frame_rate must be positive");
  const auto& db = edc.db;
  std::size_t i5 = 0;
  while (i5 < db.size() && db[i5] > -5.0) ++i5;
  std::size_t i25 = i5;
  while (i25 < db.size() && db[i25] > -25.0) ++i25;
  if (i25 == db.size()) throw UnmeasurableError("rt60: decay never reaches -25 dB");
  if (i5 >= i25) throw UnmeasurableError("rt60: decay range too short to fit");
  double n = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = i5; i <= i25; ++i) {
    const double xi = static_cast<double>(i), yi = db[i];
    n += 1.0;
    sx += xi;
    sy += yi;
    sxx += xi * xi;
    sxy += xi * yi;
  }
  const double denom = n * sxx - sx * sx;
  if (denom <= 0.0) throw UnmeasurableError("rt60: degenerate fit");
  const double slope = (n * sxy - sx * sy) / denom;  // dB per entry
  if (slope >= 0.0) throw UnmeasurableError("rt60: non-decaying curve");
  return -60.0 / (slope * frame_rate);
}

// Direct-to-reverberant ratio of a frame-energy envelope. The direct part is
// frames [direct_frame-1, direct_frame+1]; everything else is reverberant.
// Clamped to +/-80 dB; a silent tail clamps rather than erroring.
inline double drr(const std::vector<double>& envelope, std::size_t direct_frame) {
  if (envelope.size() < 3) throw std::invalid_argument("drr: envelope too short");
  if (direct_frame >= envelope.size()) throw std::invalid_argument("drr: direct_frame out of range");
  double direct = 0.0, reverb = 0.0, total = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    if (!(envelope[i] >= 0.0)) throw std::invalid_argument("drr: negative energy");
    total += envelope[i];
    const bool in_direct = i + 1 >= direct_frame && i <= direct_frame + 1;
    (in_direct ? direct : reverb) += envelope[i];
  }
  if (total <= 0.0) throw std::invalid_argument("drr: all-zero envelope");
  if (direct <= 0.0) return -kDrrClampDb;
  if (reverb <= 0.0) return kDrrClampDb;
  return std::clamp(10.0 * std::log10(direct / reverb), -kDrrClampDb, kDrrClampDb);
}

inline std::size_t envelope_peak(const std::vector<double>& envelope) {
  std::size_t peak = 0;
  for (std::size_t i = 1; i < envelope.size(); ++i)
    if (envelope[i] > envelope[peak]) peak = i;
  return peak;
}

inline double drr(const std::vector<double>& envelope) {
  return drr(envelope, envelope_peak(envelope));
}

// Frame energies of a log-magnitude spectrogram [2,F,T] (channels summed):
// env[t] = sum_c sum_f (exp(v)-1)^2.
inline std::vector<double> spectrogram_envelope(const ad::NdArray& spect) {
  if (spect.shape.size() != 3 || spect.shape[0] != 2)
    throw std::invalid_argument("spectrogram_envelope: want [2,F,T]");
  const int F = spect.shape[1], T = spect.shape[2];
  std::vector<double> env(static_cast<std::size_t>(T), 0.0);
  for (int c = 0; c < 2; ++c)
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < T; ++t) {
        const double m = std::expm1(spect.data[(static_cast<std::size_t>(c) * F + f) * T + t]);
        env[static_cast<std::size_t>(t)] += m * m;
      }
  return env;
}

struct Metrics {
  double stft_error = 0.0;       // mean |pred - target| over the spectrogram
  std::optional<double> rte;     // |RT60_pred - RT60_target| in seconds
  std::optional<double> drre;    // |DRR_pred - DRR_target| in dB
};

// All three scores between a predicted and a reference spectrogram. RT60 and
// DRR run on the frame-energy envelopes at sample_rate/hop entries per
// second; when either decay is unmeasurable the affected metric is left
// unset (callers count the skip).
inline Metrics evaluate_metrics(const Spectrogram& pred, const Spectrogram& target) {
  if (pred.values.shape != target.values.shape)
    throw std::invalid_argument("evaluate_metrics: shape mismatch");
  if (pred.sample_rate != target.sample_rate || pred.hop != target.hop ||
      pred.window_len != target.window_len)
    throw std::invalid_argument("evaluate_metrics: analysis settings differ");
  Metrics m;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i)
    acc += std::abs(pred.values.data[i] - target.values.data[i]);
  m.stft_error = acc / static_cast<double>(pred.values.size());

  const double frame_rate = target.sample_rate / static_cast<double>(target.hop);
  try {
    const auto env_p = spectrogram_envelope(pred.values);
    const auto env_t = spectrogram_envelope(target.values);
    try {
      m.rte = std::abs(rt60_estimate(schroeder_edc(env_p), frame_rate) -
                       rt60_estimate(schroeder_edc(env_t), frame_rate));
    } catch (const UnmeasurableError&) {
    } catch (const std::invalid_argument&) {  // all-zero envelope
    }
    try {
      m.drre = std::abs(drr(env_p) - drr(env_t));
    } catch (const std::invalid_argument&) {
    }
  } catch (const std::invalid_argument&) {
  }
  return m;
}

}  // namespace echomap::dsp
