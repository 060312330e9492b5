#pragma once

#include <cmath>
#include <vector>

#include "echomap/autodiff/ops.hpp"
#include "echomap/model/config.hpp"

namespace echomap::model {

// Mean over queries of the (1/(2FT))-normalized L1 spectrogram error; with
// every position weighted once this is exactly the global mean.
inline ad::Tensor loss_stft(const ad::Tensor& pred, const ad::NdArray& target) {
  if (pred.shape() != target.shape)
    throw std::invalid_argument("loss_stft: prediction/target shape mismatch");
  ad::Graph& g = pred.graph();
  return ad::l1_masked(pred, g.constant(target), g.constant(ad::NdArray::full(target.shape, 1.0)));
}

// ---------------------------------------------------------------------------
// Energy-decay matching loss. Per query and channel: frame energies from the
// log1p spectrogram, backward-integrated to an energy decay curve, expressed
// in dB relative to the curve's start (floored at 1e-10), compared L1 against
// the target's curve. Frames where the target curve has fully decayed are
// masked out and receive no gradient.
// ---------------------------------------------------------------------------
inline ad::Tensor loss_edm(const ad::Tensor& pred, const ad::NdArray& target) {
  const ad::Shape& s = target.shape;
  if (pred.shape() != s || s.size() != 4 || s[1] != 2)
    throw std::invalid_argument("loss_edm: need matching [N',2,F,T] shapes");
  const int nq = s[0], F = s[2], T = s[3];
  ad::Graph& g = pred.graph();
  const double floor_ln = std::log(1e-10);
  const double db_scale = 10.0 / std::log(10.0);

  // target side: plain arithmetic mirroring the differentiable chain below
  // operation for operation, so identical inputs give identical curves
  ad::NdArray tdb = ad::NdArray::zeros({nq * 2, T});
  ad::NdArray mask = ad::NdArray::zeros({nq * 2, T});
  for (int q = 0; q < nq; ++q)
    for (int c = 0; c < 2; ++c) {
      std::vector<double> edc(static_cast<std::size_t>(T), 0.0);
      double acc = 0.0;
      for (int t = T - 1; t >= 0; --t) {
        double e = 0.0;
        for (int f = 0; f < F; ++f) {
          const double v = target.data[static_cast<std::size_t>(((q * 2 + c) * F + f)) * T + t];
          const double a = std::exp(v) - 1.0;
          e += a * a;
        }
        acc += e;
        edc[static_cast<std::size_t>(t)] = acc;
      }
      if (!(edc[0] > 0.0))
        throw std::invalid_argument("loss_edm: target channel carries no energy");
      const double ln0 = std::log(std::max(edc[0], 1e-30));
      for (int t = 0; t < T; ++t) {
        const std::size_t at = static_cast<std::size_t>(q * 2 + c) * T + t;
        const double rel = std::log(std::max(edc[static_cast<std::size_t>(t)], 1e-30)) - ln0;
        tdb.data[at] = db_scale * std::max(rel, floor_ln);
        mask.data[at] = edc[static_cast<std::size_t>(t)] > 1e-10 * edc[0] ? 1.0 : 0.0;
      }
    }

  // prediction side: the same curve, built from differentiable pieces
  std::vector<ad::Tensor> rows;
  rows.reserve(static_cast<std::size_t>(nq) * 2);
  for (int q = 0; q < nq; ++q) {
    ad::Tensor pq = ad::reshape(ad::slice_first(pred, q, 1), {2, F, T});
    for (int c = 0; c < 2; ++c) {
      ad::Tensor pc = ad::reshape(ad::slice_first(pq, c, 1), {F, T});
      ad::Tensor amp = ad::sub(ad::exp(pc), g.constant_scalar(1.0));
      ad::Tensor energy = ad::reduce(ad::square(amp), 0, ad::Reduce::Sum);  // [T]
      ad::Tensor edc = ad::clamp_min(ad::reverse_cumsum(energy), 1e-30);
      ad::Tensor ln_edc = ad::vlog(edc);
      ad::Tensor rel = ad::sub(ln_edc, ad::slice_first(ln_edc, 0, 1));
      ad::Tensor db = ad::scale(ad::clamp_min(rel, floor_ln), db_scale);
      rows.push_back(ad::reshape(db, {1, T}));
    }
  }
  ad::Tensor pred_db = ad::concat_first(rows);  // [2N',T]
  return ad::l1_masked(pred_db, g.constant(tdb), g.constant(mask));
}

inline ad::Tensor loss_total(const ad::Tensor& pred, const ad::NdArray& target, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss_total: negative weight");
  ad::Tensor l = loss_stft(pred, target);
  if (lambda == 0.0) return l;
  return ad::add(l, ad::scale(loss_edm(pred, target), lambda));
}

}  // namespace echomap::model
