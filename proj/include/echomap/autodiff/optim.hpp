#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "echomap/autodiff/tensor.hpp"

namespace echomap::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;  // added to sqrt(v_hat), not inside it
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

// One Adam update, in place:
//   m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
//   w <- w - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
inline void adam_step(NdArray& w, const NdArray& g, AdamState& st, const AdamConfig& cfg) {
  if (w.size() != g.size()) throw std::invalid_argument("adam_step: param/grad size mismatch");
  if (st.m.empty()) {
    st.m.assign(w.size(), 0.0);
    st.v.assign(w.size(), 0.0);
  } else if (st.m.size() != w.size()) {
    throw std::invalid_argument("adam_step: state size mismatch");
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g.data[i];
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * gi;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    w.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    if (!std::isfinite(w.data[i])) throw std::runtime_error("adam_step: non-finite parameter");
  }
}

enum class LrSchedule { Constant, WarmupDecay };

// WarmupDecay: linear ramp 0 -> base over the first 20% of steps, then linear
// decay at twice the rate that would reach zero at the end, floored at
// base/100. Constant: base throughout.
inline double lr_at(long long step, long long total_steps, double base_lr, LrSchedule sched) {
  if (total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  if (step < 0 || step >= total_steps) throw std::invalid_argument("lr_at: step out of range");
  if (sched == LrSchedule::Constant) return base_lr;
  const double warmup = 0.2 * static_cast<double>(total_steps);
  if (warmup >= 1.0 && static_cast<double>(step) < warmup)
    return base_lr * static_cast<double>(step) / warmup;
  const double remaining = static_cast<double>(total_steps) - warmup;
  double lr = base_lr;
  if (remaining > 0.0)
    lr = base_lr * (1.0 - 2.0 * (static_cast<double>(step) - warmup) / remaining);
  return std::max(lr, base_lr / 100.0);
}

}  // namespace echomap::ad
