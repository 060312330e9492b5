#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "echomap/autodiff/tensor.hpp"

namespace echomap::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
};

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1.0});
}

// Central-difference check of a scalar-valued builder. `build` receives a
// fresh graph plus leaf tensors for each input (all grad-requiring) and must
// return the scalar root. Inputs are perturbed entry by entry, so keep them
// small.
inline GradCheckResult check_gradients(
    const std::vector<NdArray>& inputs,
    const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& build, double h = 1e-5) {
  auto eval = [&](const std::vector<NdArray>& xs) {
    Graph g;
    std::vector<Tensor> leaves;
    leaves.reserve(xs.size());
    for (const NdArray& x : xs) leaves.push_back(g.leaf(x, true));
    return build(g, leaves).scalar();
  };

  // Analytic gradients from one reverse pass.
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const NdArray& x : inputs) leaves.push_back(g.leaf(x, true));
    Tensor root = build(g, leaves);
    g.backward(root);
    for (const Tensor& t : leaves) {
      auto gr = t.grad();
      analytic.emplace_back(gr.begin(), gr.end());
    }
  }

  GradCheckResult res;
  std::vector<NdArray> work = inputs;
  for (std::size_t li = 0; li < inputs.size(); ++li) {
    for (std::size_t i = 0; i < inputs[li].size(); ++i) {
      const double orig = work[li].data[i];
      work[li].data[i] = orig + h;
      const double fp = eval(work);
      work[li].data[i] = orig - h;
      const double fm = eval(work);
      work[li].data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[li][i], numeric));
      ++res.entries;
    }
  }
  return res;
}

}  // namespace echomap::ad
