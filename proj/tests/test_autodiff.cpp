#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "echomap/autodiff/gradcheck.hpp"
#include "echomap/autodiff/ops.hpp"
#include "echomap/autodiff/optim.hpp"
#include "echomap/common.hpp"

using namespace echomap;
using namespace echomap::ad;

namespace {

NdArray random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  NdArray a = NdArray::zeros(std::move(shape));
  for (double& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

// Keeps piecewise-linear ops away from their kinks so finite differences stay
// well posed.
NdArray random_away_from(Shape shape, Rng& rng, double kink, double margin) {
  NdArray a = random_array(std::move(shape), rng);
  for (double& v : a.data) {
    if (std::abs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin);
  }
  return a;
}

// FD-checks sum(f(inputs) * W) with a weight drawn once, so every output
// entry contributes to the scalar root and the function is identical across
// the probe evaluations.
template <class F>
double weighted_fd(std::vector<NdArray> ins, Rng& rng, F f) {
  NdArray w;
  {
    Graph g;
    std::vector<Tensor> ts;
    ts.reserve(ins.size());
    for (const NdArray& a : ins) ts.push_back(g.leaf(a, false));
    w = random_array(f(g, ts).shape(), rng);
  }
  auto r = check_gradients(std::move(ins), [f, w](Graph& g, const std::vector<Tensor>& ts) {
    return reduce_all(mul(f(g, ts), g.constant(w)), Reduce::Sum);
  });
  return r.max_rel_err;
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Graph g;
  Tensor a = g.leaf(NdArray({3}, {1.0, -2.0, 3.0}), false);
  Tensor b = g.leaf(NdArray({3}, {0.5, 4.0, -1.0}), false);
  Tensor s = g.constant_scalar(2.0);

  auto v = add(a, b).values();
  REQUIRE(v[0] == 1.5);
  REQUIRE(v[1] == 2.0);
  REQUIRE(v[2] == 2.0);

  v = sub(a, b).values();
  REQUIRE(v[1] == -6.0);

  v = mul(a, b).values();
  REQUIRE(v[2] == -3.0);

  v = add(a, s).values();  // scalar broadcast
  REQUIRE(v[0] == 3.0);
  REQUIRE(v[1] == 0.0);

  v = mul(s, a).values();
  REQUIRE(v[2] == 6.0);

  v = scale(a, -1.5).values();
  REQUIRE(v[0] == -1.5);

  v = relu(a).values();
  REQUIRE(v[0] == 1.0);
  REQUIRE(v[1] == 0.0);

  v = square(a).values();
  REQUIRE(v[1] == 4.0);

  v = clamp_min(a, 0.5).values();
  REQUIRE(v[0] == 1.0);
  REQUIRE(v[1] == 0.5);

  Tensor p = g.leaf(NdArray({2}, {0.25, 4.0}), false);
  v = ad::sqrt(p).values();
  REQUIRE(v[0] == 0.5);
  REQUIRE(v[1] == 2.0);

  v = ad::log1p(g.leaf(NdArray({1}, {std::exp(1.0) - 1.0}), false)).values();
  REQUIRE(v[0] == Catch::Approx(1.0).margin(1e-14));

  v = ad::vlog(g.leaf(NdArray({2}, {1.0, std::exp(2.0)}), false)).values();
  REQUIRE(v[0] == 0.0);
  REQUIRE(v[1] == Catch::Approx(2.0).margin(1e-14));

  v = ad::exp(g.leaf(NdArray({1}, {0.0}), false)).values();
  REQUIRE(v[0] == 1.0);
}

TEST_CASE("shape mismatches are rejected") {
  Graph g;
  Tensor a = g.leaf(NdArray::zeros({3}), false);
  Tensor b = g.leaf(NdArray::zeros({4}), false);
  REQUIRE_THROWS_AS(add(a, b), std::invalid_argument);
  REQUIRE_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul matches a triple-loop oracle") {
  Rng rng(derive_seed(7, "matmul"));
  const int M = 5, K = 7, N = 4;
  NdArray a = random_array({M, K}, rng);
  NdArray b = random_array({K, N}, rng);

  std::vector<double> expect(static_cast<std::size_t>(M) * N, 0.0);
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k)
        expect[static_cast<std::size_t>(m) * N + n] +=
            a.data[static_cast<std::size_t>(m) * K + k] * b.data[static_cast<std::size_t>(k) * N + n];

  Graph g;
  auto got = matmul(g.leaf(a, false), g.leaf(b, false)).values();
  for (std::size_t i = 0; i < expect.size(); ++i)
    REQUIRE(got[i] == Catch::Approx(expect[i]).margin(1e-12));
}

TEST_CASE("conv2d matches a direct six-loop oracle") {
  Rng rng(derive_seed(7, "conv"));
  const int Cin = 2, H = 5, W = 6, Cout = 3, kh = 3, kw = 3, sh = 2, sw = 1, ph = 1, pw = 1;
  NdArray x = random_array({Cin, H, W}, rng);
  NdArray w = random_array({Cout, Cin, kh, kw}, rng);

  const int Ho = (H + 2 * ph - kh) / sh + 1;
  const int Wo = (W + 2 * pw - kw) / sw + 1;
  std::vector<double> expect(static_cast<std::size_t>(Cout) * Ho * Wo, 0.0);
  for (int co = 0; co < Cout; ++co)
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo)
        for (int ci = 0; ci < Cin; ++ci)
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
              const int ih = ho * sh - ph + u, iw = wo * sw - pw + v;
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
              expect[(static_cast<std::size_t>(co) * Ho + ho) * Wo + wo] +=
                  x.data[(static_cast<std::size_t>(ci) * H + ih) * W + iw] *
                  w.data[((static_cast<std::size_t>(co) * Cin + ci) * kh + u) * kw + v];
            }

  Graph g;
  Tensor y = conv2d(g.leaf(x, false), g.leaf(w, false), sh, sw, ph, pw);
  REQUIRE(y.shape() == Shape{Cout, Ho, Wo});
  auto got = y.values();
  for (std::size_t i = 0; i < expect.size(); ++i)
    REQUIRE(got[i] == Catch::Approx(expect[i]).margin(1e-12));
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x;w), y> must equal <x, convT(y;w)> when geometries line up.
  Rng rng(derive_seed(7, "adjoint"));
  const int Cin = 2, H = 6, W = 8, Cout = 3, kh = 4, kw = 4, s = 2, p = 1;
  NdArray x = random_array({Cin, H, W}, rng);
  NdArray w = random_array({Cout, Cin, kh, kw}, rng);
  const int Ho = (H + 2 * p - kh) / s + 1;
  const int Wo = (W + 2 * p - kw) / s + 1;
  NdArray y = random_array({Cout, Ho, Wo}, rng);

  Graph g;
  auto cx = conv2d(g.leaf(x, false), g.leaf(w, false), s, s, p, p).values();
  // Same weight buffer read as [Cout,Cin,kh,kw] serves as convT's
  // [Cin',Cout',kh,kw] with the roles of the channel axes swapped.
  Tensor wt = g.leaf(NdArray({Cout, Cin, kh, kw}, w.data), false);
  Tensor yt = g.leaf(y, false);
  Tensor back = conv_transpose2d(yt, wt, s, s, p, p);
  REQUIRE(back.shape() == Shape{Cin, H, W});
  auto bx = back.values();

  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y.data[i];
  for (std::size_t i = 0; i < bx.size(); ++i) rhs += bx[i] * x.data[i];
  REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12));
}

TEST_CASE("softmax and layer_norm forward oracles") {
  Graph g;
  Tensor x = g.leaf(NdArray({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0}), false);
  auto sm = softmax(x).values();
  for (int r = 0; r < 2; ++r) {
    double s = sm[r * 3] + sm[r * 3 + 1] + sm[r * 3 + 2];
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  }
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  REQUIRE(sm[0] == Catch::Approx(e1 / (e1 + e2 + e3)).margin(1e-12));

  Tensor gamma = g.leaf(NdArray({3}, {1.0, 2.0, 0.5}), false);
  Tensor beta = g.leaf(NdArray({3}, {0.0, -1.0, 2.0}), false);
  auto ln = layer_norm(x, gamma, beta).values();
  // Row 0: mean 2, biased variance 2/3.
  const double rs = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  REQUIRE(ln[0] == Catch::Approx(1.0 * (1.0 - 2.0) * rs + 0.0).margin(1e-12));
  REQUIRE(ln[1] == Catch::Approx(2.0 * (2.0 - 2.0) * rs - 1.0).margin(1e-12));
  REQUIRE(ln[2] == Catch::Approx(0.5 * (3.0 - 2.0) * rs + 2.0).margin(1e-12));
}

TEST_CASE("reductions and reverse_cumsum forward") {
  Graph g;
  Tensor x = g.leaf(NdArray({2, 3}, {1.0, 5.0, 2.0, -4.0, 0.0, 3.0}), false);
  auto s0 = reduce(x, 0, Reduce::Sum).values();
  REQUIRE(s0[0] == -3.0);
  REQUIRE(s0[1] == 5.0);
  REQUIRE(s0[2] == 5.0);
  auto m1 = reduce(x, 1, Reduce::Mean).values();
  REQUIRE(m1[0] == Catch::Approx(8.0 / 3.0));
  auto x1 = reduce(x, 1, Reduce::Max).values();
  REQUIRE(x1[0] == 5.0);
  REQUIRE(x1[1] == 3.0);
  REQUIRE(reduce_all(x, Reduce::Sum).scalar() == 7.0);
  REQUIRE(reduce_all(x, Reduce::Max).scalar() == 5.0);

  auto rc = reverse_cumsum(x).values();
  REQUIRE(rc[0] == 8.0);
  REQUIRE(rc[1] == 7.0);
  REQUIRE(rc[2] == 2.0);
  REQUIRE(rc[3] == -1.0);
  REQUIRE(rc[5] == 3.0);
}

TEST_CASE("scatter_max forward semantics") {
  Graph g;
  // Rows 0 and 2 collide in cell 1; row 1 lands in cell 0; row 3 is dropped.
  Tensor src = g.leaf(NdArray({4, 2}, {1.0, -5.0, 2.0, 0.5, 3.0, -7.0, 9.0, 9.0}), false);
  Tensor out = scatter_max(src, {1, 0, 1, -1}, 3);
  REQUIRE(out.shape() == Shape{3, 2});
  auto v = out.values();
  REQUIRE(v[0] == 2.0);   // cell 0, col 0
  REQUIRE(v[1] == 0.5);   // cell 0, col 1
  REQUIRE(v[2] == 3.0);   // cell 1, col 0: max(1,3)
  REQUIRE(v[3] == -5.0);  // cell 1, col 1: max(-5,-7) stays negative
  REQUIRE(v[4] == 0.0);   // cell 2 untouched -> exactly zero
  REQUIRE(v[5] == 0.0);
}

TEST_CASE("l1_masked forward") {
  Graph g;
  Tensor p = g.leaf(NdArray({4}, {1.0, 2.0, 3.0, 4.0}), false);
  Tensor t = g.leaf(NdArray({4}, {0.0, 4.0, 3.0, 1.0}), false);
  Tensor m = g.leaf(NdArray({4}, {1.0, 1.0, 0.0, 1.0}), false);
  REQUIRE(l1_masked(p, t, m).scalar() == Catch::Approx((1.0 + 2.0 + 3.0) / 3.0));
  Tensor zero_mask = g.leaf(NdArray::zeros({4}), false);
  REQUIRE(l1_masked(p, t, zero_mask).scalar() == 0.0);
}

TEST_CASE("backward mechanics") {
  SECTION("shared subexpression accumulates") {
    Graph g;
    Tensor x = g.leaf(NdArray({1}, {3.0}), true);
    Tensor y = add(x, x);
    g.backward(y);
    REQUIRE(x.grad()[0] == 2.0);
  }
  SECTION("repeated backward is an error") {
    Graph g;
    Tensor x = g.leaf(NdArray({1}, {3.0}), true);
    Tensor y = square(x);
    g.backward(y);
    REQUIRE_THROWS_AS(g.backward(y), std::logic_error);
  }
  SECTION("non-scalar root is rejected") {
    Graph g;
    Tensor x = g.leaf(NdArray({2}, {1.0, 2.0}), true);
    Tensor y = square(x);
    REQUIRE_THROWS_AS(g.backward(y), std::invalid_argument);
  }
  SECTION("root detached from parameters is rejected") {
    Graph g;
    Tensor x = g.leaf(NdArray({1}, {1.0}), false);
    Tensor y = square(x);
    REQUIRE_THROWS_AS(g.backward(y), std::invalid_argument);
  }
  SECTION("grad access before backward is an error") {
    Graph g;
    Tensor x = g.leaf(NdArray({1}, {1.0}), true);
    REQUIRE_THROWS_AS(x.grad(), std::logic_error);
  }
}

TEST_CASE("non-finite forward values raise immediately") {
  Graph g;
  Tensor big = g.leaf(NdArray({1}, {1e308}), false);
  REQUIRE_THROWS_AS(square(big), std::runtime_error);     // overflow -> inf
  Tensor neg = g.leaf(NdArray({1}, {-2.0}), false);
  REQUIRE_THROWS_AS(ad::log1p(neg), std::runtime_error);  // NaN domain
  REQUIRE_THROWS_AS(ad::sqrt(neg), std::runtime_error);   // NaN domain
  Tensor huge = g.leaf(NdArray({1}, {800.0}), false);
  REQUIRE_THROWS_AS(ad::exp(huge), std::runtime_error);   // overflow
  Tensor zero = g.leaf(NdArray({1}, {0.0}), false);
  REQUIRE_THROWS_AS(ad::vlog(zero), std::runtime_error);  // -inf
}

TEST_CASE("finite-difference checks: smooth single-input ops") {
  Rng rng(derive_seed(11, "fd-smooth"));
  const double tol = 1e-6;

  auto one = [](auto f) {
    return [f](Graph& g, const std::vector<Tensor>& t) { return f(g, t[0]); };
  };

  REQUIRE(weighted_fd({random_array({3, 4}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return square(x); })) < tol);
  REQUIRE(weighted_fd({random_array({6}, rng, 0.5, 2.0)}, rng,
                      one([](Graph&, const Tensor& x) { return ad::sqrt(x); })) < tol);
  REQUIRE(weighted_fd({random_array({6}, rng, -0.5, 2.0)}, rng,
                      one([](Graph&, const Tensor& x) { return ad::log1p(x); })) < tol);
  REQUIRE(weighted_fd({random_array({6}, rng, 0.2, 3.0)}, rng,
                      one([](Graph&, const Tensor& x) { return ad::vlog(x); })) < tol);
  REQUIRE(weighted_fd({random_array({6}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return ad::exp(x); })) < tol);
  REQUIRE(weighted_fd({random_array({5}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return scale(x, -2.5); })) < tol);
  REQUIRE(weighted_fd({random_array({3, 5}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return softmax(x); })) < tol);
  REQUIRE(weighted_fd({random_array({2, 7}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return reverse_cumsum(x); })) < tol);
  REQUIRE(weighted_fd({random_array({3, 4}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return transpose2d(x); })) < tol);
  REQUIRE(weighted_fd({random_array({3, 4}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return reshape(x, {2, 6}); })) < tol);
  REQUIRE(weighted_fd({random_array({5, 3}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return slice_first(x, 1, 3); })) < tol);
  REQUIRE(weighted_fd({random_array({4, 3}, rng)}, rng,
                      one([](Graph&, const Tensor& x) { return reduce(x, 0, Reduce::Sum); })) < tol);
  REQUIRE(weighted_fd({random_array({4, 3}, rng)}, rng, one([](Graph&, const Tensor& x) {
                        return reduce(x, 1, Reduce::Mean);
                      })) < tol);
}

TEST_CASE("finite-difference checks: multi-input ops") {
  Rng rng(derive_seed(11, "fd-multi"));
  const double tol = 1e-6;

  REQUIRE(weighted_fd({random_array({3, 2}, rng), random_array({3, 2}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return add(t[0], t[1]); }) < tol);
  REQUIRE(weighted_fd({random_array({3, 2}, rng), random_array({1}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return add(t[0], t[1]); }) < tol);
  REQUIRE(weighted_fd({random_array({3, 2}, rng), random_array({3, 2}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return sub(t[0], t[1]); }) < tol);
  REQUIRE(weighted_fd({random_array({3, 2}, rng), random_array({3, 2}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return mul(t[0], t[1]); }) < tol);
  REQUIRE(weighted_fd({random_array({1}, rng), random_array({4}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return mul(t[0], t[1]); }) < tol);
  REQUIRE(weighted_fd({random_array({3, 4}, rng), random_array({4, 2}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return matmul(t[0], t[1]); }) <
          tol);
  REQUIRE(weighted_fd({random_array({2, 5, 5}, rng), random_array({3, 2, 3, 3}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) {
                        return conv2d(t[0], t[1], 2, 1, 1, 1);
                      }) < tol);
  REQUIRE(weighted_fd({random_array({2, 3, 3}, rng), random_array({2, 3, 4, 4}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) {
                        return conv_transpose2d(t[0], t[1], 2, 2, 1, 1);
                      }) < tol);
  REQUIRE(weighted_fd(
              {random_array({3, 5}, rng), random_array({5}, rng, 0.5, 1.5), random_array({5}, rng)},
              rng,
              [](Graph&, const std::vector<Tensor>& t) {
                return layer_norm(t[0], t[1], t[2]);
              }) < tol);
  REQUIRE(weighted_fd({random_array({3, 4}, rng), random_array({4}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return bias_rows(t[0], t[1]); }) <
          tol);
  REQUIRE(weighted_fd({random_array({3, 2, 2}, rng), random_array({3}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) {
                        return bias_channels(t[0], t[1]);
                      }) < tol);
  REQUIRE(weighted_fd({random_array({2, 3}, rng), random_array({4, 3}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) {
                        return concat_first({t[0], t[1]});
                      }) < tol);
  REQUIRE(weighted_fd({random_array({3, 2}, rng), random_array({3, 4}, rng)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) {
                        return concat_cols({t[0], t[1]});
                      }) < tol);

  // l1_masked is already scalar-valued; pred/target kept apart from the |.| kink.
  auto r = check_gradients(
      {random_array({6}, rng, -1.0, -0.2), random_array({6}, rng, 0.2, 1.0),
       random_array({6}, rng, 0.5, 1.5)},
      [](Graph&, const std::vector<Tensor>& t) { return l1_masked(t[0], t[1], t[2]); });
  REQUIRE(r.max_rel_err < tol);
}

TEST_CASE("finite-difference checks: piecewise ops away from kinks") {
  Rng rng(derive_seed(11, "fd-kinks"));
  const double tol = 1e-4;

  REQUIRE(weighted_fd({random_away_from({3, 4}, rng, 0.0, 0.05)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) { return relu(t[0]); }) < tol);
  REQUIRE(weighted_fd({random_away_from({8}, rng, 0.25, 0.05)}, rng,
                      [](Graph&, const std::vector<Tensor>& t) {
                        return clamp_min(t[0], 0.25);
                      }) < tol);

  // Distinct entries keep max selections stable under the probe step.
  NdArray mx({2, 4}, {0.1, 0.9, 0.4, -0.3, 0.7, -0.8, 0.2, 0.5});
  REQUIRE(weighted_fd({mx}, rng, [](Graph&, const std::vector<Tensor>& t) {
            return reduce(t[0], 1, Reduce::Max);
          }) < tol);
  auto r2 = check_gradients({mx}, [](Graph&, const std::vector<Tensor>& t) {
    return reduce_all(t[0], Reduce::Max);
  });
  REQUIRE(r2.max_rel_err < tol);

  NdArray src({4, 2}, {0.3, -0.5, 0.9, 0.1, -0.2, 0.6, 0.4, -0.9});
  std::vector<long long> cells{1, 0, 1, -1};
  REQUIRE(weighted_fd({src}, rng, [cells](Graph&, const std::vector<Tensor>& t) {
            return scatter_max(t[0], cells, 3);
          }) < tol);
}

TEST_CASE("composite expression gradcheck") {
  Rng rng(derive_seed(11, "fd-composite"));
  NdArray a = random_array({3, 3}, rng, 0.2, 1.2);
  NdArray b = random_array({3, 3}, rng, 0.2, 1.2);
  auto r = check_gradients({a, b}, [](Graph& g, const std::vector<Tensor>& t) {
    Tensor h = matmul(t[0], t[1]);
    Tensor z = ad::log1p(square(h));
    Tensor sm = softmax(z);
    return reduce_all(mul(sm, ad::exp(scale(h, 0.1))), Reduce::Sum);
  });
  REQUIRE(r.max_rel_err < 1e-6);
}

TEST_CASE("adam single step matches hand computation") {
  NdArray w = NdArray::zeros({1});
  NdArray g0({1}, {1.0});
  AdamState st;
  AdamConfig cfg;  // lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-5
  adam_step(w, g0, st, cfg);
  REQUIRE(st.t == 1);
  REQUIRE(st.m[0] == Catch::Approx(0.1).margin(1e-15));
  REQUIRE(st.v[0] == Catch::Approx(0.001).margin(1e-18));
  // mhat = vhat = 1 exactly, so the update is lr / (1 + eps).
  REQUIRE(w.data[0] == Catch::Approx(-1e-4 / (1.0 + 1e-5)).margin(1e-18));

  adam_step(w, g0, st, cfg);
  // With a constant gradient the bias-corrected moments stay exactly 1.
  REQUIRE(w.data[0] == Catch::Approx(-2e-4 / (1.0 + 1e-5)).margin(1e-18));
}

TEST_CASE("adam vector path matches scalar reference over many steps") {
  Rng rng(derive_seed(13, "adam"));
  const int n = 5, steps = 50;
  NdArray w = random_array({n}, rng);
  std::vector<double> wr = w.data;
  std::vector<double> mr(n, 0.0), vr(n, 0.0);
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 3e-3;
  for (int s = 1; s <= steps; ++s) {
    NdArray g = random_array({n}, rng);
    adam_step(w, g, st, cfg);
    const double bc1 = 1.0 - std::pow(cfg.beta1, s);
    const double bc2 = 1.0 - std::pow(cfg.beta2, s);
    for (int i = 0; i < n; ++i) {
      mr[i] = cfg.beta1 * mr[i] + (1 - cfg.beta1) * g.data[i];
      vr[i] = cfg.beta2 * vr[i] + (1 - cfg.beta2) * g.data[i] * g.data[i];
      wr[i] -= cfg.lr * (mr[i] / bc1) / (std::sqrt(vr[i] / bc2) + cfg.eps);
    }
  }
  for (int i = 0; i < n; ++i) REQUIRE(w.data[i] == Catch::Approx(wr[i]).margin(1e-15));
}

TEST_CASE("learning-rate schedule") {
  const double base = 1e-4;
  const long long total = 1000;
  REQUIRE(lr_at(0, total, base, LrSchedule::WarmupDecay) == 0.0);
  REQUIRE(lr_at(100, total, base, LrSchedule::WarmupDecay) == Catch::Approx(base / 2));
  REQUIRE(lr_at(200, total, base, LrSchedule::WarmupDecay) == Catch::Approx(base));
  REQUIRE(lr_at(400, total, base, LrSchedule::WarmupDecay) == Catch::Approx(5e-5));
  REQUIRE(lr_at(600, total, base, LrSchedule::WarmupDecay) == Catch::Approx(base / 100));
  REQUIRE(lr_at(999, total, base, LrSchedule::WarmupDecay) == Catch::Approx(base / 100));
  REQUIRE(lr_at(123, total, base, LrSchedule::Constant) == base);
  REQUIRE_THROWS_AS(lr_at(-1, total, base, LrSchedule::Constant), std::invalid_argument);
  REQUIRE_THROWS_AS(lr_at(total, total, base, LrSchedule::Constant), std::invalid_argument);
}

TEST_CASE("deterministic rng utilities") {
  Rng a(42), b(42), c(43);
  bool all_same = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform01(), y = b.uniform01(), z = c.uniform01();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    all_same = all_same && (x == y);
    any_diff = any_diff || (x != z);
  }
  REQUIRE(all_same);
  REQUIRE(any_diff);

  Rng d(7);
  for (int i = 0; i < 100; ++i) REQUIRE(d.below(13) < 13);

  Rng e(9);
  auto pick = e.sample_without_replacement(10, 4);
  REQUIRE(pick.size() == 4);
  for (std::size_t i = 0; i < pick.size(); ++i)
    for (std::size_t j = i + 1; j < pick.size(); ++j) REQUIRE(pick[i] != pick[j]);

  REQUIRE(derive_seed(1, "a") != derive_seed(1, "b"));
  REQUIRE(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  REQUIRE(derive_seed(1, "a", 2, 3) == derive_seed(1, "a", 2, 3));
}

TEST_CASE("order-insensitive matmul matches the plain one") {
  Rng rng(314);
  NdArray a = random_array({5, 7}, rng), b = random_array({7, 4}, rng);

  SECTION("forward agreement") {
    Graph g;
    auto ta = g.constant(a), tb = g.constant(b);
    auto plain = matmul(ta, tb).values();
    auto sorted = matmul_sorted(ta, tb).values();
    for (std::size_t i = 0; i < plain.size(); ++i)
      REQUIRE(sorted[i] == Catch::Approx(plain[i]).margin(1e-12));
  }

  SECTION("permuting the inner axis leaves the product bit-identical") {
    std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
    NdArray ap = NdArray::zeros({5, 7}), bp = NdArray::zeros({7, 4});
    for (int k = 0; k < 7; ++k) {
      for (int m = 0; m < 5; ++m)
        ap.data[static_cast<std::size_t>(m) * 7 + k] =
            a.data[static_cast<std::size_t>(m) * 7 + perm[static_cast<std::size_t>(k)]];
      for (int n = 0; n < 4; ++n)
        bp.data[static_cast<std::size_t>(k) * 4 + n] =
            b.data[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)]) * 4 + n];
    }
    Graph g;
    auto x = matmul_sorted(g.constant(a), g.constant(b)).values();
    auto y = matmul_sorted(g.constant(ap), g.constant(bp)).values();
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(x[i] == y[i]);
  }

  SECTION("gradients") {
    double err = weighted_fd({a, b}, rng, [](Graph&, const std::vector<Tensor>& ts) {
      return matmul_sorted(ts[0], ts[1]);
    });
    CHECK(err < 1e-6);
  }
}
