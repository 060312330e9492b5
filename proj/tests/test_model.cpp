#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>

#include "echomap/autodiff/gradcheck.hpp"
#include "echomap/common.hpp"
#include "echomap/dsp/acoustics.hpp"
#include "echomap/model/loss.hpp"
#include "echomap/model/network.hpp"

using namespace echomap;
using namespace echomap::model;

namespace {

ad::NdArray random_array(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ad::NdArray a = ad::NdArray::zeros(std::move(shape));
  for (double& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

scene::RaycastScan fake_scan(int width, Rng& rng) {
  scene::RaycastScan s;
  s.camera = scene::Pose{2.0, 2.0, 2.0, 2.0, rng.below_int(4)};
  s.depth.resize(static_cast<std::size_t>(width));
  s.material.resize(static_cast<std::size_t>(width));
  for (int i = 0; i < width; ++i) {
    s.depth[static_cast<std::size_t>(i)] = rng.uniform(0.3, 3.0);
    s.material[static_cast<std::size_t>(i)] = rng.below_int(8);
  }
  return s;
}

dsp::Spectrogram fake_spec(int F, int T, Rng& rng) {
  dsp::Spectrogram sp;
  sp.values = random_array({2, F, T}, rng, 0.0, 1.5);
  return sp;
}

EpisodeInputs fake_inputs(const ModelConfig& cfg, int n, Rng& rng) {
  EpisodeInputs in;
  in.ref_x = 2.0;
  in.ref_y = 2.0;
  for (int i = 0; i < n; ++i) {
    in.scans.push_back(fake_scan(cfg.scan_width, rng));
    in.echoes.push_back(fake_spec(cfg.n_freq, cfg.n_time, rng));
    const double x = 1.0 + 0.5 * i, y = 1.5;
    in.context_poses.push_back(scene::Pose{x, y, x, y, rng.below_int(4)});
  }
  return in;
}

std::vector<scene::Pose> fake_queries(int n, Rng& rng) {
  std::vector<scene::Pose> qs;
  for (int i = 0; i < n; ++i)
    qs.push_back(scene::Pose{1.0 + 0.5 * i, 1.0, 2.0, 1.0 + 0.5 * i, rng.below_int(4)});
  return qs;
}

bool all_zero(std::span<const double> v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("configs validate") {
  ModelConfig::desk().validate();
  ModelConfig::large().validate();
  ModelConfig::reduced().validate();

  ModelConfig bad = ModelConfig::desk();
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ModelConfig::desk();
  bad.patch = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ModelConfig::desk();
  bad.lambda_edm = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter store") {
  const auto cfg = ModelConfig::reduced();
  auto p = init_parameters(cfg, 5);
  auto q = init_parameters(cfg, 5);
  REQUIRE(p.tensors.size() == q.tensors.size());
  for (const auto& [name, a] : p.tensors) {
    REQUIRE(q.tensors.at(name).shape == a.shape);
    REQUIRE(q.tensors.at(name).data == a.data);
  }
  // the anticipation output layer starts at zero, nothing else does entirely
  CHECK(all_zero(std::span<const double>(p.at("ant.up0.w").data)));
  CHECK_FALSE(all_zero(std::span<const double>(p.at("vis.down0.w").data)));

  auto r = init_parameters(cfg, 6);
  CHECK(r.at("vis.down0.w").data != p.at("vis.down0.w").data);
}

TEST_CASE("visual encoder") {
  const auto cfg = ModelConfig::reduced();
  auto params = init_parameters(cfg, 11);
  Rng rng(3);
  auto scan = fake_scan(cfg.scan_width, rng);

  SECTION("desk shape contract") {
    const auto desk = ModelConfig::desk();
    auto dp = init_parameters(desk, 11);
    Rng r2(4);
    auto dscan = fake_scan(desk.scan_width, r2);
    ad::Graph g;
    auto out = visual_encoder(g, bind(g, dp, false), desk, dscan);
    CHECK(out.shape() == ad::Shape{64, 16});
  }

  SECTION("changing one ray's material changes the output") {
    ad::Graph g;
    auto b = bind(g, params, false);
    auto a = visual_encoder(g, b, cfg, scan);
    auto scan2 = scan;
    scan2.material[3] = (scan2.material[3] + 1) % 8;
    auto c = visual_encoder(g, b, cfg, scan2);
    bool differ = false;
    auto av = a.values(), cv = c.values();
    for (std::size_t i = 0; i < av.size(); ++i)
      if (av[i] != cv[i]) differ = true;
    CHECK(differ);
  }

  SECTION("width must match the config") {
    ad::Graph g;
    auto b = bind(g, params, false);
    auto bad = fake_scan(cfg.scan_width + 4, rng);
    CHECK_THROWS_AS(visual_encoder(g, b, cfg, bad), std::invalid_argument);
  }

  SECTION("gradient to the material embedding table") {
    auto res = ad::check_gradients(
        {params.at("material_embed")},
        [&](ad::Graph& g, const std::vector<ad::Tensor>& xs) {
          auto b = bind(g, params, false);
          b.tensors.at("material_embed") = xs[0];
          auto out = visual_encoder(g, b, cfg, scan);
          return ad::reduce_all(ad::mul(out, out), ad::Reduce::Sum);
        });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("anticipation residual") {
  const auto cfg = ModelConfig::reduced();
  auto params = init_parameters(cfg, 21);
  Rng rng(9);
  ad::NdArray map = random_array({cfg.c_f, cfg.m, cfg.m}, rng);

  ad::Graph g;
  auto b = bind(g, params, false);
  auto m_osm = g.constant(map);

  SECTION("zero-initialized head makes it the identity, bit for bit") {
    auto out = anticipate(b, cfg, m_osm, true);
    auto ov = out.values();
    REQUIRE(out.shape() == map.shape);
    for (std::size_t i = 0; i < map.data.size(); ++i) REQUIRE(ov[i] == map.data[i]);
  }

  SECTION("disabled returns the input tensor unchanged") {
    auto out = anticipate(b, cfg, m_osm, false);
    CHECK(out.id() == m_osm.id());
  }

  SECTION("without the residual the zero-initialized net outputs zero") {
    auto out = anticipate(b, cfg, m_osm, true, false);
    CHECK(all_zero(out.values()));
  }

  SECTION("shape mismatch is rejected") {
    auto badmap = g.constant(random_array({cfg.c_f, cfg.m / 2, cfg.m}, rng));
    CHECK_THROWS_AS(anticipate(b, cfg, badmap, true), std::invalid_argument);
  }

  SECTION("a nonzero head writes into cells the observation left empty") {
    auto tweaked = params;
    Rng r2(33);
    tweaked.at("ant.up0.w") = random_array(tweaked.at("ant.up0.w").shape, r2, -0.3, 0.3);
    ad::Graph g2;
    auto b2 = bind(g2, tweaked, false);
    ad::NdArray sparse = ad::NdArray::zeros({cfg.c_f, cfg.m, cfg.m});
    sparse.data[5] = 1.0;
    auto out = anticipate(b2, cfg, g2.constant(sparse), true);
    auto ov = out.values();
    double off_support = 0.0;
    for (std::size_t i = 0; i < ov.size(); ++i)
      if (sparse.data[i] == 0.0) off_support += std::abs(ov[i]);
    CHECK(off_support > 0.0);
  }
}

TEST_CASE("patch tokens") {
  const auto cfg = ModelConfig::desk();
  auto params = init_parameters(cfg, 31);
  Rng rng(13);

  SECTION("token count and width") {
    ad::Graph g;
    auto b = bind(g, params, false);
    auto t = patch_tokens(g, b, cfg, g.constant(random_array({cfg.c_f, cfg.m, cfg.m}, rng)));
    CHECK(t.shape() == ad::Shape{64, 64});
  }

  SECTION("zero map gives bias-only raw tokens") {
    ad::Graph g;
    auto b = bind(g, params, false);
    auto raw = patch_embed_raw(b, cfg, g.constant(ad::NdArray::zeros({cfg.c_f, cfg.m, cfg.m})));
    auto rv = raw.values();
    const auto& bias = params.at("patch.b").data;
    for (int tok = 0; tok < 64; ++tok)
      for (int d = 0; d < cfg.d_model; ++d)
        REQUIRE(rv[static_cast<std::size_t>(tok) * cfg.d_model + d] ==
                bias[static_cast<std::size_t>(d)]);
  }

  SECTION("shifting the map by one patch shifts raw tokens by one column") {
    const int P = cfg.m / cfg.patch;
    ad::NdArray map = ad::NdArray::zeros({cfg.c_f, cfg.m, cfg.m});
    for (int c = 0; c < cfg.c_f; ++c)
      for (int y = 0; y < cfg.m; ++y)
        for (int x = 0; x < cfg.m - cfg.patch; ++x)
          map.data[static_cast<std::size_t>((c * cfg.m + y)) * cfg.m + x] = rng.uniform(-1, 1);
    ad::NdArray moved = ad::NdArray::zeros({cfg.c_f, cfg.m, cfg.m});
    for (int c = 0; c < cfg.c_f; ++c)
      for (int y = 0; y < cfg.m; ++y)
        for (int x = cfg.patch; x < cfg.m; ++x)
          moved.data[static_cast<std::size_t>((c * cfg.m + y)) * cfg.m + x] =
              map.data[static_cast<std::size_t>((c * cfg.m + y)) * cfg.m + x - cfg.patch];
    ad::Graph g;
    auto b = bind(g, params, false);
    auto ra = patch_embed_raw(b, cfg, g.constant(map)).values();
    auto rb = patch_embed_raw(b, cfg, g.constant(moved)).values();
    for (int r = 0; r < P; ++r)
      for (int col = 0; col + 1 < P; ++col)
        for (int d = 0; d < cfg.d_model; ++d)
          REQUIRE(ra[static_cast<std::size_t>((r * P + col)) * cfg.d_model + d] ==
                  rb[static_cast<std::size_t>((r * P + col + 1)) * cfg.d_model + d]);
  }
}

TEST_CASE("audio tokens") {
  const auto cfg = ModelConfig::reduced();
  auto params = init_parameters(cfg, 41);
  Rng rng(7);
  auto echo = fake_spec(cfg.n_freq, cfg.n_time, rng);
  scene::Pose pose{1.0, 1.0, 1.0, 1.0, 1};
  const auto pe = mapping::sinusoidal_pose_embed(pose, 2.0, 2.0, cfg.d_pe);

  SECTION("desk output width") {
    const auto desk = ModelConfig::desk();
    auto dp = init_parameters(desk, 41);
    Rng r2(8);
    auto decho = fake_spec(desk.n_freq, desk.n_time, r2);
    const auto dpe = mapping::sinusoidal_pose_embed(pose, 2.0, 2.0, desk.d_pe);
    ad::Graph g;
    auto out = audio_token(g, bind(g, dp, false), desk, decho, dpe);
    CHECK(out.shape() == ad::Shape{1, 64});
  }

  SECTION("pose embedding reaches the output") {
    ad::Graph g;
    auto b = bind(g, params, false);
    auto a = audio_token(g, b, cfg, echo, pe);
    scene::Pose other{1.0, 1.0, 1.0, 1.0, 2};
    auto c = audio_token(g, b, cfg, echo,
                         mapping::sinusoidal_pose_embed(other, 2.0, 2.0, cfg.d_pe));
    bool differ = false;
    auto av = a.values(), cv = c.values();
    for (std::size_t i = 0; i < av.size(); ++i)
      if (av[i] != cv[i]) differ = true;
    CHECK(differ);
  }

  SECTION("gradient to the audio modality token") {
    auto res = ad::check_gradients(
        {params.at("audio_token")},
        [&](ad::Graph& g, const std::vector<ad::Tensor>& xs) {
          auto b = bind(g, params, false);
          b.tensors.at("audio_token") = xs[0];
          auto out = audio_token(g, b, cfg, echo, pe);
          return ad::reduce_all(ad::mul(out, out), ad::Reduce::Sum);
        });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("attention and the encoder-decoder") {
  const auto cfg = ModelConfig::reduced();
  auto params = init_parameters(cfg, 51);
  Rng rng(23);

  SECTION("one memory token, one query: weight 1, value passes through") {
    ModelConfig one = cfg;
    one.heads = 1;
    Parameters p;
    p.tensors["a.h0.wq"] = random_array({one.d_model, one.d_model}, rng);
    p.tensors["a.h0.wk"] = random_array({one.d_model, one.d_model}, rng);
    p.tensors["a.h0.wv"] = random_array({one.d_model, one.d_model}, rng);
    ad::NdArray eye = ad::NdArray::zeros({one.d_model, one.d_model});
    for (int i = 0; i < one.d_model; ++i)
      eye.data[static_cast<std::size_t>(i) * one.d_model + i] = 1.0;
    p.tensors["a.out.w"] = eye;
    p.tensors["a.out.b"] = ad::NdArray::zeros({one.d_model});

    ad::Graph g;
    auto b = bind(g, p, false);
    auto q = g.constant(random_array({1, one.d_model}, rng));
    auto kv = g.constant(random_array({1, one.d_model}, rng));
    auto out = multihead_attention(b, one, "a", q, kv);
    auto want = ad::matmul(kv, b("a.h0.wv")).values();
    auto got = out.values();
    for (std::size_t i = 0; i < want.size(); ++i) REQUIRE(got[i] == want[i]);

    // the single softmax weight is exactly one
    auto w = ad::softmax(g.constant(random_array({1, 1}, rng))).values();
    REQUIRE(w[0] == 1.0);
  }

  SECTION("permuting memory tokens leaves decoder outputs bit-identical") {
    const int S = 7;
    ad::NdArray mem = random_array({S, cfg.d_model}, rng);
    std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
    ad::NdArray pmem = ad::NdArray::zeros({S, cfg.d_model});
    for (int i = 0; i < S; ++i)
      for (int d = 0; d < cfg.d_model; ++d)
        pmem.data[static_cast<std::size_t>(i) * cfg.d_model + d] =
            mem.data[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * cfg.d_model +
                     d];
    std::vector<ad::NdArray> qe{random_array({cfg.pose_dim()}, rng),
                                random_array({cfg.pose_dim()}, rng)};
    ad::Graph ga, gb;
    auto outa = encode_decode(ga, bind(ga, params, false), cfg, ga.constant(mem), qe).values();
    auto outb = encode_decode(gb, bind(gb, params, false), cfg, gb.constant(pmem), qe).values();
    REQUIRE(outa.size() == outb.size());
    for (std::size_t i = 0; i < outa.size(); ++i) REQUIRE(outa[i] == outb[i]);
  }

  SECTION("replicating the whole memory k times changes nearly nothing") {
    ad::NdArray one_tok = random_array({1, cfg.d_model}, rng);
    ad::NdArray three = ad::NdArray::zeros({3, cfg.d_model});
    for (int i = 0; i < 3; ++i)
      std::copy(one_tok.data.begin(), one_tok.data.end(),
                three.data.begin() + static_cast<std::size_t>(i) * cfg.d_model);
    std::vector<ad::NdArray> qe{random_array({cfg.pose_dim()}, rng)};
    ad::Graph ga, gb;
    auto a = encode_decode(ga, bind(ga, params, false), cfg, ga.constant(one_tok), qe).values();
    auto b = encode_decode(gb, bind(gb, params, false), cfg, gb.constant(three), qe).values();
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-12));
  }

  SECTION("each query is independent of the others") {
    ad::NdArray mem = random_array({5, cfg.d_model}, rng);
    std::vector<ad::NdArray> one{random_array({cfg.pose_dim()}, rng)};
    std::vector<ad::NdArray> two = one;
    two.push_back(random_array({cfg.pose_dim()}, rng));
    ad::Graph ga, gb;
    auto a = encode_decode(ga, bind(ga, params, false), cfg, ga.constant(mem), one).values();
    auto b = encode_decode(gb, bind(gb, params, false), cfg, gb.constant(mem), two).values();
    for (int d = 0; d < cfg.d_model; ++d)
      REQUIRE(a[static_cast<std::size_t>(d)] == b[static_cast<std::size_t>(d)]);
  }
}

TEST_CASE("spectrogram head") {
  const auto cfg = ModelConfig::reduced();
  auto params = init_parameters(cfg, 61);
  Rng rng(29);

  SECTION("desk shape and nonnegativity") {
    const auto desk = ModelConfig::desk();
    auto dp = init_parameters(desk, 61);
    ad::Graph g;
    auto out = spectrogram_head(bind(g, dp, false), desk, g.constant(random_array({3, 64}, rng)));
    REQUIRE(out.shape() == ad::Shape{3, 2, 64, 128});
    for (double v : out.values()) REQUIRE(v >= 0.0);
  }

  SECTION("gradient through the transposed-conv stack") {
    ad::NdArray dec = random_array({2, cfg.d_model}, rng);
    auto res = ad::check_gradients(
        {params.at("head.up0.w"), dec},
        [&](ad::Graph& g, const std::vector<ad::Tensor>& xs) {
          auto b = bind(g, params, false);
          b.tensors.at("head.up0.w") = xs[0];
          auto out = spectrogram_head(b, cfg, xs[1]);
          return ad::reduce_all(ad::mul(out, out), ad::Reduce::Sum);
        });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("full forward pass") {
  const auto cfg = ModelConfig::reduced();
  auto params = init_parameters(cfg, 71);
  Rng rng(31);
  auto in = fake_inputs(cfg, 3, rng);
  auto queries = fake_queries(2, rng);

  SECTION("deterministic and well shaped") {
    ad::Graph ga, gb;
    auto a = predict_rir(ga, bind(ga, params, false), cfg, in, queries);
    auto b = predict_rir(gb, bind(gb, params, false), cfg, in, queries);
    REQUIRE(a.pred.shape() == ad::Shape{2, 2, cfg.n_freq, cfg.n_time});
    auto av = a.pred.values(), bv = b.pred.values();
    for (std::size_t i = 0; i < av.size(); ++i) REQUIRE(av[i] == bv[i]);
    REQUIRE(a.m_osm.has_value());
    REQUIRE(a.m_ssm.has_value());
  }

  SECTION("single-context episodes still run") {
    Rng r2(32);
    auto small = fake_inputs(cfg, 1, r2);
    ad::Graph g;
    auto out = predict_rir(g, bind(g, params, false), cfg, small, queries);
    CHECK(out.pred.shape() == ad::Shape{2, 2, cfg.n_freq, cfg.n_time});
  }

  SECTION("one hundred random forwards stay finite") {
    for (int trial = 0; trial < 100; ++trial) {
      Rng r(1000 + static_cast<std::uint64_t>(trial));
      auto pi = init_parameters(cfg, 5000 + static_cast<std::uint64_t>(trial));
      auto ins = fake_inputs(cfg, 2, r);
      auto qs = fake_queries(1, r);
      ad::Graph g;
      auto out = predict_rir(g, bind(g, pi, false), cfg, ins, qs);
      for (double v : out.pred.values()) REQUIRE(std::isfinite(v));
    }
  }

  SECTION("map-free ablation leaves map parameters without gradient") {
    ad::Graph g;
    auto b = bind(g, params, true);
    AblationFlags flags;
    flags.no_mapper = true;
    auto out = predict_rir(g, b, cfg, in, queries, flags);
    CHECK_FALSE(out.m_osm.has_value());
    ad::NdArray target = random_array({2, 2, cfg.n_freq, cfg.n_time}, rng, 0.0, 1.0);
    auto loss = loss_total(out.pred, target, cfg.lambda_edm);
    g.backward(loss);
    for (const auto& [name, t] : b.tensors) {
      if (name.rfind("ant.", 0) == 0 || name.rfind("patch.", 0) == 0 || name == "map_token")
        REQUIRE(all_zero(t.grad()));
    }
    CHECK_FALSE(all_zero(b("vfuse.w").grad()));
    CHECK_FALSE(all_zero(b("aud.proj.w").grad()));
  }

  SECTION("anticipation ablations change the map hand-off") {
    auto tweaked = params;
    Rng r2(44);
    tweaked.at("ant.up0.w") = random_array(tweaked.at("ant.up0.w").shape, r2, -0.3, 0.3);
    ad::Graph g;
    auto b = bind(g, tweaked, false);
    AblationFlags noant;
    noant.no_anticipation = true;
    auto full = predict_rir(g, b, cfg, in, queries);
    auto bypass = predict_rir(g, b, cfg, in, queries, noant);
    REQUIRE(full.m_ssm.has_value());
    REQUIRE(bypass.m_ssm.has_value());
    auto fv = full.m_ssm->values(), sv = bypass.m_ssm->values();
    bool differ = false;
    for (std::size_t i = 0; i < fv.size(); ++i)
      if (fv[i] != sv[i]) differ = true;
    CHECK(differ);
    // bypass hands the observation map through untouched
    auto ov = bypass.m_osm->values();
    for (std::size_t i = 0; i < ov.size(); ++i) REQUIRE(sv[i] == ov[i]);
  }
}

TEST_CASE("losses") {
  const int nq = 2, F = 6, T = 8;
  Rng rng(37);
  ad::NdArray target = random_array({nq, 2, F, T}, rng, 0.0, 1.2);

  SECTION("identity and shift") {
    ad::Graph g;
    auto pred = g.leaf(target, true);
    CHECK(loss_stft(pred, target).scalar() == 0.0);
    CHECK(loss_edm(pred, target).scalar() == 0.0);

    ad::NdArray shifted = target;
    for (double& v : shifted.data) v += 1.0;
    auto p2 = g.constant(shifted);
    CHECK(loss_stft(p2, target).scalar() == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("stft loss equals the scalar loop") {
    ad::NdArray pred = random_array({nq, 2, F, T}, rng, 0.0, 1.2);
    ad::Graph g;
    double want = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i)
      want += std::abs(pred.data[i] - target.data[i]);
    want /= static_cast<double>(pred.data.size());
    CHECK(loss_stft(g.constant(pred), target).scalar() == Catch::Approx(want).epsilon(1e-12));
  }

  SECTION("decay loss matches an analysis-module recomputation") {
    ad::NdArray pred = random_array({nq, 2, F, T}, rng, 0.0, 1.2);
    ad::Graph g;
    const double got = loss_edm(g.constant(pred), target).scalar();

    auto curve_db = [&](const ad::NdArray& a, int q, int c) {
      std::vector<double> energy(static_cast<std::size_t>(T), 0.0);
      for (int t = 0; t < T; ++t)
        for (int f = 0; f < F; ++f) {
          const double v = a.data[static_cast<std::size_t>(((q * 2 + c) * F + f)) * T + t];
          energy[static_cast<std::size_t>(t)] += std::expm1(v) * std::expm1(v);
        }
      return dsp::schroeder_edc(energy).db;
    };
    double num = 0.0;
    long long den = 0;
    for (int q = 0; q < nq; ++q)
      for (int c = 0; c < 2; ++c) {
        auto pd = curve_db(pred, q, c);
        auto td = curve_db(target, q, c);
        for (int t = 0; t < T; ++t) {
          if (td[static_cast<std::size_t>(t)] <= -100.0) continue;  // fully decayed
          num += std::abs(pd[static_cast<std::size_t>(t)] - td[static_cast<std::size_t>(t)]);
          ++den;
        }
      }
    REQUIRE(den > 0);
    CHECK(got == Catch::Approx(num / static_cast<double>(den)).margin(1e-10));
  }

  SECTION("fully-decayed target frames contribute nothing") {
    // target with all energy in frame zero: every later frame is masked and
    // both curves are pinned to 0 dB at the start, so the loss is exactly zero
    ad::NdArray impulse = ad::NdArray::zeros({1, 2, F, T});
    for (int c = 0; c < 2; ++c)
      for (int f = 0; f < F; ++f)
        impulse.data[static_cast<std::size_t>((c * F + f)) * T] = 1.0;
    ad::Graph g;
    ad::NdArray pred = random_array({1, 2, F, T}, rng, 0.0, 1.0);
    auto leaf = g.leaf(pred, true);
    auto l = loss_edm(leaf, impulse);
    CHECK(l.scalar() == 0.0);
    g.backward(l);
    CHECK(all_zero(leaf.grad()));
  }

  SECTION("decay-loss gradients agree with finite differences") {
    ad::NdArray pred = random_array({1, 2, 3, 5}, rng, 0.1, 1.0);
    ad::NdArray tgt = random_array({1, 2, 3, 5}, rng, 0.1, 1.0);
    auto res = ad::check_gradients({pred}, [&](ad::Graph&, const std::vector<ad::Tensor>& xs) {
      return loss_edm(xs[0], tgt);
    });
    CHECK(res.max_rel_err < 1e-4);
  }

  SECTION("total loss is the weighted sum") {
    ad::NdArray pred = random_array({nq, 2, F, T}, rng, 0.0, 1.2);
    ad::Graph g;
    auto p = g.constant(pred);
    const double ls = loss_stft(p, target).scalar();
    const double le = loss_edm(p, target).scalar();
    const double lt = loss_total(p, target, 0.01).scalar();
    CHECK(lt == Catch::Approx(ls + 0.01 * le).epsilon(1e-15));
    CHECK(loss_total(p, target, 0.0).scalar() == ls);
  }
}

TEST_CASE("full-pipeline gradients at the reduced config") {
  const auto cfg = ModelConfig::reduced();
  auto params = init_parameters(cfg, 81);
  Rng rng(41);
  auto in = fake_inputs(cfg, 2, rng);
  auto queries = fake_queries(2, rng);
  ad::NdArray target = random_array({2, 2, cfg.n_freq, cfg.n_time}, rng, 0.0, 1.2);

  auto eval = [&](const Parameters& p) {
    ad::Graph g;
    auto out = predict_rir(g, bind(g, p, false), cfg, in, queries);
    return loss_total(out.pred, target, cfg.lambda_edm).scalar();
  };

  // analytic gradients once
  std::map<std::string, std::vector<double>> analytic;
  {
    ad::Graph g;
    auto b = bind(g, params, true);
    auto out = predict_rir(g, b, cfg, in, queries);
    g.backward(loss_total(out.pred, target, cfg.lambda_edm));
    for (const auto& [name, t] : b.tensors) {
      auto gr = t.grad();
      analytic[name] = std::vector<double>(gr.begin(), gr.end());
    }
  }

  // probe ten random parameter entries, skipping the zero-initialized head
  std::vector<std::string> names;
  for (const auto& [name, a] : params.tensors)
    if (name.rfind("ant.up0", 0) != 0) names.push_back(name);
  const double h = 1e-5;
  double worst = 0.0;
  for (int probe = 0; probe < 10; ++probe) {
    const auto& name = names[rng.below(names.size())];
    Parameters work = params;
    auto& arr = work.at(name);
    const std::size_t idx = rng.below(arr.data.size());
    const double orig = arr.data[idx];
    arr.data[idx] = orig + h;
    const double fp = eval(work);
    arr.data[idx] = orig - h;
    const double fm = eval(work);
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, ad::rel_err(analytic[name][idx], numeric));
  }
  CHECK(worst < 1e-4);
}
