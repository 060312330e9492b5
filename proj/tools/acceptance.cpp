// Release gate: runs the eight checks the project must clear before a cut,
// one verdict line per check. Checks 1-5 and 8 finish in seconds; 6 trains
// the default desk configuration end to end and 7 trains twelve reduced
// ablation runs, so a full pass takes a while. Select a subset by number:
//
//   acceptance            # all eight
//   acceptance 1 2 8      # just these
//
// Exit status is nonzero when any selected check fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "echomap/autodiff/gradcheck.hpp"
#include "echomap/autodiff/ops.hpp"
#include "echomap/common.hpp"
#include "echomap/dsp/acoustics.hpp"
#include "echomap/mapping/feature_map.hpp"
#include "echomap/model/loss.hpp"
#include "echomap/model/network.hpp"
#include "echomap/pipeline/dataset.hpp"
#include "echomap/pipeline/evaluate.hpp"
#include "echomap/pipeline/train.hpp"
#include "echomap/scene/image_source.hpp"
#include "echomap/scene/raycast.hpp"

namespace fs = std::filesystem;
using namespace echomap;
using ad::Graph;
using ad::NdArray;
using ad::Tensor;

namespace {

// ---------------------------------------------------------------------------
// shared bits
// ---------------------------------------------------------------------------

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string format(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return buf;
}

NdArray random_array(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  NdArray a = NdArray::zeros(std::move(shape));
  for (double& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

NdArray random_away_from(ad::Shape shape, Rng& rng, double kink, double margin) {
  NdArray a = random_array(std::move(shape), rng);
  for (double& v : a.data)
    if (std::abs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin);
  return a;
}

// FD-checks sum(f(inputs) * W) with a weight drawn once so every output entry
// contributes to the scalar root.
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
  auto r = ad::check_gradients(std::move(ins), [f, w](Graph& g, const std::vector<Tensor>& ts) {
    return ad::reduce_all(ad::mul(f(g, ts), g.constant(w)), ad::Reduce::Sum);
  });
  return r.max_rel_err;
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

model::EpisodeInputs fake_inputs(const model::ModelConfig& cfg, int n, Rng& rng) {
  model::EpisodeInputs in;
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

// Small pipeline configuration used by the determinism check.
pipeline::RunConfig tiny_cfg() {
  pipeline::RunConfig cfg;
  cfg.seed = 11;
  auto& m = cfg.model;
  m.c_f = 8;
  m.d_model = 32;
  m.heads = 4;
  m.enc_layers = 1;
  m.dec_layers = 1;
  m.n_time = 32;
  m.m = 16;
  m.scan_width = 32;
  m.vis_channels = {6, 10};
  m.ant_channels = {6, 8, 10};
  m.aud_channels = {4, 6, 8, 10};
  m.d_mod_token = 8;
  m.head_seed_ch = 12;
  m.head_channels = {8, 6, 4, 2};
  cfg.episode.n_context = 3;
  cfg.episode.n_query = 2;
  cfg.episode.scan_width = 32;
  cfg.episode.render.length = 1024;
  cfg.train_scenes = 3;
  cfg.seen_eval = 2;
  cfg.unseen_eval = 2;
  cfg.steps = 4;
  cfg.batch = 2;
  return cfg;
}

// Ablation sweep configuration: the desk model and rooms, but a harder
// few-shot regime (4 contexts with a 60-degree view leave roughly half the
// surface unobserved) so the map and anticipation pathways have work to do.
// The raised learning rate reaches the regime where those pathways pay for
// themselves within the step budget; at the default rate they are still
// pure overhead at this many steps.
pipeline::RunConfig ablation_cfg(std::uint64_t seed) {
  pipeline::RunConfig cfg;
  cfg.seed = seed;
  cfg.episode.n_context = 4;
  cfg.episode.fov = 1.0471975511965976;  // 60 degrees
  cfg.seen_eval = 2;
  cfg.unseen_eval = 16;
  cfg.steps = 1200;
  cfg.batch = 2;
  cfg.base_lr = 3e-4;
  return cfg;
}

double unseen_stft(const pipeline::RunConfig& cfg, const pipeline::DatasetArchive& ar,
                   pipeline::Predictor which, const pipeline::Checkpoint* ck = nullptr) {
  return pipeline::evaluate_split(cfg, ar, pipeline::Split::Unseen, which, ck)
      .summary(pipeline::Split::Unseen)
      .stft;
}

// ---------------------------------------------------------------------------
// 1. gradients: every op plus the reduced end-to-end pipeline vs central
//    differences
// ---------------------------------------------------------------------------

bool check_gradient_suite(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(2024, "acceptance-grads"));

  using ad::Reduce;
  auto one = [](auto f) {
    return [f](Graph& g, const std::vector<Tensor>& t) { return f(g, t[0]); };
  };

  // smooth elementwise maps, held to the tight tolerance
  double smooth = 0.0;
  auto acc_s = [&](double e) { smooth = std::max(smooth, e); };
  acc_s(weighted_fd({random_array({3, 4}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::square(x); })));
  acc_s(weighted_fd({random_array({6}, rng, 0.5, 2.0)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::sqrt(x); })));
  acc_s(weighted_fd({random_array({6}, rng, -0.5, 2.0)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::log1p(x); })));
  acc_s(weighted_fd({random_array({6}, rng, 0.2, 3.0)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::vlog(x); })));
  acc_s(weighted_fd({random_array({6}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::exp(x); })));
  acc_s(weighted_fd({random_array({5}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::scale(x, -2.5); })));

  // everything else, held to 1e-4
  double other = 0.0;
  auto acc_o = [&](double e) { other = std::max(other, e); };
  acc_o(weighted_fd({random_array({3, 2}, rng), random_array({3, 2}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) { return ad::add(t[0], t[1]); }));
  acc_o(weighted_fd({random_array({3, 2}, rng), random_array({1}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) { return ad::add(t[0], t[1]); }));
  acc_o(weighted_fd({random_array({3, 2}, rng), random_array({3, 2}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) { return ad::sub(t[0], t[1]); }));
  acc_o(weighted_fd({random_array({3, 2}, rng), random_array({3, 2}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) { return ad::mul(t[0], t[1]); }));
  acc_o(weighted_fd({random_array({1}, rng), random_array({4}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) { return ad::mul(t[0], t[1]); }));
  acc_o(weighted_fd({random_array({3, 4}, rng), random_array({4, 2}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) { return ad::matmul(t[0], t[1]); }));
  acc_o(weighted_fd({random_array({3, 4}, rng), random_array({4, 2}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::matmul_sorted(t[0], t[1]);
                    }));
  acc_o(weighted_fd({random_array({3, 4}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::transpose2d(x); })));
  acc_o(weighted_fd({random_array({3, 4}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::reshape(x, {2, 6}); })));
  acc_o(weighted_fd({random_array({2, 5, 5}, rng), random_array({3, 2, 3, 3}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::conv2d(t[0], t[1], 2, 1, 1, 1);
                    }));
  acc_o(weighted_fd({random_array({2, 3, 3}, rng), random_array({2, 3, 4, 4}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::conv_transpose2d(t[0], t[1], 2, 2, 1, 1);
                    }));
  acc_o(weighted_fd({random_array({3, 4}, rng), random_array({4}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::bias_rows(t[0], t[1]);
                    }));
  acc_o(weighted_fd({random_array({3, 2, 2}, rng), random_array({3}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::bias_channels(t[0], t[1]);
                    }));
  acc_o(weighted_fd({random_array({2, 3}, rng), random_array({4, 3}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::concat_first({t[0], t[1]});
                    }));
  acc_o(weighted_fd({random_array({3, 2}, rng), random_array({3, 4}, rng)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::concat_cols({t[0], t[1]});
                    }));
  acc_o(weighted_fd({random_array({5, 3}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::slice_first(x, 1, 3); })));
  acc_o(weighted_fd({random_array({3, 5}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::softmax(x); })));
  acc_o(weighted_fd(
      {random_array({3, 5}, rng), random_array({5}, rng, 0.5, 1.5), random_array({5}, rng)}, rng,
      [](Graph&, const std::vector<Tensor>& t) { return ad::layer_norm(t[0], t[1], t[2]); }));
  acc_o(weighted_fd({random_array({4, 3}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::reduce(x, 0, Reduce::Sum); })));
  acc_o(weighted_fd({random_array({4, 3}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::reduce(x, 1, Reduce::Mean); })));
  acc_o(weighted_fd({random_array({2, 7}, rng)}, rng,
                    one([](Graph&, const Tensor& x) { return ad::reverse_cumsum(x); })));
  {
    auto r = ad::check_gradients({random_array({3, 4}, rng)},
                                 [](Graph&, const std::vector<Tensor>& t) {
                                   return ad::reduce_all(t[0], Reduce::Mean);
                                 });
    acc_o(r.max_rel_err);
  }
  acc_o(weighted_fd({random_away_from({3, 4}, rng, 0.0, 0.05)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) { return ad::relu(t[0]); }));
  acc_o(weighted_fd({random_away_from({8}, rng, 0.25, 0.05)}, rng,
                    [](Graph&, const std::vector<Tensor>& t) {
                      return ad::clamp_min(t[0], 0.25);
                    }));
  {
    // distinct entries keep max selections stable under probing
    NdArray mx({2, 4}, {0.1, 0.9, 0.4, -0.3, 0.7, -0.8, 0.2, 0.5});
    acc_o(weighted_fd({mx}, rng, [](Graph&, const std::vector<Tensor>& t) {
      return ad::reduce(t[0], 1, Reduce::Max);
    }));
    auto r = ad::check_gradients({mx}, [](Graph&, const std::vector<Tensor>& t) {
      return ad::reduce_all(t[0], Reduce::Max);
    });
    acc_o(r.max_rel_err);
    NdArray src({4, 2}, {0.3, -0.5, 0.9, 0.1, -0.2, 0.6, 0.4, -0.9});
    const std::vector<long long> cells{1, 0, 1, -1};
    acc_o(weighted_fd({src}, rng, [cells](Graph&, const std::vector<Tensor>& t) {
      return ad::scatter_max(t[0], cells, 3);
    }));
  }
  {
    auto r = ad::check_gradients(
        {random_array({6}, rng, -1.0, -0.2), random_array({6}, rng, 0.2, 1.0),
         random_array({6}, rng, 0.5, 1.5)},
        [](Graph&, const std::vector<Tensor>& t) { return ad::l1_masked(t[0], t[1], t[2]); });
    acc_o(r.max_rel_err);
  }

  // end-to-end: probe random parameter entries of the reduced network
  const auto cfg = model::ModelConfig::reduced();
  auto params = model::init_parameters(cfg, 81);
  Rng prng(41);
  auto in = fake_inputs(cfg, 2, prng);
  auto queries = fake_queries(2, prng);
  NdArray target = random_array({2, 2, cfg.n_freq, cfg.n_time}, prng, 0.0, 1.2);

  auto eval = [&](const model::Parameters& p) {
    Graph g;
    auto out = model::predict_rir(g, model::bind(g, p, false), cfg, in, queries);
    return model::loss_total(out.pred, target, cfg.lambda_edm).scalar();
  };
  std::map<std::string, std::vector<double>> analytic;
  {
    Graph g;
    auto b = model::bind(g, params, true);
    auto out = model::predict_rir(g, b, cfg, in, queries);
    g.backward(model::loss_total(out.pred, target, cfg.lambda_edm));
    for (const auto& [name, t] : b.tensors) {
      auto gr = t.grad();
      analytic[name] = std::vector<double>(gr.begin(), gr.end());
    }
  }
  std::vector<std::string> names;
  for (const auto& [name, a] : params.tensors)
    if (name.rfind("ant.up0", 0) != 0) names.push_back(name);  // zero-initialized head
  const double h = 1e-5;
  double pipe = 0.0;
  for (int probe = 0; probe < 10; ++probe) {
    const auto& name = names[prng.below(names.size())];
    model::Parameters work = params;
    auto& arr = work.at(name);
    const std::size_t idx = prng.below(arr.data.size());
    const double orig = arr.data[idx];
    arr.data[idx] = orig + h;
    const double fp = eval(work);
    arr.data[idx] = orig - h;
    const double fm = eval(work);
    pipe = std::max(pipe, ad::rel_err(analytic[name][idx], (fp - fm) / (2.0 * h)));
  }

  const double secs = seconds_since(t0);
  detail = format("smooth elementwise %.1e (<1e-6), other ops %.1e (<1e-4), end-to-end %.1e (<1e-4), %.1fs (<120s)",
                  smooth, other, pipe, secs);
  return smooth < 1e-6 && other < 1e-4 && pipe < 1e-4 && secs < 120.0;
}

// ---------------------------------------------------------------------------
// 2. simulator vs an independent recursive-mirroring oracle
// ---------------------------------------------------------------------------

struct OracleImg {
  double x, y;
  std::array<int, 4> counts;
  int order;
};

// Independent enumeration: mirror across the wall planes breadth-first,
// keeping the first (minimal-order) visit of each position.
std::vector<OracleImg> mirror_oracle(const scene::SceneSpec& sc, double sx, double sy,
                                     int max_order) {
  auto key = [](double x, double y) {
    return std::pair<long long, long long>(std::llround(x * 1e6), std::llround(y * 1e6));
  };
  const double x0 = sc.origin_x, x1 = sc.origin_x + sc.extent_x;
  const double y0 = sc.origin_y, y1 = sc.origin_y + sc.extent_y;
  std::map<std::pair<long long, long long>, OracleImg> seen;
  std::vector<OracleImg> frontier{{sx, sy, {0, 0, 0, 0}, 0}};
  seen[key(sx, sy)] = frontier[0];
  for (int ord = 1; ord <= max_order; ++ord) {
    std::vector<OracleImg> next;
    for (const OracleImg& im : frontier) {
      auto bump = [&](int w) {
        auto c = im.counts;
        ++c[static_cast<std::size_t>(w)];
        return c;
      };
      const OracleImg cands[4] = {{2 * x0 - im.x, im.y, bump(scene::kWest), ord},
                                  {2 * x1 - im.x, im.y, bump(scene::kEast), ord},
                                  {im.x, 2 * y0 - im.y, bump(scene::kSouth), ord},
                                  {im.x, 2 * y1 - im.y, bump(scene::kNorth), ord}};
      for (const OracleImg& c : cands)
        if (seen.emplace(key(c.x, c.y), c).second) next.push_back(c);
    }
    frontier = std::move(next);
  }
  std::vector<OracleImg> out;
  for (const auto& [k, v] : seen) out.push_back(v);
  return out;
}

bool check_simulator(std::string& detail) {
  Rng rng(derive_seed(2024, "acceptance-sim"));

  // (a) enumeration matches the oracle exactly on 100 random rooms
  for (int trial = 0; trial < 100; ++trial) {
    scene::SceneSpec sc;
    sc.extent_x = rng.uniform(3.0, 6.0);
    sc.extent_y = rng.uniform(3.0, 6.0);
    sc.origin_x = rng.uniform(-5.0, 5.0);
    sc.origin_y = rng.uniform(-5.0, 5.0);
    const double sx = sc.origin_x + rng.uniform(0.5, sc.extent_x - 0.5);
    const double sy = sc.origin_y + rng.uniform(0.5, sc.extent_y - 0.5);

    auto got = scene::image_sources(sc, sx, sy, 3);
    auto want = mirror_oracle(sc, sx, sy, 3);
    if (got.size() != want.size()) {
      detail = format("room %d: %zu sources vs %zu in the oracle", trial, got.size(), want.size());
      return false;
    }
    auto by_pos = [](const auto& a, const auto& b) {
      return std::pair(a.x, a.y) < std::pair(b.x, b.y);
    };
    std::sort(got.begin(), got.end(), by_pos);
    std::sort(want.begin(), want.end(), by_pos);
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (std::abs(got[i].x - want[i].x) >= 1e-9 || std::abs(got[i].y - want[i].y) >= 1e-9 ||
          got[i].order != want[i].order || got[i].wall_uses != want[i].counts) {
        detail = format("room %d: source %zu disagrees with the oracle", trial, i);
        return false;
      }
    }
  }

  // (b) first arrival lands within one sample of the travel time
  for (int trial = 0; trial < 100; ++trial) {
    scene::SceneSpec sc;
    sc.extent_x = rng.uniform(3.0, 6.0);
    sc.extent_y = rng.uniform(3.0, 6.0);
    scene::Pose pose;
    pose.sx = rng.uniform(0.5, sc.extent_x - 0.5);
    pose.sy = rng.uniform(0.5, sc.extent_y - 0.5);
    pose.lx = rng.uniform(0.5, sc.extent_x - 0.5);
    pose.ly = rng.uniform(0.5, sc.extent_y - 0.5);
    pose.orient = rng.below_int(4);
    scene::RenderConfig cfg;
    cfg.ear_separation = 0.0;
    cfg.max_order = 2;
    auto rir = scene::render_rir(sc, pose, cfg);
    int first = -1;
    for (int i = 0; i < cfg.length && first < 0; ++i)
      if (rir.samples.data[static_cast<std::size_t>(i)] != 0.0) first = i;
    const double expect =
        cfg.sample_rate * std::hypot(pose.sx - pose.lx, pose.sy - pose.ly) / cfg.sound_speed;
    if (first < 0 || std::abs(first - expect) > 1.0) {
      detail = format("pose %d: first arrival at sample %d, expected near %.2f", trial, first,
                      expect);
      return false;
    }
  }

  // (c) fully absorbent walls keep only the direct arrival
  scene::SceneSpec sc;
  sc.extent_x = sc.extent_y = 4.0;
  scene::Pose pose{1.0, 1.5, 2.5, 2.0, 2};
  const std::array<scene::Material, 4> dead{{{0, 1.0}, {1, 1.0}, {2, 1.0}, {3, 1.0}}};
  auto rir = scene::render_rir(sc, pose, dead);  // default order 12
  scene::RenderConfig direct;
  direct.max_order = 0;
  auto want = scene::render_rir(sc, pose, direct);
  if (rir.samples.shape != want.samples.shape ||
      rir.samples.data != want.samples.data) {
    detail = "fully absorbent room differs from the direct-only render";
    return false;
  }
  int nonzero = 0;
  for (double v : rir.samples.data) nonzero += v != 0.0;
  if (nonzero < 2 || nonzero > 4) {
    detail = format("fully absorbent room has %d nonzero taps, expected 2..4", nonzero);
    return false;
  }

  detail = "100 rooms match recursive mirroring at order<=3 (positions to 1e-9); "
           "100 direct arrivals within 1 sample; fully absorbent room keeps only the direct impulse";
  return true;
}

// ---------------------------------------------------------------------------
// 3. acoustic analysis fixtures
// ---------------------------------------------------------------------------

bool check_acoustics(std::string& detail) {
  // geometric amplitude decay: h[n] = a^n has RT60 = -3/(log10(a)*fs)
  const double a = 0.999, fs = 8000.0;
  const int L = 8192;
  std::vector<double> h(static_cast<std::size_t>(L));
  double v = 1.0;
  for (int n = 0; n < L; ++n, v *= a) h[static_cast<std::size_t>(n)] = v;
  const double rt = dsp::rt60_estimate(dsp::schroeder_edc_from_rir_channel(h), fs);
  const double rt_err = std::abs(rt - 0.8630) / 0.8630;

  // the backward-integrated decay curve never rises
  Rng rng(derive_seed(2024, "acceptance-edc"));
  int monotone = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> energy(64 + rng.below_int(192));
    for (double& e : energy) e = rng.uniform(0.0, 1.0);
    const auto edc = dsp::schroeder_edc(energy);
    bool ok = true;
    for (std::size_t i = 1; i < edc.db.size(); ++i)
      if (edc.db[i] > edc.db[i - 1]) ok = false;
    monotone += ok;
  }

  // direct window summing to 1.0 against a 0.01 tail
  std::vector<double> env(128, 0.0);
  env[9] = 0.3;
  env[10] = 0.5;
  env[11] = 0.2;
  env[40] = 0.005;
  env[80] = 0.005;
  const double d = dsp::drr(env);

  detail = format("rt60 %.4fs vs 0.8630s (err %.2f%%, <1%%); %d/1000 decay curves monotone; "
                  "drr %.4fdB vs 20dB (+-0.01)",
                  rt, 100.0 * rt_err, monotone, d);
  return rt_err < 0.01 && monotone == 1000 && std::abs(d - 20.0) <= 0.01;
}

// ---------------------------------------------------------------------------
// 4. map projection, rotation equivariance, argmax gradient routing
// ---------------------------------------------------------------------------

bool check_mapping(std::string& detail) {
  mapping::MapGeometry g;
  g.m = 32;
  g.resolution = 0.25;
  g.origin_x = 2.0;
  g.origin_y = 2.0;

  // (a) hand-computed projection: a wall hit at (4,2) lands in row 16, col 24
  if (mapping::map_cell(g, 4.0, 2.0) != 16LL * 32 + 24 ||
      mapping::map_cell(g, 2.0, 2.0) != 16LL * 32 + 16) {
    detail = "projection hand example disagrees";
    return false;
  }

  // (b) quarter-turn of scene+poses+origin permutes the fused grid
  scene::SceneSpec sc;
  sc.extent_x = sc.extent_y = 4.0;
  sc.wall_materials = {0, 1, 2, 3};
  scene::SceneSpec rot;
  rot.extent_x = rot.extent_y = 4.0;
  rot.wall_materials = {sc.wall_materials[scene::kNorth], sc.wall_materials[scene::kSouth],
                        sc.wall_materials[scene::kWest], sc.wall_materials[scene::kEast]};
  auto rotate_point = [&](double x, double y) {
    return std::pair<double, double>(sc.extent_y - y, x);
  };
  std::vector<scene::Pose> poses{{1.0, 1.5, 1.0, 1.5, 0}, {3.0, 2.5, 3.0, 2.5, 1}};
  std::vector<scene::RaycastScan> scans, rscans;
  for (const scene::Pose& p : poses) {
    scans.push_back(scene::raycast_scan(sc, p, 16));
    const auto [rx, ry] = rotate_point(p.lx, p.ly);
    scene::Pose rp{rx, ry, rx, ry, (p.orient + 1) % 4};
    rscans.push_back(scene::raycast_scan(rot, rp, 16));
  }
  Rng rng(derive_seed(2024, "acceptance-map"));
  std::vector<NdArray> feats{random_array({16, 3}, rng), random_array({16, 3}, rng)};
  mapping::MapGeometry rg = g;
  std::tie(rg.origin_x, rg.origin_y) = rotate_point(g.origin_x, g.origin_y);
  Graph ga, gb;
  auto fused = mapping::fuse_scans({ga.constant(feats[0]), ga.constant(feats[1])}, scans, g);
  auto rfused = mapping::fuse_scans({gb.constant(feats[0]), gb.constant(feats[1])}, rscans, rg);
  const auto va = fused.values();
  const auto vb = rfused.values();
  for (int r = 0; r < g.m; ++r)
    for (int c = 0; c < g.m; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const int rr = c, rc = g.m - r;  // (row, col) -> (col, m - row)
        if (rc >= g.m) continue;         // asymmetric edge of the even-sized grid
        if (va[static_cast<std::size_t>((r * g.m + c) * 3 + ch)] !=
            vb[static_cast<std::size_t>((rr * g.m + rc) * 3 + ch)]) {
          detail = format("rotation equivariance broken at cell (%d,%d) channel %d", r, c, ch);
          return false;
        }
      }

  // (c) the cellwise max routes gradient to the winning ray only
  scene::RaycastScan scan;
  scan.camera = scene::Pose{2.0, 2.0, 2.0, 2.0, 0};
  scan.depth = {0.05, 0.05};  // both endpoints round to the center cell
  scan.material = {0, 0};
  NdArray two({2, 2}, {1.0, 5.0, 3.0, 2.0});
  {
    Graph g2;
    auto leaf = g2.leaf(two, true);
    auto f = mapping::fuse_scans({leaf}, {scan}, g);
    g2.backward(ad::reduce_all(f, ad::Reduce::Sum));
    const auto gr = leaf.grad();
    const double want[4] = {0.0, 1.0, 1.0, 0.0};  // ch0 winner is ray 1, ch1 winner is ray 0
    for (int i = 0; i < 4; ++i)
      if (gr[static_cast<std::size_t>(i)] != want[i]) {
        detail = "argmax routing sent gradient to a losing ray";
        return false;
      }
  }
  scan.depth = {0.3, 0.6, 0.3, 0.9};
  scan.material = {0, 0, 0, 0};
  NdArray f4 = random_array({4, 3}, rng);
  const double fd = weighted_fd({f4}, rng, [&](Graph&, const std::vector<Tensor>& xs) {
    return mapping::fuse_scans({xs[0]}, {scan}, g);
  });

  detail = format("projection hand example exact; quarter-turn equivariance holds; "
                  "argmax routing exact and FD %.1e (<1e-4)",
                  fd);
  return fd < 1e-4;
}

// ---------------------------------------------------------------------------
// 5. residual identity of the anticipation head at zero init
// ---------------------------------------------------------------------------

bool check_residual_identity(std::string& detail) {
  const auto cfg = model::ModelConfig::reduced();
  auto params = model::init_parameters(cfg, derive_seed(2024, "acceptance-res"));
  Rng rng(derive_seed(2024, "acceptance-res-in"));
  auto in = fake_inputs(cfg, 3, rng);
  auto queries = fake_queries(2, rng);

  Graph g;
  auto out = model::predict_rir(g, model::bind(g, params, false), cfg, in, queries);
  if (!out.m_osm || !out.m_ssm) {
    detail = "forward pass did not expose both map stages";
    return false;
  }
  const auto osm = out.m_osm->values();
  const auto ssm = out.m_ssm->values();
  if (osm.size() != ssm.size()) {
    detail = "map stages differ in size";
    return false;
  }
  for (std::size_t i = 0; i < osm.size(); ++i)
    if (osm[i] != ssm[i]) {
      detail = format("maps differ at entry %zu before any training", i);
      return false;
    }
  detail = format("predicted map equals the observed map bit for bit at zero init (%zu entries)",
                  osm.size());
  return true;
}

// ---------------------------------------------------------------------------
// 6. end-to-end desk run with the default configuration
// ---------------------------------------------------------------------------

bool check_desk_run(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  pipeline::RunConfig cfg;  // desk defaults

  std::fprintf(stderr, "  [6] generating %d episodes...\n",
               cfg.train_scenes + cfg.seen_eval + cfg.unseen_eval);
  auto ar = pipeline::gen_dataset(cfg);
  std::fprintf(stderr, "  [6] training %lld steps...\n", cfg.steps);
  auto res = pipeline::train(cfg, ar, "", nullptr, [&](const pipeline::TraceRow& row) {
    if ((row.step + 1) % 150 == 0 || row.step + 1 == cfg.steps)
      std::fprintf(stderr, "  [6] step %lld/%lld loss %.4f smoothed %.4f (%.0fs)\n", row.step + 1,
                   cfg.steps, row.loss_total, row.smoothed, seconds_since(t0));
  });
  const double init_s = res.trace.front().smoothed;
  const double final_s = res.trace.back().smoothed;

  std::fprintf(stderr, "  [6] scoring the unseen split...\n");
  const double m = unseen_stft(cfg, ar, pipeline::Predictor::Model, &res.checkpoint);
  const double nn = unseen_stft(cfg, ar, pipeline::Predictor::Nearest);
  const double li = unseen_stft(cfg, ar, pipeline::Predictor::Interp);
  const double secs = seconds_since(t0);

  detail = format("smoothed loss %.4f -> %.4f (need <%.4f); unseen stft model %.4f vs nearest %.4f, "
                  "interp %.4f; %.0fs (<3600s)",
                  init_s, final_s, 0.5 * init_s, m, nn, li, secs);
  return final_s < 0.5 * init_s && m < nn && m < li && secs < 3600.0;
}

// ---------------------------------------------------------------------------
// 7. ablation ordering, averaged over three seeds
// ---------------------------------------------------------------------------

bool check_ablations(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seeds[3] = {101, 202, 303};
  struct Variant {
    const char* name;
    model::AblationFlags flags;
  };
  const Variant variants[4] = {{"full", {}},
                               {"no-anticipation", {.no_anticipation = true}},
                               {"no-mapper", {.no_mapper = true}},
                               {"no-skip", {.no_skip = true}}};
  double mean[4] = {0.0, 0.0, 0.0, 0.0};

  for (const std::uint64_t seed : seeds) {
    auto base = ablation_cfg(seed);
    auto ar = pipeline::gen_dataset(base);
    for (int v = 0; v < 4; ++v) {
      auto cfg = base;
      cfg.ablate = variants[v].flags;
      std::fprintf(stderr, "  [7] seed %llu %s: training %lld steps (%.0fs)...\n",
                   static_cast<unsigned long long>(seed), variants[v].name, cfg.steps,
                   seconds_since(t0));
      auto res = pipeline::train(cfg, ar);
      const double stft = unseen_stft(cfg, ar, pipeline::Predictor::Model, &res.checkpoint);
      std::fprintf(stderr, "  [7] seed %llu %s: unseen stft %.4f\n",
                   static_cast<unsigned long long>(seed), variants[v].name, stft);
      mean[v] += stft / 3.0;
    }
  }

  detail = format("3-seed mean unseen stft: full %.5f, no-anticipation %.5f, no-mapper %.5f, "
                  "no-skip %.5f (need full < no-ant < no-mapper and full <= no-skip); %.0fs",
                  mean[0], mean[1], mean[2], mean[3], seconds_since(t0));
  return mean[0] < mean[1] && mean[1] < mean[2] && mean[0] <= mean[3];
}

// ---------------------------------------------------------------------------
// 8. determinism and persistence on the tiny configuration
// ---------------------------------------------------------------------------

bool check_determinism(std::string& detail) {
  const fs::path scratch = "acceptance_scratch";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const auto cfg = tiny_cfg();

  // identical seeds give byte-identical archives
  pipeline::save_archive(pipeline::gen_dataset(cfg), (scratch / "a.bin").string());
  pipeline::save_archive(pipeline::gen_dataset(cfg), (scratch / "b.bin").string());
  auto bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  };
  const auto ba = bytes(scratch / "a.bin");
  if (ba.empty() || ba != bytes(scratch / "b.bin")) {
    detail = "two generations from one seed differ on disk";
    return false;
  }

  // identical seeds give bit-identical traces
  auto ar = pipeline::load_archive((scratch / "a.bin").string());
  auto r1 = pipeline::train(cfg, ar);
  auto r2 = pipeline::train(cfg, ar);
  if (r1.trace.size() != r2.trace.size()) {
    detail = "trace lengths differ between identical runs";
    return false;
  }
  for (std::size_t i = 0; i < r1.trace.size(); ++i) {
    const auto &a = r1.trace[i], &b = r2.trace[i];
    if (a.step != b.step || a.lr != b.lr || a.loss_total != b.loss_total ||
        a.loss_stft != b.loss_stft || a.loss_edm != b.loss_edm || a.smoothed != b.smoothed) {
      detail = format("traces diverge at step %zu", i);
      return false;
    }
  }

  // checkpoint round trip evaluates bit-identically
  pipeline::save_checkpoint(r1.checkpoint, (scratch / "ck.bin").string());
  const auto loaded = pipeline::load_checkpoint((scratch / "ck.bin").string(), cfg);
  const auto ea = pipeline::evaluate_split(cfg, ar, pipeline::Split::Unseen,
                                           pipeline::Predictor::Model, &r1.checkpoint);
  const auto eb = pipeline::evaluate_split(cfg, ar, pipeline::Split::Unseen,
                                           pipeline::Predictor::Model, &loaded);
  if (ea.rows.size() != eb.rows.size() || ea.rows.empty()) {
    detail = "evaluation row counts differ after the round trip";
    return false;
  }
  for (std::size_t i = 0; i < ea.rows.size(); ++i) {
    const auto &ma = ea.rows[i].metrics, &mb = eb.rows[i].metrics;
    if (ma.stft_error != mb.stft_error || ma.rte != mb.rte || ma.drre != mb.drre) {
      detail = format("metrics differ at row %zu after the round trip", i);
      return false;
    }
  }

  fs::remove_all(scratch);
  detail = format("datasets byte-identical (%zu bytes); %zu trace rows bit-identical; "
                  "checkpoint round trip scores %zu queries bit-identically",
                  ba.size(), r1.trace.size(), ea.rows.size());
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  struct Check {
    int id;
    const char* name;
    bool (*run)(std::string&);
  };
  const Check checks[] = {
      {1, "gradients", check_gradient_suite}, {2, "simulator", check_simulator},
      {3, "acoustics", check_acoustics},      {4, "mapping", check_mapping},
      {5, "residual identity", check_residual_identity},
      {6, "desk run", check_desk_run},        {7, "ablations", check_ablations},
      {8, "determinism", check_determinism},
  };

  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id < 1 || id > 8) {
      std::fprintf(stderr, "usage: %s [1..8 ...]\n", argv[0]);
      return 2;
    }
    wanted.insert(id);
  }

  int failures = 0, ran = 0;
  for (const Check& c : checks) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    ++ran;
    std::string detail;
    bool pass = false;
    try {
      pass = c.run(detail);
    } catch (const std::exception& e) {
      detail = format("threw: %s", e.what());
    }
    failures += !pass;
    std::printf("[%d] %s %s: %s\n", c.id, pass ? "PASS" : "FAIL", c.name, detail.c_str());
    std::fflush(stdout);
  }
  if (failures == 0)
    std::printf("all %d checks passed\n", ran);
  else
    std::printf("%d of %d checks FAILED\n", failures, ran);
  return failures == 0 ? 0 : 1;
}
