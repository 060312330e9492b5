#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "echomap/autodiff/optim.hpp"
#include "echomap/model/params.hpp"
#include "echomap/pipeline/blob_io.hpp"
#include "echomap/pipeline/run_config.hpp"

namespace echomap::pipeline {

// Full training state: parameters, Adam moments, and the position in the
// (stateless, seed-derived) step stream. All arrays persist as f64 so a
// save/load round trip is bit-exact.
struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::uint64_t seed = 0;
  long long next_step = 0;
  long long total_steps = 0;
  double base_lr = 1e-4;
  ad::LrSchedule schedule = ad::LrSchedule::Constant;
  double ema = 0.0;  // smoothed-loss state, so a resumed trace continues seamlessly
  bool have_ema = false;
  model::AblationFlags ablate;
  model::Parameters params;
  std::map<std::string, ad::AdamState> adam;
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(ck.fingerprint));
  f << "echomap-checkpoint v1\n";
  f << "fingerprint " << hex << "\n";
  f << "seed " << ck.seed << "\n";
  f << "next_step " << ck.next_step << "\n";
  f << "total_steps " << ck.total_steps << "\n";
  char lr[64];
  std::snprintf(lr, sizeof lr, "%a", ck.base_lr);
  f << "base_lr " << lr << "\n";
  f << "schedule " << (ck.schedule == ad::LrSchedule::Constant ? "fixed" : "warmup") << "\n";
  char ema[64];
  std::snprintf(ema, sizeof ema, "%a", ck.ema);
  f << "smoothed " << (ck.have_ema ? 1 : 0) << " " << ema << "\n";
  f << "ablate " << (ck.ablate.no_mapper ? 1 : 0) << " " << (ck.ablate.no_anticipation ? 1 : 0)
    << " " << (ck.ablate.no_skip ? 1 : 0) << "\n";
  f << "tensors " << ck.params.tensors.size() << "\n";
  for (const auto& [name, arr] : ck.params.tensors) {
    const auto it = ck.adam.find(name);
    const long long t = it == ck.adam.end() ? 0 : it->second.t;
    f << "tensor " << name << " " << t << "\n";
  }
  f << "blobs\n";
  for (const auto& [name, arr] : ck.params.tensors) {
    write_blob(f, arr, kDtypeF64);
    ad::NdArray m(arr.shape, std::vector<double>(arr.size(), 0.0));
    ad::NdArray v(arr.shape, std::vector<double>(arr.size(), 0.0));
    const auto it = ck.adam.find(name);
    if (it != ck.adam.end() && !it->second.m.empty()) {
      m.data = it->second.m;
      v.data = it->second.v;
    }
    write_blob(f, m, kDtypeF64);
    write_blob(f, v, kDtypeF64);
  }
  if (!f) throw std::runtime_error("checkpoint: write failure on " + path);
}

// Load and verify against the run configuration; a fingerprint mismatch is a
// hard error so weights never silently meet the wrong data geometry.
inline Checkpoint load_checkpoint(const std::string& path, const RunConfig& cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "echomap-checkpoint v1")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  std::vector<std::pair<std::string, long long>> order;
  std::size_t count = 0;
  while (std::getline(f, line)) {
    if (line == "blobs") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "fingerprint") {
      std::string hex;
      ls >> hex;
      ck.fingerprint = std::stoull(hex, nullptr, 16);
    } else if (key == "seed") {
      ls >> ck.seed;
    } else if (key == "next_step") {
      ls >> ck.next_step;
    } else if (key == "total_steps") {
      ls >> ck.total_steps;
    } else if (key == "base_lr") {
      std::string v;
      ls >> v;
      ck.base_lr = std::strtod(v.c_str(), nullptr);
    } else if (key == "schedule") {
      std::string v;
      ls >> v;
      ck.schedule = v == "warmup" ? ad::LrSchedule::WarmupDecay : ad::LrSchedule::Constant;
    } else if (key == "smoothed") {
      int have = 0;
      std::string v;
      ls >> have >> v;
      ck.have_ema = have != 0;
      ck.ema = std::strtod(v.c_str(), nullptr);
    } else if (key == "ablate") {
      int a = 0, b = 0, c = 0;
      ls >> a >> b >> c;
      ck.ablate.no_mapper = a != 0;
      ck.ablate.no_anticipation = b != 0;
      ck.ablate.no_skip = c != 0;
    } else if (key == "tensors") {
      ls >> count;
    } else if (key == "tensor") {
      std::string name;
      long long t = 0;
      ls >> name >> t;
      order.emplace_back(name, t);
    } else {
      throw std::runtime_error("checkpoint: unknown manifest key " + key);
    }
  }
  if (line != "blobs") throw std::runtime_error("checkpoint: manifest missing blob marker");
  if (order.size() != count) throw std::runtime_error("checkpoint: tensor count mismatch");
  if (ck.fingerprint != cfg.fingerprint())
    throw std::runtime_error(
        "checkpoint: config fingerprint mismatch (checkpoint was produced under a different "
        "dataset geometry)");
  for (const auto& [name, t] : order) {
    ad::NdArray w = read_blob(f, kDtypeF64);
    ad::NdArray m = read_blob(f, kDtypeF64);
    ad::NdArray v = read_blob(f, kDtypeF64);
    ck.params.tensors.emplace(name, std::move(w));
    ad::AdamState st;
    st.t = t;
    if (t > 0) {
      st.m = std::move(m.data);
      st.v = std::move(v.data);
    }
    ck.adam.emplace(name, std::move(st));
  }
  // the parameter name set is part of the format contract
  const auto expect = model::init_parameters(cfg.model, 0);
  if (expect.tensors.size() != ck.params.tensors.size())
    throw std::runtime_error("checkpoint: parameter set differs from the model");
  for (const auto& [name, arr] : expect.tensors) {
    const auto it = ck.params.tensors.find(name);
    if (it == ck.params.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor " + name);
    if (it->second.shape != arr.shape)
      throw std::runtime_error("checkpoint: shape mismatch on " + name);
  }
  return ck;
}

}  // namespace echomap::pipeline
