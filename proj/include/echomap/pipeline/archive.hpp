#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "echomap/pipeline/blob_io.hpp"
#include "echomap/scene/types.hpp"

namespace echomap::pipeline {

enum class Split { Train, Seen, Unseen };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Seen: return "seen";
    case Split::Unseen: return "unseen";
  }
  throw std::logic_error("split_name");
}

inline Split split_from(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "seen") return Split::Seen;
  if (s == "unseen") return Split::Unseen;
  throw std::invalid_argument("unknown split: " + s);
}

// One stored episode. Arrays use fixed layouts:
//   context_poses [N,5] (sx,sy,lx,ly,orient), scan_depth [N,W],
//   scan_material [N,W], echo_rirs [N,2,L], query_poses [nq,5],
//   query_rirs [nq,2,L]. Train episodes carry no queries (drawn at train
//   time from the scene seed).
struct EpisodeRecord {
  Split split = Split::Train;
  std::uint64_t scene_seed = 0;
  ad::NdArray context_poses;
  ad::NdArray scan_depth;
  ad::NdArray scan_material;
  ad::NdArray echo_rirs;
  ad::NdArray query_poses;
  ad::NdArray query_rirs;

  int n_context() const { return context_poses.shape.empty() ? 0 : context_poses.shape[0]; }
  int n_query() const { return query_poses.shape.empty() ? 0 : query_poses.shape[0]; }

  scene::Pose context_pose(int i) const { return pose_at(context_poses, i); }
  scene::Pose query_pose(int i) const { return pose_at(query_poses, i); }

  static scene::Pose pose_at(const ad::NdArray& arr, int i) {
    const std::size_t o = static_cast<std::size_t>(i) * 5;
    return scene::Pose{arr.data[o], arr.data[o + 1], arr.data[o + 2], arr.data[o + 3],
                       static_cast<int>(arr.data[o + 4])};
  }
};

struct DatasetArchive {
  std::uint64_t fingerprint = 0;
  std::string profile;
  std::vector<EpisodeRecord> episodes;

  std::vector<int> split_indices(Split s) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(episodes.size()); ++i)
      if (episodes[static_cast<std::size_t>(i)].split == s) out.push_back(i);
    return out;
  }
};

// Single file: plain-text manifest, then one blob per array in manifest
// order. The manifest ends with the literal line "blobs".
inline void save_archive(const DatasetArchive& ar, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("archive: cannot open " + path + " for writing");
  f << "echomap-dataset v1\n";
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(ar.fingerprint));
  f << "fingerprint " << hex << "\n";
  f << "profile " << ar.profile << "\n";
  f << "episodes " << ar.episodes.size() << "\n";
  for (const auto& ep : ar.episodes)
    f << "episode " << split_name(ep.split) << " " << ep.scene_seed << " " << ep.n_context()
      << " " << ep.n_query() << "\n";
  f << "blobs\n";
  for (const auto& ep : ar.episodes) {
    write_blob(f, ep.context_poses, kDtypeF32);
    write_blob(f, ep.scan_depth, kDtypeF32);
    write_blob(f, ep.scan_material, kDtypeF32);
    write_blob(f, ep.echo_rirs, kDtypeF32);
    write_blob(f, ep.query_poses, kDtypeF32);
    write_blob(f, ep.query_rirs, kDtypeF32);
  }
  if (!f) throw std::runtime_error("archive: write failure on " + path);
}

inline DatasetArchive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("archive: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "echomap-dataset v1")
    throw std::runtime_error("archive: bad magic in " + path);
  DatasetArchive ar;
  std::size_t count = 0;
  while (std::getline(f, line)) {
    if (line == "blobs") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "fingerprint") {
      std::string hex;
      ls >> hex;
      ar.fingerprint = std::stoull(hex, nullptr, 16);
    } else if (key == "profile") {
      ls >> ar.profile;
    } else if (key == "episodes") {
      ls >> count;
    } else if (key == "episode") {
      EpisodeRecord ep;
      std::string split;
      int nc = 0, nq = 0;
      ls >> split >> ep.scene_seed >> nc >> nq;
      if (!ls) throw std::runtime_error("archive: malformed episode line");
      ep.split = split_from(split);
      ar.episodes.push_back(std::move(ep));
    } else {
      throw std::runtime_error("archive: unknown manifest key " + key);
    }
  }
  if (line != "blobs") throw std::runtime_error("archive: manifest missing blob marker");
  if (ar.episodes.size() != count) throw std::runtime_error("archive: episode count mismatch");
  for (auto& ep : ar.episodes) {
    ep.context_poses = read_blob(f, kDtypeF32);
    ep.scan_depth = read_blob(f, kDtypeF32);
    ep.scan_material = read_blob(f, kDtypeF32);
    ep.echo_rirs = read_blob(f, kDtypeF32);
    ep.query_poses = read_blob(f, kDtypeF32);
    ep.query_rirs = read_blob(f, kDtypeF32);
  }
  return ar;
}

}  // namespace echomap::pipeline
