#pragma once

#include <stdexcept>
#include <vector>

namespace echomap::model {

// Architecture widths and geometry. Two working profiles: `desk` trains on a
// single CPU core in well under an hour; `large` mirrors the full-scale
// configuration and is selectable but not exercised by the test suite.
// `reduced` shrinks every axis for finite-difference checking.
struct ModelConfig {
  int c_f = 16;      // map feature channels
  int d_model = 64;  // token width
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int patch = 4;
  double lambda_edm = 0.01;

  int n_freq = 64;    // F
  int n_time = 128;   // T
  int m = 32;         // map cells per side
  double map_res = 0.25;
  int scan_width = 64;  // W
  int d_pe = 8;

  std::vector<int> vis_channels{16, 32};        // 1D U-Net, two down levels
  int ant_depth = 3;
  std::vector<int> ant_channels{24, 32, 40};    // 2D U-Net down levels
  std::vector<int> aud_channels{6, 12, 18, 24};  // audio conv stack
  int d_mod_token = 16;                          // learned modality feature width
  int ff_mult = 2;                               // transformer feed-forward widening

  int head_seed_ch = 64;
  int head_blocks = 4;
  std::vector<int> head_channels{16, 8, 4, 2};  // after the seed; must end in 2

  int pose_dim() const { return 5 * d_pe; }
  int tokens_per_map() const { return (m / patch) * (m / patch); }
  int head_seed_h() const { return n_freq >> head_blocks; }
  int head_seed_w() const { return n_time >> head_blocks; }

  void validate() const {
    if (d_model % heads != 0) throw std::invalid_argument("config: heads must divide d_model");
    if (m % patch != 0) throw std::invalid_argument("config: patch must divide m");
    if (scan_width % 4 != 0) throw std::invalid_argument("config: scan width must divide by 4");
    if (m % (1 << ant_depth) != 0)
      throw std::invalid_argument("config: map side must divide by 2^depth");
    if (static_cast<int>(ant_channels.size()) != ant_depth)
      throw std::invalid_argument("config: one anticipation width per level");
    if (vis_channels.size() != 2 || aud_channels.size() != 4)
      throw std::invalid_argument("config: fixed encoder depths");
    if (static_cast<int>(head_channels.size()) != head_blocks || head_channels.back() != 2)
      throw std::invalid_argument("config: head must end in 2 channels");
    if ((n_freq >> head_blocks) << head_blocks != n_freq ||
        (n_time >> head_blocks) << head_blocks != n_time || head_seed_h() < 1 ||
        head_seed_w() < 1)
      throw std::invalid_argument("config: head blocks incompatible with F,T");
    if (d_pe < 2 || d_pe % 2 != 0 || d_model % 4 != 0)
      throw std::invalid_argument("config: embedding widths must be even");
    if (!(lambda_edm > 0.0)) throw std::invalid_argument("config: lambda must be positive");
  }

  static ModelConfig desk() { return {}; }

  static ModelConfig large() {
    ModelConfig c;
    c.c_f = 64;
    c.d_model = 512;
    c.heads = 8;
    c.m = 64;
    c.map_res = 1.0;
    c.patch = 8;
    c.vis_channels = {32, 64};
    c.ant_depth = 4;
    c.ant_channels = {96, 128, 160, 192};
    c.aud_channels = {16, 32, 48, 64};
    c.d_mod_token = 64;
    c.head_seed_ch = 64;
    c.head_channels = {32, 16, 8, 2};
    return c;
  }

  static ModelConfig reduced() {
    ModelConfig c;
    c.c_f = 4;
    c.d_model = 8;
    c.heads = 2;
    c.patch = 4;
    c.n_freq = 8;
    c.n_time = 8;
    c.m = 8;
    c.scan_width = 8;
    c.d_pe = 4;
    c.vis_channels = {5, 6};
    c.ant_depth = 2;
    c.ant_channels = {5, 6};
    c.aud_channels = {3, 4, 5, 6};
    c.d_mod_token = 4;
    c.head_seed_ch = 6;
    c.head_blocks = 2;
    c.head_channels = {4, 2};
    return c;
  }
};

}  // namespace echomap::model
