#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace echomap::dsp {

namespace detail {
inline void put_u32(std::ofstream& f, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  f.write(b, 4);
}
inline void put_u16(std::ofstream& f, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  f.write(b, 2);
}
}  // namespace detail

// 16-bit PCM stereo writer. Both channels are jointly peak-normalized to
// -1 dBFS before quantization (silence stays silent).
inline void write_wav_stereo(const std::string& path, const std::vector<double>& left,
                             const std::vector<double>& right, int sample_rate) {
  if (left.size() != right.size()) throw std::invalid_argument("write_wav: channel length mismatch");
  if (sample_rate <= 0) throw std::invalid_argument("write_wav: bad sample rate");
  double peak = 0.0;
  for (double v : left) peak = std::max(peak, std::abs(v));
  for (double v : right) peak = std::max(peak, std::abs(v));
  const double target = std::pow(10.0, -1.0 / 20.0);
  const double gain = peak > 0.0 ? target / peak : 0.0;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(left.size());
  const std::uint32_t data_bytes = n * 2 * 2;
  f.write("RIFF", 4);
  detail::put_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  detail::put_u32(f, 16);
  detail::put_u16(f, 1);  // PCM
  detail::put_u16(f, 2);  // stereo
  detail::put_u32(f, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32(f, static_cast<std::uint32_t>(sample_rate) * 4);
  detail::put_u16(f, 4);   // block align
  detail::put_u16(f, 16);  // bits per sample
  f.write("data", 4);
  detail::put_u32(f, data_bytes);
  auto quantize = [gain](double v) {
    const double s = std::clamp(v * gain, -1.0, 1.0);
    return static_cast<std::int16_t>(std::lround(s * 32767.0));
  };
  for (std::uint32_t i = 0; i < n; ++i) {
    detail::put_u16(f, static_cast<std::uint16_t>(quantize(left[i])));
    detail::put_u16(f, static_cast<std::uint16_t>(quantize(right[i])));
  }
  if (!f) throw std::runtime_error("write_wav: write failed for " + path);
}

struct StereoWav {
  std::vector<double> left;
  std::vector<double> right;
  int sample_rate = 0;
};

// Reads exactly what write_wav_stereo produces (PCM16 stereo, fmt then data
// chunk); samples come back in [-1, 1].
inline StereoWav read_wav_stereo(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  auto get_u32 = [&f]() {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  auto get_u16 = [&f]() {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(static_cast<std::uint16_t>(b[0]) |
                                      (static_cast<std::uint16_t>(b[1]) << 8));
  };
  char tag[5] = {};
  f.read(tag, 4);
  if (std::string(tag, 4) != "RIFF") throw std::runtime_error("read_wav: not a RIFF file");
  get_u32();
  f.read(tag, 4);
  if (std::string(tag, 4) != "WAVE") throw std::runtime_error("read_wav: not a WAVE file");
  f.read(tag, 4);
  if (std::string(tag, 4) != "fmt ") throw std::runtime_error("read_wav: missing fmt chunk");
  if (get_u32() != 16 || get_u16() != 1) throw std::runtime_error("read_wav: not plain PCM");
  const int channels = get_u16();
  if (channels != 2) throw std::runtime_error("read_wav: expected stereo");
  StereoWav out;
  out.sample_rate = static_cast<int>(get_u32());
  get_u32();
  get_u16();
  if (get_u16() != 16) throw std::runtime_error("read_wav: expected 16-bit samples");
  f.read(tag, 4);
  if (std::string(tag, 4) != "data") throw std::runtime_error("read_wav: missing data chunk");
  const std::uint32_t data_bytes = get_u32();
  const std::uint32_t frames = data_bytes / 4;
  out.left.resize(frames);
  out.right.resize(frames);
  for (std::uint32_t i = 0; i < frames; ++i) {
    out.left[i] = static_cast<double>(static_cast<std::int16_t>(get_u16())) / 32767.0;
    out.right[i] = static_cast<double>(static_cast<std::int16_t>(get_u16())) / 32767.0;
  }
  if (!f) throw std::runtime_error("read_wav: truncated file " + path);
  return out;
}

}  // namespace echomap::dsp
