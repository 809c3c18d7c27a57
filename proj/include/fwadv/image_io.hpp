#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "fwadv/error.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

/// Round-half-up quantization of [0,1] intensities to bytes (0.5 -> 128).
inline unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

namespace detail {

inline void write_pnm(const ImageTensor& x, const std::string& path, const std::string& comment) {
  if (!x.all_finite()) throw ValidationError("image has non-finite entries");
  const bool gray = x.channels() == 1;
  if (!gray && x.channels() != 3) throw ValidationError("unsupported channel count " + std::to_string(x.channels()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open " + path + " for writing");
  os << (gray ? "P5" : "P6") << '\n';
  if (!comment.empty()) os << "# " << comment << '\n';
  os << x.width() << ' ' << x.height() << "\n255\n";
  for (std::size_t r = 0; r < x.height(); ++r)
    for (std::size_t c = 0; c < x.width(); ++c)
      for (std::size_t ch = 0; ch < x.channels(); ++ch) os.put(static_cast<char>(to_byte(x(ch, r, c))));
}

} // namespace detail

/// Writes a [0,1] image as binary PGM (1 channel) or PPM (3 channels, interleaved).
inline void write_image(const ImageTensor& x, const std::string& path) { detail::write_pnm(x, path, ""); }

/// Writes |delta| rescaled so its maximum maps to 255. The scale is recorded in a
/// "# max=<value>" comment line.
inline void write_heatmap(const ImageTensor& delta, const std::string& path) {
  ImageTensor mag = delta;
  double top = 0.0;
  for (auto& v : mag.values()) {
    v = std::abs(v);
    top = std::max(top, v);
  }
  if (top > 0.0)
    for (auto& v : mag.values()) v /= top;
  detail::write_pnm(mag, path, "max=" + format_real(top));
}

struct PnmImage {
  ImageTensor image;
  std::string comment;
};

/// Reads binary PGM/PPM with maxval 255 back into [0,1] intensities.
inline PnmImage read_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P6") throw ValidationError("not a binary PGM/PPM file: " + path);
  std::string comment;
  auto next_number = [&]() {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string line;
      std::getline(is, line);
      if (comment.empty()) comment = line.size() > 2 ? line.substr(2) : "";
      is >> std::ws;
    }
    std::size_t v = 0;
    if (!(is >> v)) throw ValidationError("malformed PNM header in " + path);
    return v;
  };
  const std::size_t w = next_number();
  const std::size_t h = next_number();
  const std::size_t maxval = next_number();
  if (maxval != 255) throw ValidationError("only maxval 255 is supported");
  is.get();
  const std::size_t channels = magic == "P5" ? 1 : 3;
  ImageTensor x(Shape{channels, h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const int byte = is.get();
        if (byte == EOF) throw ValidationError("truncated PNM data in " + path);
        x(ch, r, c) = static_cast<double>(byte) / 255.0;
      }
  return {std::move(x), comment};
}

} // namespace fwadv
