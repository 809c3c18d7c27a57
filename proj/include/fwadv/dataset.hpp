#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fwadv/error.hpp"
#include "fwadv/random.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

struct Dataset {
  std::vector<ImageTensor> images;
  std::vector<std::size_t> labels;
  std::string name;
  std::size_t num_classes = 2;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  void validate() const {
    if (images.size() != labels.size()) throw ValidationError("dataset: image and label counts differ");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (labels[i] >= num_classes) throw ValidationError("dataset: label out of range at index " + std::to_string(i));
      if (i && !(images[i].shape() == images[0].shape())) throw ValidationError("dataset: inconsistent image shapes");
    }
  }

  Dataset slice(std::size_t begin, std::size_t count) const {
    Dataset out{{}, {}, name, num_classes};
    for (std::size_t i = begin; i < std::min(begin + count, size()); ++i) {
      out.images.push_back(images[i]);
      out.labels.push_back(labels[i]);
    }
    return out;
  }
};

struct SynthOptions {
  std::size_t height = 16;
  std::size_t width = 16;
  double background = 0.3;
  double amplitude = 0.35;
  double noise = 0.12;
};

/// Two-class synthetic images. Class 0 is a smooth separable Gaussian blob near the
/// center; class 1 is a patch of vertical stripes. Both carry i.i.d. Gaussian noise
/// and are clipped to [0,1]. Sample i depends only on (seed, i), so
/// synth(seed, n, offset) yields items offset..offset+n-1 of one infinite stream.
inline Dataset synth(std::uint64_t seed, std::size_t n, std::size_t offset = 0, const SynthOptions& opt = {}) {
  Dataset ds;
  ds.name = "synth-" + std::to_string(seed);
  ds.num_classes = 2;
  const Shape shape{1, opt.height, opt.width};
  const double mid_r = (static_cast<double>(opt.height) - 1.0) / 2.0;
  const double mid_c = (static_cast<double>(opt.width) - 1.0) / 2.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t index = offset + k;
    Rng rng(mix_seed(seed, index));
    const std::size_t label = index % 2;
    ImageTensor img(shape);
    if (label == 0) {
      const double cy = mid_r + rng.uniform(-1.5, 1.5);
      const double cx = mid_c + rng.uniform(-1.5, 1.5);
      const double width = rng.uniform(2.0, 3.0);
      for (std::size_t r = 0; r < opt.height; ++r)
        for (std::size_t c = 0; c < opt.width; ++c) {
          const double dr = static_cast<double>(r) - cy, dc = static_cast<double>(c) - cx;
          img(0, r, c) = opt.background + opt.amplitude * std::exp(-(dr * dr + dc * dc) / (2.0 * width * width));
        }
    } else {
      const double phase = rng.uniform(-0.5, 0.5);
      const std::size_t r0 = opt.height / 4, r1 = opt.height - opt.height / 4;
      const std::size_t c0 = opt.width / 4, c1 = opt.width - opt.width / 4;
      for (std::size_t r = 0; r < opt.height; ++r)
        for (std::size_t c = 0; c < opt.width; ++c) {
          double v = opt.background;
          if (r >= r0 && r < r1 && c >= c0 && c < c1)
            v += opt.amplitude * (0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(c) / 4.0 + phase));
          img(0, r, c) = v;
        }
    }
    for (auto& v : img.values()) v = std::clamp(v + opt.noise * rng.normal(), 0.0, 1.0);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX (MNIST container format)

namespace detail {

inline std::vector<unsigned char> read_all_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t pos, const std::string& path) {
  if (pos + 4 > bytes.size()) throw ValidationError("idx: truncated header in " + path);
  return (std::uint32_t{bytes[pos]} << 24) | (std::uint32_t{bytes[pos + 1]} << 16) |
         (std::uint32_t{bytes[pos + 2]} << 8) | std::uint32_t{bytes[pos + 3]};
}

} // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image file (ubyte, 3 dims) and its IDX label file (ubyte, 1 dim).
/// Pixels are scaled by 1/255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_all_bytes(images_path);
  const auto lab = detail::read_all_bytes(labels_path);

  if (detail::read_be32(img, 0, images_path) != kIdxImageMagic)
    throw ValidationError("idx: bad magic number in image file " + images_path);
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelMagic)
    throw ValidationError("idx: bad magic number in label file " + labels_path);

  const std::uint32_t n = detail::read_be32(img, 4, images_path);
  const std::uint32_t rows = detail::read_be32(img, 8, images_path);
  const std::uint32_t cols = detail::read_be32(img, 12, images_path);
  const std::uint32_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n != n_labels)
    throw ValidationError("idx: image count " + std::to_string(n) + " does not match label count " +
                          std::to_string(n_labels));
  const std::size_t plane = std::size_t{rows} * cols;
  if (img.size() < 16 + std::size_t{n} * plane) throw ValidationError("idx: truncated image data in " + images_path);
  if (lab.size() < 8 + std::size_t{n}) throw ValidationError("idx: truncated label data in " + labels_path);

  Dataset ds;
  ds.name = "idx";
  ds.num_classes = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::vector<double> px(plane);
    for (std::size_t p = 0; p < plane; ++p) px[p] = static_cast<double>(img[16 + i * plane + p]) / 255.0;
    ds.images.emplace_back(Shape{1, rows, cols}, std::move(px));
    ds.labels.push_back(lab[8 + i]);
    ds.num_classes = std::max<std::size_t>(ds.num_classes, lab[8 + i] + 1);
  }
  ds.num_classes = std::max<std::size_t>(ds.num_classes, 2);
  return ds;
}

/// Writes the IDX pair; pixel values are rounded half-up to bytes.
inline void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  auto be32 = [](std::ofstream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  if (ds.empty()) throw ValidationError("idx: empty dataset");
  const auto& s = ds.images[0].shape();
  if (s.channels != 1) throw ValidationError("idx: only single-channel images are supported");
  std::ofstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
  if (!img || !lab) throw RuntimeFailure("idx: cannot open output files");
  be32(img, kIdxImageMagic);
  be32(img, static_cast<std::uint32_t>(ds.size()));
  be32(img, static_cast<std::uint32_t>(s.height));
  be32(img, static_cast<std::uint32_t>(s.width));
  be32(lab, kIdxLabelMagic);
  be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.images[i].values())
      img.put(static_cast<char>(static_cast<unsigned char>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5))));
    lab.put(static_cast<char>(static_cast<unsigned char>(ds.labels[i])));
  }
}

// ---------------------------------------------------------------------------
// Dataset CSV: header "n,c,h,w", then n lines "label,v_1,...,v_{c*h*w}".

inline void save_dataset_csv(const Dataset& ds, std::ostream& os) {
  if (ds.empty()) throw ValidationError("csv: empty dataset");
  const auto& s = ds.images[0].shape();
  os << ds.size() << ',' << s.channels << ',' << s.height << ',' << s.width << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.labels[i];
    for (double v : ds.images[i].values()) os << ',' << format_real(v);
    os << '\n';
  }
}

inline Dataset load_dataset_csv(std::istream& is, const std::string& name = "csv") {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("csv: missing header");
  const auto head = split(line, ',');
  if (head.size() != 4) throw ValidationError("csv: header must be n,c,h,w");
  const auto n = static_cast<std::size_t>(parse_real(head[0]));
  const Shape s{static_cast<std::size_t>(parse_real(head[1])), static_cast<std::size_t>(parse_real(head[2])),
                static_cast<std::size_t>(parse_real(head[3]))};
  Dataset ds;
  ds.name = name;
  ds.num_classes = 0;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line, ',');
    if (fields.size() != s.size() + 1)
      throw ValidationError("csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(s.size() + 1));
    const double label = parse_real(fields[0]);
    if (label < 0 || label != std::floor(label)) throw ValidationError("csv: bad label on line " + std::to_string(line_no));
    std::vector<double> values(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) values[k] = parse_real(fields[k + 1]);
    ds.images.emplace_back(s, std::move(values));
    ds.labels.push_back(static_cast<std::size_t>(label));
    ds.num_classes = std::max(ds.num_classes, ds.labels.back() + 1);
  }
  if (ds.size() != n)
    throw ValidationError("csv: header announces " + std::to_string(n) + " rows, found " + std::to_string(ds.size()));
  ds.num_classes = std::max<std::size_t>(ds.num_classes, 2);
  return ds;
}

inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return load_dataset_csv(in, path);
}

} // namespace fwadv
