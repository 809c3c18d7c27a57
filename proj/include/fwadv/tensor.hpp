#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fwadv/error.hpp"

namespace fwadv {

struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Dense c x h x w array, channel-major then row then column.
/// Used both for images (entries in [0,1]) and for perturbations and gradients.
class ImageTensor {
public:
  ImageTensor() = default;

  explicit ImageTensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
    if (shape.channels == 0 || shape.height == 0 || shape.width == 0)
      throw ValidationError("tensor dimensions must be positive");
  }

  ImageTensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (shape.channels == 0 || shape.height == 0 || shape.width == 0)
      throw ValidationError("tensor dimensions must be positive");
    if (data_.size() != shape.size())
      throw ValidationError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                            to_string(shape));
  }

  const Shape& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t c, std::size_t r, std::size_t col) {
    return data_[(c * shape_.height + r) * shape_.width + col];
  }
  double operator()(std::size_t c, std::size_t r, std::size_t col) const {
    return data_[(c * shape_.height + r) * shape_.width + col];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  ImageTensor& operator+=(const ImageTensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  ImageTensor& operator-=(const ImageTensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  ImageTensor& operator*=(double a) {
    for (auto& v : data_) v *= a;
    return *this;
  }
  friend ImageTensor operator+(ImageTensor a, const ImageTensor& b) { return a += b; }
  friend ImageTensor operator-(ImageTensor a, const ImageTensor& b) { return a -= b; }
  friend ImageTensor operator*(double s, ImageTensor a) { return a *= s; }
  friend ImageTensor operator-(ImageTensor a) { return a *= -1.0; }
  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

  void require_same_shape(const ImageTensor& o) const {
    if (!(shape_ == o.shape_))
      throw ValidationError("shape mismatch: " + to_string(shape_) + " vs " + to_string(o.shape_));
  }

private:
  Shape shape_{};
  std::vector<double> data_;
};

inline double dot(const ImageTensor& a, const ImageTensor& b) {
  a.require_same_shape(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(const ImageTensor& a) { return std::sqrt(dot(a, a)); }

inline double l1_norm(const ImageTensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += std::abs(v);
  return acc;
}

inline double linf_norm(const ImageTensor& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  Matrix transposed() const {
    Matrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  double frobenius() const {
    double acc = 0.0;
    for (double v : data) acc += v * v;
    return std::sqrt(acc);
  }

  bool is_zero() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return v == 0.0; });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ValidationError("matrix product dimension mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

// ---------------------------------------------------------------------------
// Pixel groups

/// A rectangle of pixels over a set of channels. Half-open row and column ranges.
struct PixelGroup {
  std::vector<std::size_t> channels;
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;

  std::size_t rows() const { return row_end - row_begin; }
  std::size_t cols() const { return col_end - col_begin; }
  /// Rows of the matricized group: channel blocks stacked vertically.
  std::size_t matrix_rows() const { return channels.size() * rows(); }

  bool fits(const Shape& s) const {
    if (channels.empty() || row_begin >= row_end || col_begin >= col_end) return false;
    if (row_end > s.height || col_end > s.width) return false;
    return std::all_of(channels.begin(), channels.end(), [&](std::size_t c) { return c < s.channels; });
  }

  bool contains(std::size_t c, std::size_t r, std::size_t col) const {
    return r >= row_begin && r < row_end && col >= col_begin && col < col_end &&
           std::find(channels.begin(), channels.end(), c) != channels.end();
  }

  static PixelGroup full_frame(const Shape& s, std::size_t channel) {
    return PixelGroup{{channel}, 0, s.height, 0, s.width};
  }

  friend bool operator==(const PixelGroup&, const PixelGroup&) = default;
};

inline void check_group(const Shape& s, const PixelGroup& g) {
  if (!g.fits(s)) throw ValidationError("group exceeds tensor bounds");
}

/// Copies x[g] into a (|channels| * rows) x cols matrix.
inline Matrix extract_group(const ImageTensor& x, const PixelGroup& g) {
  check_group(x.shape(), g);
  Matrix m(g.matrix_rows(), g.cols());
  for (std::size_t k = 0; k < g.channels.size(); ++k)
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c)
        m(k * g.rows() + r, c) = x(g.channels[k], g.row_begin + r, g.col_begin + c);
  return m;
}

/// Writes m back into x[g]; entries of x outside g are left untouched.
inline void scatter_group(ImageTensor& x, const PixelGroup& g, const Matrix& m) {
  check_group(x.shape(), g);
  if (m.rows != g.matrix_rows() || m.cols != g.cols()) throw ValidationError("matrix does not match group extent");
  for (std::size_t k = 0; k < g.channels.size(); ++k)
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c)
        x(g.channels[k], g.row_begin + r, g.col_begin + c) = m(k * g.rows() + r, c);
}

/// Disjoint rectangular groups with positive weights.
class GroupPartition {
public:
  GroupPartition() = default;

  GroupPartition(Shape shape, std::vector<PixelGroup> groups, std::vector<double> weights = {})
      : shape_(shape), groups_(std::move(groups)), weights_(std::move(weights)) {
    if (groups_.empty()) throw ValidationError("partition needs at least one group");
    if (weights_.empty()) weights_.assign(groups_.size(), 1.0);
    if (weights_.size() != groups_.size()) throw ValidationError("one weight per group is required");
    for (double w : weights_)
      if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("group weights must be strictly positive");
    std::vector<char> owned(shape_.size(), 0);
    for (const auto& g : groups_) {
      check_group(shape_, g);
      for (std::size_t c : g.channels)
        for (std::size_t r = g.row_begin; r < g.row_end; ++r)
          for (std::size_t col = g.col_begin; col < g.col_end; ++col) {
            auto& slot = owned[(c * shape_.height + r) * shape_.width + col];
            if (slot) throw ValidationError("groups overlap");
            slot = 1;
          }
    }
  }

  /// One full-frame group per channel.
  static GroupPartition per_channel(const Shape& s) {
    std::vector<PixelGroup> groups;
    for (std::size_t c = 0; c < s.channels; ++c) groups.push_back(PixelGroup::full_frame(s, c));
    return GroupPartition(s, std::move(groups));
  }

  /// Tiles the frame into a grid of block_rows x block_cols rectangles spanning all channels.
  static GroupPartition grid(const Shape& s, std::size_t block_rows, std::size_t block_cols) {
    if (block_rows == 0 || block_cols == 0) throw ValidationError("grid block size must be positive");
    std::vector<std::size_t> all(s.channels);
    for (std::size_t c = 0; c < s.channels; ++c) all[c] = c;
    std::vector<PixelGroup> groups;
    for (std::size_t r = 0; r < s.height; r += block_rows)
      for (std::size_t c = 0; c < s.width; c += block_cols)
        groups.push_back(PixelGroup{all, r, std::min(r + block_rows, s.height), c, std::min(c + block_cols, s.width)});
    return GroupPartition(s, std::move(groups));
  }

  GroupPartition with_weights(std::vector<double> weights) const {
    return GroupPartition(shape_, groups_, std::move(weights));
  }

  const Shape& shape() const { return shape_; }
  const std::vector<PixelGroup>& groups() const { return groups_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return groups_.size(); }

private:
  Shape shape_{};
  std::vector<PixelGroup> groups_;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// Matricization

enum class Matricization { Stacked, PerChannel };

/// Stacked: one (c*h) x w matrix. PerChannel: c matrices of h x w.
inline std::vector<Matrix> matricize(const ImageTensor& x, Matricization mode) {
  const auto& s = x.shape();
  if (mode == Matricization::Stacked) {
    Matrix m(s.channels * s.height, s.width);
    m.data = x.data();
    return {std::move(m)};
  }
  std::vector<Matrix> out;
  out.reserve(s.channels);
  const std::size_t plane = s.height * s.width;
  for (std::size_t c = 0; c < s.channels; ++c) {
    Matrix m(s.height, s.width);
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(c * plane), plane, m.data.begin());
    out.push_back(std::move(m));
  }
  return out;
}

inline ImageTensor dematricize(std::span<const Matrix> blocks, const Shape& s, Matricization mode) {
  std::vector<double> data;
  data.reserve(s.size());
  if (mode == Matricization::Stacked) {
    if (blocks.size() != 1 || blocks[0].rows != s.channels * s.height || blocks[0].cols != s.width)
      throw ValidationError("stacked matrix does not match tensor shape");
    data = blocks[0].data;
  } else {
    if (blocks.size() != s.channels) throw ValidationError("expected one matrix per channel");
    for (const auto& b : blocks) {
      if (b.rows != s.height || b.cols != s.width) throw ValidationError("channel matrix does not match tensor shape");
      data.insert(data.end(), b.data.begin(), b.data.end());
    }
  }
  return ImageTensor(s, std::move(data));
}

// ---------------------------------------------------------------------------
// Number formatting and tensor CSV

/// Shortest decimal form that round-trips to the same double.
inline std::string format_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw RuntimeFailure("failed to format number");
  return std::string(buf, end);
}

inline double parse_real(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ValidationError("not a number: '" + std::string(text) + "'");
  return v;
}

inline std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

/// Header line "c,h,w" followed by one line of c*h*w comma-separated reals.
inline void write_tensor_csv(std::ostream& os, const ImageTensor& x) {
  os << x.channels() << ',' << x.height() << ',' << x.width() << '\n';
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << format_real(x[i]);
  os << '\n';
}

inline ImageTensor read_tensor_csv(std::istream& is) {
  std::string header, body;
  if (!std::getline(is, header)) throw ValidationError("tensor csv: missing header");
  const auto dims = split(header, ',');
  if (dims.size() != 3) throw ValidationError("tensor csv: header must be c,h,w");
  Shape s{static_cast<std::size_t>(parse_real(dims[0])), static_cast<std::size_t>(parse_real(dims[1])),
          static_cast<std::size_t>(parse_real(dims[2]))};
  std::vector<double> values;
  while (values.size() < s.size() && std::getline(is, body)) {
    if (body.empty() || body == "\r") continue;
    for (const auto& field : split(body, ',')) values.push_back(parse_real(field));
  }
  if (values.size() != s.size())
    throw ValidationError("tensor csv: expected " + std::to_string(s.size()) + " values, got " +
                          std::to_string(values.size()));
  return ImageTensor(s, std::move(values));
}

} // namespace fwadv
