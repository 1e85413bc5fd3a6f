// Copyright 2026 The HetSeg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <span>
#include <type_traits>
#include <sstream>
#include <string>
#include <vector>

#include "hetseg/error.hpp"

namespace hetseg {

inline constexpr std::uint32_t kMaxUid = 9'999'999;
inline constexpr double kNormalizationTolerance = 1e-9;

// Row-major single-channel raster.
template <typename T>
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(std::size_t w, std::size_t h, T fill = T{})
      : width(w), height(h), data(w * h, fill) {}
  Raster(std::size_t w, std::size_t h, std::vector<T> values)
      : width(w), height(h), data(std::move(values)) {
    if (data.size() != w * h) {
      throw ValidationError("raster data length " +
                            std::to_string(data.size()) + " != " +
                            std::to_string(w) + "x" + std::to_string(h));
    }
  }

  std::size_t size() const { return data.size(); }
  T& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }

  bool operator==(const Raster&) const = default;
};

using ClassRaster = Raster<std::uint16_t>;
using UidRaster = Raster<std::uint32_t>;

// H x W grid of categorical vectors, channel-fastest.
struct ProbRaster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  ProbRaster() = default;
  ProbRaster(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  std::size_t num_pixels() const { return width * height; }

  std::span<double> pixel(std::size_t p) {
    return {data.data() + p * channels, channels};
  }
  std::span<const double> pixel(std::size_t p) const {
    return {data.data() + p * channels, channels};
  }

  bool operator==(const ProbRaster&) const = default;
};

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// Largest |sum - 1| over pixels; also reports negative entries via `negative`.
inline double max_normalization_error(const ProbRaster& r,
                                      bool* negative = nullptr) {
  double worst = 0.0;
  bool neg = false;
  for (std::size_t p = 0; p < r.num_pixels(); ++p) {
    double sum = 0.0;
    for (double v : r.pixel(p)) {
      if (v < 0.0 || !std::isfinite(v)) neg = true;
      sum += v;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  if (negative) *negative = neg;
  return worst;
}

inline void check_label_range(const ClassRaster& r, std::size_t num_labels) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.data[i] >= num_labels) {
      throw ValidationError("pixel " + std::to_string(i) + " has id " +
                            std::to_string(r.data[i]) + " >= " +
                            std::to_string(num_labels));
    }
  }
}

namespace detail {

inline std::size_t checked_area(std::size_t w, std::size_t h, std::size_t c,
                                std::size_t elem) {
  constexpr std::size_t kLimit = std::size_t{1} << 40;
  if (w > kLimit || h > kLimit || c > kLimit ||
      (w && h && c && (w * h > kLimit / c / elem))) {
    throw IoError("raster dimensions too large");
  }
  return w * h * c;
}

inline void read_exact(std::istream& in, char* dst, std::size_t n,
                       const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw IoError(std::string(what) + ": truncated payload");
  }
}

inline void expect_eof(std::istream& in, const char* what) {
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(std::string(what) + ": trailing bytes after payload");
  }
}

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    std::memcpy(&bits, &value, 8);
  } else {
    bits = value;
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  if constexpr (std::is_floating_point_v<T>) {
    double value;
    std::memcpy(&value, &bits, 8);
    return value;
  } else {
    return static_cast<T>(bits);
  }
}

// Strict "<a> <b> ...\n" header line of unsigned integers.
inline std::vector<std::size_t> read_dims_line(std::istream& in,
                                               std::size_t count,
                                               const char* what) {
  std::string line;
  if (!std::getline(in, line)) {
    throw IoError(std::string(what) + ": missing dimension line");
  }
  std::vector<std::size_t> dims;
  std::istringstream ss(line);
  std::string token;
  while (ss >> token) {
    if (token.find_first_not_of("0123456789") != std::string::npos ||
        token.size() > 15) {
      throw IoError(std::string(what) + ": bad dimension '" + token + "'");
    }
    dims.push_back(std::stoull(token));
  }
  if (dims.size() != count) {
    throw IoError(std::string(what) + ": expected " + std::to_string(count) +
                  " dimensions");
  }
  return dims;
}

inline void expect_magic(std::istream& in, const std::string& magic,
                         const char* what) {
  std::string line;
  if (!std::getline(in, line) || line != magic) {
    throw IoError(std::string(what) + ": bad magic (expected " + magic + ")");
  }
}

// PNM header token: skips whitespace and '#' comments.
inline std::string pnm_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

inline std::size_t pnm_number(std::istream& in, const char* field) {
  std::string token = pnm_token(in);
  if (token.empty() || token.size() > 15 ||
      token.find_first_not_of("0123456789") != std::string::npos) {
    throw IoError(std::string("pgm: bad ") + field + " '" + token + "'");
  }
  return std::stoull(token);
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace detail

// ---- PGM (P5, 16-bit) ------------------------------------------------------

// Canonical output: "P5 <w> <h> 65535\n" followed by big-endian samples.
inline void write_pgm16(std::ostream& out, const ClassRaster& r) {
  out << "P5 " << r.width << ' ' << r.height << " 65535\n";
  for (std::uint16_t v : r.data) {
    const char bytes[2] = {static_cast<char>(v >> 8),
                           static_cast<char>(v & 0xFF)};
    out.write(bytes, 2);
  }
  if (!out) throw IoError("pgm: write failed");
}

inline ClassRaster read_pgm16(std::istream& in) {
  if (detail::pnm_token(in) != "P5") {
    throw IoError("pgm: bad magic (expected P5)");
  }
  std::size_t w = detail::pnm_number(in, "width");
  std::size_t h = detail::pnm_number(in, "height");
  // pnm_number consumed exactly one whitespace byte after maxval.
  std::size_t maxval = detail::pnm_number(in, "maxval");
  if (maxval == 0 || maxval > 65535) {
    throw IoError("pgm: maxval " + std::to_string(maxval) +
                  " outside 1..65535");
  }
  const std::size_t bytes_per_sample = maxval < 256 ? 1 : 2;
  const std::size_t n = detail::checked_area(w, h, 1, bytes_per_sample);
  std::vector<unsigned char> buf(n * bytes_per_sample);
  detail::read_exact(in, reinterpret_cast<char*>(buf.data()), buf.size(),
                     "pgm");
  detail::expect_eof(in, "pgm");
  ClassRaster r(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t v = bytes_per_sample == 1
                          ? buf[i]
                          : (std::uint32_t{buf[2 * i]} << 8) | buf[2 * i + 1];
    if (v > maxval) {
      throw IoError("pgm: sample " + std::to_string(v) + " exceeds maxval");
    }
    r.data[i] = static_cast<std::uint16_t>(v);
  }
  return r;
}

// ---- UIR1 (32-bit UIDs) ----------------------------------------------------

inline void write_uir32(std::ostream& out, const UidRaster& r) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.data[i] > kMaxUid) {
      throw ValidationError("uir: value " + std::to_string(r.data[i]) +
                            " at pixel " + std::to_string(i) +
                            " exceeds 9999999");
    }
  }
  out << "UIR1\n" << r.width << ' ' << r.height << '\n';
  for (std::uint32_t v : r.data) detail::put_le(out, v);
  if (!out) throw IoError("uir: write failed");
}

inline UidRaster read_uir32(std::istream& in) {
  detail::expect_magic(in, "UIR1", "uir");
  auto dims = detail::read_dims_line(in, 2, "uir");
  const std::size_t n = detail::checked_area(dims[0], dims[1], 1, 4);
  std::vector<unsigned char> buf(n * 4);
  detail::read_exact(in, reinterpret_cast<char*>(buf.data()), buf.size(),
                     "uir");
  detail::expect_eof(in, "uir");
  UidRaster r(dims[0], dims[1]);
  for (std::size_t i = 0; i < n; ++i) {
    r.data[i] = detail::get_le<std::uint32_t>(&buf[4 * i]);
  }
  return r;
}

// ---- PRB1 (64-bit probabilities) -------------------------------------------

struct ProbLoad {
  ProbRaster raster;
  std::vector<std::string> warnings;
};

inline void write_prb(std::ostream& out, const ProbRaster& r) {
  if (r.data.size() != r.width * r.height * r.channels) {
    throw ValidationError("prb: data length does not match dimensions");
  }
  if (r.num_pixels() > 0) {
    bool negative = false;
    double err = max_normalization_error(r, &negative);
    if (negative || err > kNormalizationTolerance) {
      throw ValidationError("prb: raster is not normalized (max |sum-1| = " +
                            std::to_string(err) + ")");
    }
  }
  out << "PRB1\n" << r.width << ' ' << r.height << ' ' << r.channels << '\n';
  for (double v : r.data) detail::put_le(out, v);
  if (!out) throw IoError("prb: write failed");
}

inline ProbLoad read_prb(std::istream& in) {
  detail::expect_magic(in, "PRB1", "prb");
  auto dims = detail::read_dims_line(in, 3, "prb");
  const std::size_t n = detail::checked_area(dims[0], dims[1], dims[2], 8);
  std::vector<unsigned char> buf(n * 8);
  detail::read_exact(in, reinterpret_cast<char*>(buf.data()), buf.size(),
                     "prb");
  detail::expect_eof(in, "prb");
  ProbLoad load;
  load.raster = ProbRaster(dims[0], dims[1], dims[2]);
  for (std::size_t i = 0; i < n; ++i) {
    load.raster.data[i] = detail::get_le<double>(&buf[8 * i]);
  }
  if (load.raster.num_pixels() > 0) {
    bool negative = false;
    double err = max_normalization_error(load.raster, &negative);
    if (negative || err > kNormalizationTolerance) {
      std::ostringstream msg;
      msg << "per-pixel sums deviate from 1 by up to " << err
          << (negative ? " (negative or non-finite entries present)" : "");
      load.warnings.push_back(msg.str());
    }
  }
  return load;
}

// ---- path helpers ----------------------------------------------------------

inline void write_pgm16(const std::filesystem::path& path, const ClassRaster& r) {
  auto out = detail::open_out(path);
  write_pgm16(out, r);
}
inline ClassRaster read_pgm16(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_pgm16(in);
}
inline void write_uir32(const std::filesystem::path& path, const UidRaster& r) {
  auto out = detail::open_out(path);
  write_uir32(out, r);
}
inline UidRaster read_uir32(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_uir32(in);
}
inline void write_prb(const std::filesystem::path& path, const ProbRaster& r) {
  auto out = detail::open_out(path);
  write_prb(out, r);
}
inline ProbLoad read_prb(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_prb(in);
}

enum class RasterFormat { kPgm16, kUir32, kPrb };

inline const char* format_name(RasterFormat f) {
  switch (f) {
    case RasterFormat::kPgm16: return "pgm16";
    case RasterFormat::kUir32: return "uir32";
    case RasterFormat::kPrb: return "prb";
  }
  return "unknown";
}

inline RasterFormat sniff_format(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  char magic[4] = {};
  in.read(magic, 4);
  const std::string head(magic, static_cast<std::size_t>(in.gcount()));
  if (head == "UIR1") return RasterFormat::kUir32;
  if (head == "PRB1") return RasterFormat::kPrb;
  if (head.size() >= 2 && head.compare(0, 2, "P5") == 0) {
    return RasterFormat::kPgm16;
  }
  throw IoError("'" + path.string() + "': unrecognized raster format");
}

// ---- confusion matrix ------------------------------------------------------

// Rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_labels = 0)
      : num_labels_(num_labels), counts_(num_labels * num_labels, 0) {}

  std::size_t num_labels() const { return num_labels_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const {
    return counts_[gt * num_labels_ + pred];
  }
  void add(std::size_t gt, std::size_t pred, std::uint64_t n = 1) {
    counts_[gt * num_labels_ + pred] += n;
  }

  std::uint64_t row_sum(std::size_t gt) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < num_labels_; ++p) s += at(gt, p);
    return s;
  }
  std::uint64_t col_sum(std::size_t pred) const {
    std::uint64_t s = 0;
    for (std::size_t g = 0; g < num_labels_; ++g) s += at(g, pred);
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.num_labels_ != num_labels_) {
      throw ValidationError("cannot merge confusion matrices of different size");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      counts_[i] += other.counts_[i];
    }
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t num_labels_;
  std::vector<std::uint64_t> counts_;
};

// Pixels whose ground truth is in `ignore` are skipped; a void prediction on
// non-void ground truth still counts as an error.
inline ConfusionMatrix confusion_matrix(const ClassRaster& gt,
                                        const ClassRaster& pred,
                                        std::size_t num_labels,
                                        const std::set<std::uint16_t>& ignore = {}) {
  if (gt.width != pred.width || gt.height != pred.height) {
    throw ValidationError("confusion: dimension mismatch (" +
                          std::to_string(gt.width) + "x" +
                          std::to_string(gt.height) + " vs " +
                          std::to_string(pred.width) + "x" +
                          std::to_string(pred.height) + ")");
  }
  ConfusionMatrix cm(num_labels);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::uint16_t g = gt.data[i];
    const std::uint16_t p = pred.data[i];
    if (g >= num_labels || p >= num_labels) {
      throw ValidationError("confusion: id " + std::to_string(std::max(g, p)) +
                            " at pixel " + std::to_string(i) + " >= L=" +
                            std::to_string(num_labels));
    }
    if (ignore.count(g)) continue;
    cm.add(g, p);
  }
  return cm;
}

}  // namespace hetseg
