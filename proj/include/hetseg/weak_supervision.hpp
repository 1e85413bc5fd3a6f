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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "hetseg/conversion.hpp"
#include "hetseg/error.hpp"
#include "hetseg/raster.hpp"
#include "json.hpp"

namespace hetseg {

// Box coordinates are half-open: x0 <= x < x1, y0 <= y < y1. Tags carry no
// box and cover the whole image.
struct WeakAnnotation {
  enum class Kind { kBox, kTag };

  Kind kind = Kind::kBox;
  std::uint32_t label = 0;
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  static WeakAnnotation box(std::uint32_t label, std::size_t x0, std::size_t y0,
                            std::size_t x1, std::size_t y1) {
    return {Kind::kBox, label, x0, y0, x1, y1};
  }
  static WeakAnnotation tag(std::uint32_t label) {
    return {Kind::kTag, label, 0, 0, 0, 0};
  }
};

// Channel 0 of a pseudo-label raster is "unlabeled".
inline constexpr std::size_t kUnlabeledChannel = 0;

// Per-pixel, per-label vote counts (pixel-major, label-fastest), accumulated
// with one 2-D difference table per label.
inline std::vector<std::uint32_t> vote_counts(
    std::span<const WeakAnnotation> annots, std::size_t num_labels,
    std::size_t width, std::size_t height) {
  const std::size_t stride = width + 1;
  std::vector<std::int64_t> diff((height + 1) * stride * num_labels, 0);
  auto cell = [&](std::size_t x, std::size_t y, std::size_t l) -> std::int64_t& {
    return diff[(y * stride + x) * num_labels + l];
  };
  for (const auto& a : annots) {
    if (a.label >= num_labels) {
      throw ValidationError("annotation label " + std::to_string(a.label) +
                            " >= L=" + std::to_string(num_labels));
    }
    std::size_t x0 = 0, y0 = 0, x1 = width, y1 = height;
    if (a.kind == WeakAnnotation::Kind::kBox) {
      if (!(a.x0 < a.x1 && a.x1 <= width && a.y0 < a.y1 && a.y1 <= height)) {
        throw ValidationError(
            "box (" + std::to_string(a.x0) + "," + std::to_string(a.y0) + "," +
            std::to_string(a.x1) + "," + std::to_string(a.y1) +
            ") outside " + std::to_string(width) + "x" +
            std::to_string(height) + " or empty");
      }
      x0 = a.x0, y0 = a.y0, x1 = a.x1, y1 = a.y1;
    }
    cell(x0, y0, a.label) += 1;
    cell(x1, y0, a.label) -= 1;
    cell(x0, y1, a.label) -= 1;
    cell(x1, y1, a.label) += 1;
  }
  // 2-D prefix sum turns the corner marks into per-pixel coverage.
  for (std::size_t y = 0; y <= height; ++y) {
    for (std::size_t x = 0; x <= width; ++x) {
      for (std::size_t l = 0; l < num_labels; ++l) {
        std::int64_t v = cell(x, y, l);
        if (x > 0) v += cell(x - 1, y, l);
        if (y > 0) v += cell(x, y - 1, l);
        if (x > 0 && y > 0) v -= cell(x - 1, y - 1, l);
        cell(x, y, l) = v;
      }
    }
  }
  std::vector<std::uint32_t> counts(width * height * num_labels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t l = 0; l < num_labels; ++l) {
        counts[(y * width + x) * num_labels + l] =
            static_cast<std::uint32_t>(cell(x, y, l));
      }
    }
  }
  return counts;
}

// Each annotation casts a unit vote on every pixel it covers; votes are
// normalized per pixel. Uncovered pixels become unlabeled.
inline ProbRaster rasterize_votes(std::span<const WeakAnnotation> annots,
                                  std::size_t num_labels, std::size_t width,
                                  std::size_t height) {
  if (num_labels == 0) throw ValidationError("label count must be >= 1");
  const auto counts = vote_counts(annots, num_labels, width, height);
  ProbRaster out(width, height, num_labels);
  for (std::size_t p = 0; p < out.num_pixels(); ++p) {
    std::uint64_t total = 0;
    for (std::size_t l = 0; l < num_labels; ++l) {
      total += counts[p * num_labels + l];
    }
    auto px = out.pixel(p);
    if (total == 0) {
      px[kUnlabeledChannel] = 1.0;
      continue;
    }
    for (std::size_t l = 0; l < num_labels; ++l) {
      px[l] = static_cast<double>(counts[p * num_labels + l]) /
              static_cast<double>(total);
    }
  }
  return out;
}

inline bool is_labeled(std::span<const double> pseudo_pixel) {
  return argmax(pseudo_pixel) != kUnlabeledChannel;
}

// Keeps a pseudo-label pixel iff the prediction's argmax agrees with the
// pseudo-label argmax and reaches `threshold`; otherwise marks it unlabeled.
inline ProbRaster refine(const ProbRaster& pseudo, const ProbRaster& pred,
                         double threshold = 0.9) {
  if (pseudo.channels != pred.channels) {
    throw ValidationError("refine: channel mismatch (" +
                          std::to_string(pseudo.channels) + " vs " +
                          std::to_string(pred.channels) + ")");
  }
  if (pseudo.width != pred.width || pseudo.height != pred.height) {
    throw ValidationError("refine: dimension mismatch");
  }
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ValidationError("refine: threshold must be in (0, 1]");
  }
  ProbRaster out = pseudo;
  for (std::size_t p = 0; p < pseudo.num_pixels(); ++p) {
    const auto target = pseudo.pixel(p);
    const auto sigma = pred.pixel(p);
    const std::size_t wanted = argmax(target);
    const std::size_t predicted = argmax(sigma);
    const bool keep = wanted != kUnlabeledChannel && predicted == wanted &&
                      sigma[predicted] >= threshold;
    if (!keep) {
      auto px = out.pixel(p);
      std::fill(px.begin(), px.end(), 0.0);
      px[kUnlabeledChannel] = 1.0;
    }
  }
  return out;
}

inline std::size_t count_labeled(const ProbRaster& pseudo) {
  std::size_t n = 0;
  for (std::size_t p = 0; p < pseudo.num_pixels(); ++p) {
    n += is_labeled(pseudo.pixel(p));
  }
  return n;
}

// Batch loss over strongly and weakly labeled images:
//   -sum_p sum_j z_pj log sigma_pj,
// with z = y / |P_strong| on strong pixels and z = refined / |P_weak| on weak
// pixels. Strong pixels with label 0 (void) and weak pixels left unlabeled are
// outside P; the unlabeled channel never contributes.
inline LossResult mixed_loss(std::span<const ClassRaster> strong_labels,
                             std::span<const ProbRaster> strong_sigma,
                             std::span<const ProbRaster> weak_refined,
                             std::span<const ProbRaster> weak_sigma) {
  if (strong_labels.size() != strong_sigma.size() ||
      weak_refined.size() != weak_sigma.size()) {
    throw ValidationError("mixed_loss: unpaired images");
  }
  LossResult result;
  double strong_sum = 0.0, weak_sum = 0.0;
  std::size_t strong_pixels = 0, weak_pixels = 0;

  for (std::size_t i = 0; i < strong_labels.size(); ++i) {
    const auto& y = strong_labels[i];
    const auto& s = strong_sigma[i];
    if (y.width != s.width || y.height != s.height) {
      throw ValidationError("mixed_loss: strong image " + std::to_string(i) +
                            " dimension mismatch");
    }
    for (std::size_t p = 0; p < y.size(); ++p) {
      const std::uint16_t label = y.data[p];
      if (label == 0) continue;
      if (label >= s.channels) {
        throw ValidationError("mixed_loss: label out of range");
      }
      strong_sum -= detail::safe_log(s.pixel(p)[label], result.clamped);
      ++strong_pixels;
    }
  }
  for (std::size_t i = 0; i < weak_refined.size(); ++i) {
    const auto& z = weak_refined[i];
    const auto& s = weak_sigma[i];
    if (z.width != s.width || z.height != s.height ||
        z.channels != s.channels) {
      throw ValidationError("mixed_loss: weak image " + std::to_string(i) +
                            " shape mismatch");
    }
    for (std::size_t p = 0; p < z.num_pixels(); ++p) {
      const auto target = z.pixel(p);
      if (!is_labeled(target)) continue;
      const auto sigma = s.pixel(p);
      for (std::size_t j = kUnlabeledChannel + 1; j < target.size(); ++j) {
        if (target[j] == 0.0) continue;
        weak_sum -= target[j] * detail::safe_log(sigma[j], result.clamped);
      }
      ++weak_pixels;
    }
  }
  if (strong_pixels == 0 && weak_pixels == 0) {
    throw NumericError("mixed_loss: no labeled strong or weak pixels");
  }
  if (strong_pixels) result.value += strong_sum / strong_pixels;
  if (weak_pixels) result.value += weak_sum / weak_pixels;
  return result;
}

// ---- annotations file (JSON lines) -----------------------------------------

inline std::vector<WeakAnnotation> read_annotations(std::istream& in) {
  std::vector<WeakAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      const auto label = j.at("label").get<std::uint32_t>();
      if (kind == "tag") {
        out.push_back(WeakAnnotation::tag(label));
      } else if (kind == "box") {
        out.push_back(WeakAnnotation::box(
            label, j.at("x0").get<std::size_t>(), j.at("y0").get<std::size_t>(),
            j.at("x1").get<std::size_t>(), j.at("y1").get<std::size_t>()));
      } else {
        throw IoError("unknown kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("annotations line " + std::to_string(line_no) + ": " +
                    e.what());
    } catch (const IoError& e) {
      throw IoError("annotations line " + std::to_string(line_no) + ": " +
                    e.what());
    }
  }
  return out;
}

inline std::vector<WeakAnnotation> read_annotations(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_annotations(in);
}

}  // namespace hetseg
