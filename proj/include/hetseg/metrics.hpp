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
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hetseg/error.hpp"
#include "hetseg/panoptic_uid.hpp"
#include "hetseg/raster.hpp"
#include "json.hpp"

namespace hetseg {

// ---- semantic segmentation -------------------------------------------------

// Per-class IoU with a validity mask; invalid classes are absent from both
// ground truth and prediction (or explicitly ignored) and stay out of means.
struct IouTable {
  std::vector<double> iou;
  std::vector<bool> valid;

  std::vector<double> valid_values() const {
    std::vector<double> out;
    for (std::size_t c = 0; c < iou.size(); ++c) {
      if (valid[c]) out.push_back(iou[c]);
    }
    return out;
  }
};

struct SemsegScores {
  IouTable iou;
  std::vector<double> pa;
  std::vector<bool> pa_valid;   // ground-truth row non-empty
  std::optional<double> miou;   // nullopt when no class is valid
  std::optional<double> mpa;
};

inline SemsegScores miou_mpa(const ConfusionMatrix& cm,
                             const std::set<std::uint16_t>& ignore = {}) {
  const std::size_t n = cm.num_labels();
  SemsegScores s;
  s.iou.iou.assign(n, 0.0);
  s.iou.valid.assign(n, false);
  s.pa.assign(n, 0.0);
  s.pa_valid.assign(n, false);
  double iou_sum = 0.0, pa_sum = 0.0;
  std::size_t iou_n = 0, pa_n = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (ignore.count(static_cast<std::uint16_t>(c))) continue;
    const auto tp = cm.at(c, c);
    const auto row = cm.row_sum(c);
    const auto col = cm.col_sum(c);
    const auto denom = row + col - tp;
    if (denom > 0) {
      s.iou.iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
      s.iou.valid[c] = true;
      iou_sum += s.iou.iou[c];
      ++iou_n;
    }
    if (row > 0) {
      s.pa[c] = static_cast<double>(tp) / static_cast<double>(row);
      s.pa_valid[c] = true;
      pa_sum += s.pa[c];
      ++pa_n;
    }
  }
  if (iou_n) s.miou = iou_sum / static_cast<double>(iou_n);
  if (pa_n) s.mpa = pa_sum / static_cast<double>(pa_n);
  return s;
}

// Threshold-averaged, c-normalized count of classes with IoU strictly above
// each threshold t in {0, 1/n_t, ..., 1 - 1/n_t}.
inline double knowledgeability(std::span<const double> ious,
                               std::size_t class_budget,
                               std::size_t num_thresholds = 10) {
  if (class_budget == 0 || num_thresholds == 0) {
    throw ValidationError("knowledgeability: c and n_t must be >= 1");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < num_thresholds; ++k) {
    const double t =
        static_cast<double>(k) / static_cast<double>(num_thresholds);
    std::size_t above = 0;
    for (double v : ious) above += v > t;
    acc += static_cast<double>(std::min(above, class_budget)) /
           static_cast<double>(class_budget);
  }
  return acc / static_cast<double>(num_thresholds);
}

inline double knowledgeability(const IouTable& table, std::size_t class_budget,
                               std::size_t num_thresholds = 10) {
  const auto values = table.valid_values();
  return knowledgeability(values, class_budget, num_thresholds);
}

// Percentage degradation under an artifact, truncated to <= 0.
inline double impact(double miou_none, double miou_low, double miou_high) {
  if (miou_none < 0.0 || miou_low < 0.0 || miou_high < 0.0) {
    throw ValidationError("impact: inputs must be >= 0");
  }
  const double denom = std::max(miou_none, miou_low);
  if (denom == 0.0) {
    throw NumericError("impact: max(none, low) is zero");
  }
  return std::min(0.0, 100.0 * std::min(miou_low, miou_high) / denom - 100.0);
}

// ---- panoptic / part-aware panoptic quality --------------------------------

// pixels are linear indices (y * width + x); parts, when non-empty, is
// parallel to pixels and holds part ids (0 = void part).
struct Segment {
  std::uint32_t category = 0;
  std::optional<std::uint32_t> instance;
  std::vector<std::uint32_t> pixels;
  std::vector<std::uint16_t> parts;
};

struct SegmentSet {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Segment> segments;
};

struct PqClassStats {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  double score_sum = 0.0;  // matched IoU (PQ) or IOU_p (PartPQ)

  double quality() const {
    const double denom = static_cast<double>(tp) + 0.5 * static_cast<double>(fp) +
                         0.5 * static_cast<double>(fn);
    return denom > 0.0 ? score_sum / denom : 0.0;
  }
  bool present() const { return tp + fp + fn > 0; }
};

struct PqStats {
  std::map<std::uint32_t, PqClassStats> per_class;

  PqStats& operator+=(const PqStats& other) {
    for (const auto& [cls, st] : other.per_class) {
      auto& dst = per_class[cls];
      dst.tp += st.tp;
      dst.fp += st.fp;
      dst.fn += st.fn;
      dst.score_sum += st.score_sum;
    }
    return *this;
  }

  // Mean of per-class quality over classes with at least one segment;
  // 0 when no class is present.
  double value() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [cls, st] : per_class) {
      if (!st.present()) continue;
      sum += st.quality();
      ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
  }
};

struct PanopticMatch {
  std::size_t gt;
  std::size_t pred;
  double iou;
  double part_score;
};

struct PanopticResult {
  PqStats pq;
  PqStats part_pq;
  std::vector<PanopticMatch> matches;
};

namespace detail {

inline constexpr std::int32_t kNoSegment = -1;

inline std::vector<std::int32_t> owner_map(const SegmentSet& set,
                                           const char* which) {
  std::vector<std::int32_t> owner(set.width * set.height, kNoSegment);
  for (std::size_t s = 0; s < set.segments.size(); ++s) {
    const auto& seg = set.segments[s];
    if (!seg.parts.empty() && seg.parts.size() != seg.pixels.size()) {
      throw ValidationError(std::string(which) + " segment " +
                            std::to_string(s) + ": parts/pixels length differ");
    }
    for (std::uint32_t px : seg.pixels) {
      if (px >= owner.size()) {
        throw ValidationError(std::string(which) + " segment " +
                              std::to_string(s) + ": pixel out of range");
      }
      if (owner[px] != kNoSegment) {
        throw ValidationError(std::string(which) + " segments " +
                              std::to_string(owner[px]) + " and " +
                              std::to_string(s) + " overlap");
      }
      owner[px] = static_cast<std::int32_t>(s);
    }
  }
  return owner;
}

inline void check_parts(const SegmentSet& set,
                        const std::map<std::uint32_t, std::uint32_t>& parts_spec,
                        const char* which) {
  for (std::size_t s = 0; s < set.segments.size(); ++s) {
    const auto& seg = set.segments[s];
    auto it = parts_spec.find(seg.category);
    const std::uint32_t allowed = it == parts_spec.end() ? 0 : it->second;
    for (std::uint16_t pid : seg.parts) {
      if (pid > allowed) {
        throw ValidationError(std::string(which) + " segment " +
                              std::to_string(s) + " (class " +
                              std::to_string(seg.category) + "): part " +
                              std::to_string(pid) + " outside declared set");
      }
    }
  }
}

}  // namespace detail

// Matches same-class segments with IoU > 0.5 and accumulates PQ and PartPQ
// statistics for one image. Pixels of ground-truth void segments are removed
// from predicted masks before matching; predicted void segments are ignored.
// For a matched pair whose class has parts, the PartPQ score is the mean IoU
// over the part classes present in either segment (ground-truth void-part
// pixels excluded); if no part class is present it falls back to the
// instance IoU.
inline PanopticResult evaluate_panoptic(
    const SegmentSet& gt, const SegmentSet& pred,
    const std::map<std::uint32_t, std::uint32_t>& parts_spec = {},
    const std::set<std::uint32_t>& void_ids = {0}) {
  if (gt.width != pred.width || gt.height != pred.height) {
    throw ValidationError("panoptic: image dimensions differ");
  }
  const auto gt_owner = detail::owner_map(gt, "gt");
  const auto pred_owner = detail::owner_map(pred, "pred");
  detail::check_parts(gt, parts_spec, "gt");
  detail::check_parts(pred, parts_spec, "pred");

  auto is_void = [&](const Segment& s) { return void_ids.count(s.category) > 0; };
  auto gt_void_at = [&](std::uint32_t px) {
    const auto o = gt_owner[px];
    return o != detail::kNoSegment && is_void(gt.segments[o]);
  };

  // Predicted part id per pixel (0 where none).
  std::vector<std::uint16_t> pred_part(pred_owner.size(), 0);
  for (const auto& seg : pred.segments) {
    for (std::size_t i = 0; i < seg.parts.size(); ++i) {
      pred_part[seg.pixels[i]] = seg.parts[i];
    }
  }

  const std::size_t num_pred = pred.segments.size();
  std::vector<std::uint64_t> pred_area(num_pred, 0);
  for (std::size_t p = 0; p < num_pred; ++p) {
    for (std::uint32_t px : pred.segments[p].pixels) {
      pred_area[p] += !gt_void_at(px);
    }
  }

  PanopticResult result;
  std::vector<bool> gt_matched(gt.segments.size(), false);
  std::vector<bool> pred_matched(num_pred, false);

  for (std::size_t p = 0; p < num_pred; ++p) {
    const auto& ps = pred.segments[p];
    if (is_void(ps) || pred_area[p] == 0) continue;
    std::map<std::int32_t, std::uint64_t> overlap;
    for (std::uint32_t px : ps.pixels) {
      const auto o = gt_owner[px];
      if (o != detail::kNoSegment) ++overlap[o];
    }
    for (const auto& [g, inter] : overlap) {
      const auto& gs = gt.segments[g];
      if (is_void(gs) || gs.category != ps.category) continue;
      const std::uint64_t uni = gs.pixels.size() + pred_area[p] - inter;
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      if (!(iou > 0.5)) continue;
      if (gt_matched[g] || pred_matched[p]) {
        throw NumericError("panoptic: IoU > 0.5 matched a segment twice");
      }
      gt_matched[g] = true;
      pred_matched[p] = true;

      double part_score = iou;
      auto spec_it = parts_spec.find(gs.category);
      if (spec_it != parts_spec.end()) {
        const std::size_t n_parts = spec_it->second + 1;
        std::vector<std::uint64_t> gt_cnt(n_parts, 0), pred_cnt(n_parts, 0),
            both(n_parts, 0);
        for (std::size_t i = 0; i < gs.pixels.size(); ++i) {
          const std::uint32_t px = gs.pixels[i];
          const std::uint16_t gp = gs.parts.empty() ? 0 : gs.parts[i];
          if (gp == 0) continue;
          ++gt_cnt[gp];
          if (pred_owner[px] == static_cast<std::int32_t>(p)) {
            const std::uint16_t pp = pred_part[px];
            if (pp != 0) ++pred_cnt[pp];
            if (pp == gp) ++both[gp];
          }
        }
        for (std::uint32_t px : ps.pixels) {
          if (gt_void_at(px)) continue;
          if (gt_owner[px] == g) continue;  // handled above
          const std::uint16_t pp = pred_part[px];
          if (pp != 0) ++pred_cnt[pp];
        }
        double sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t k = 1; k < n_parts; ++k) {
          const std::uint64_t u = gt_cnt[k] + pred_cnt[k] - both[k];
          if (u == 0) continue;
          sum += static_cast<double>(both[k]) / static_cast<double>(u);
          ++seen;
        }
        if (seen) part_score = sum / static_cast<double>(seen);
      }

      auto& st = result.pq.per_class[gs.category];
      ++st.tp;
      st.score_sum += iou;
      auto& pst = result.part_pq.per_class[gs.category];
      ++pst.tp;
      pst.score_sum += part_score;
      result.matches.push_back({static_cast<std::size_t>(g), p, iou, part_score});
    }
  }

  for (std::size_t g = 0; g < gt.segments.size(); ++g) {
    const auto& gs = gt.segments[g];
    if (is_void(gs) || gt_matched[g] || gs.pixels.empty()) continue;
    ++result.pq.per_class[gs.category].fn;
    ++result.part_pq.per_class[gs.category].fn;
  }
  for (std::size_t p = 0; p < num_pred; ++p) {
    const auto& ps = pred.segments[p];
    if (is_void(ps) || pred_matched[p] || pred_area[p] == 0) continue;
    ++result.pq.per_class[ps.category].fp;
    ++result.part_pq.per_class[ps.category].fp;
  }
  return result;
}

inline PqStats pq(const SegmentSet& gt, const SegmentSet& pred,
                  const std::set<std::uint32_t>& void_ids = {0}) {
  return evaluate_panoptic(gt, pred, {}, void_ids).pq;
}

inline PqStats part_pq(const SegmentSet& gt, const SegmentSet& pred,
                       const std::map<std::uint32_t, std::uint32_t>& parts_spec,
                       const std::set<std::uint32_t>& void_ids = {0}) {
  return evaluate_panoptic(gt, pred, parts_spec, void_ids).part_pq;
}

// Groups pixels by (semantic id, instance id); part ids become segment parts.
inline SegmentSet segments_from_uids(const UidRaster& raster) {
  SegmentSet set{raster.width, raster.height, {}};
  std::map<std::pair<std::uint32_t, std::int64_t>, std::size_t> index;
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const Uid uid = decode(raster.data[i]);
    const std::int64_t inst = uid.instance ? *uid.instance : -1;
    auto [it, inserted] = index.try_emplace({uid.semantic, inst},
                                            set.segments.size());
    if (inserted) {
      Segment seg;
      seg.category = uid.semantic;
      seg.instance = uid.instance;
      set.segments.push_back(std::move(seg));
    }
    auto& seg = set.segments[it->second];
    seg.pixels.push_back(static_cast<std::uint32_t>(i));
    seg.parts.push_back(static_cast<std::uint16_t>(uid.part.value_or(0)));
  }
  return set;
}

// ---- part-level IoU ----------------------------------------------------------

// Accumulates, per scene class with parts, the conventional IoU of its part
// classes. Ground-truth pixels of the class with void part are skipped.
class PartIouAccumulator {
 public:
  explicit PartIouAccumulator(PartsSpec spec) : spec_(std::move(spec)) {
    for (const auto& [sid, n] : spec_.parts) {
      counts_[sid].assign(n + 1, Counts{});
    }
  }

  void add(const UidRaster& gt, const UidRaster& pred) {
    if (gt.width != pred.width || gt.height != pred.height) {
      throw ValidationError("part_iou: dimension mismatch");
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const Uid g = decode(gt.data[i]);
      const Uid p = decode(pred.data[i]);
      const std::uint32_t gp = g.part.value_or(0);
      const std::uint32_t pp = p.part.value_or(0);
      auto git = counts_.find(g.semantic);
      auto pit = counts_.find(p.semantic);
      if (git != counts_.end() && gp >= git->second.size()) {
        throw ValidationError("part_iou: gt part " + std::to_string(gp) +
                              " outside declared set of class " +
                              std::to_string(g.semantic));
      }
      if (pit != counts_.end() && pp >= pit->second.size()) {
        throw ValidationError("part_iou: pred part " + std::to_string(pp) +
                              " outside declared set of class " +
                              std::to_string(p.semantic));
      }
      if (git != counts_.end()) {
        if (gp == 0) {
          // Void-part ground truth: excluded from this class's evaluation.
          if (pit != counts_.end() && p.semantic != g.semantic && pp != 0) {
            ++pit->second[pp].pred;
          }
          continue;
        }
        ++git->second[gp].gt;
        if (p.semantic == g.semantic && pp == gp) ++git->second[gp].both;
      }
      if (pit != counts_.end() && pp != 0) ++pit->second[pp].pred;
    }
  }

  // Mean part IoU per scene class; classes with no observed part omitted.
  std::map<std::uint32_t, double> result() const {
    std::map<std::uint32_t, double> out;
    for (const auto& [sid, parts] : counts_) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t k = 1; k < parts.size(); ++k) {
        const auto u = parts[k].gt + parts[k].pred - parts[k].both;
        if (u == 0) continue;
        sum += static_cast<double>(parts[k].both) / static_cast<double>(u);
        ++n;
      }
      if (n) out[sid] = sum / static_cast<double>(n);
    }
    return out;
  }

 private:
  struct Counts {
    std::uint64_t gt = 0;
    std::uint64_t pred = 0;
    std::uint64_t both = 0;
  };
  PartsSpec spec_;
  std::map<std::uint32_t, std::vector<Counts>> counts_;
};

inline std::map<std::uint32_t, double> part_iou(const UidRaster& gt,
                                                const UidRaster& pred,
                                                const PartsSpec& spec) {
  PartIouAccumulator acc(spec);
  acc.add(gt, pred);
  return acc.result();
}

inline nlohmann::json to_json(const PqStats& stats) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, st] : stats.per_class) {
    per_class[std::to_string(cls)] = {{"tp", st.tp},
                                      {"fp", st.fp},
                                      {"fn", st.fn},
                                      {"score_sum", st.score_sum},
                                      {"quality", st.quality()}};
  }
  return per_class;
}

}  // namespace hetseg
