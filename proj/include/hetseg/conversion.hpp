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
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hetseg/error.hpp"
#include "hetseg/raster.hpp"
#include "hetseg/taxonomy.hpp"

namespace hetseg {

// Probabilities are clamped to this floor before taking logs.
inline constexpr double kProbabilityFloor = 1e-300;

struct LossResult {
  double value = 0.0;
  bool clamped = false;  // a probability hit kProbabilityFloor
};

namespace detail {

inline double safe_log(double p, bool& clamped) {
  if (p < kProbabilityFloor) {
    clamped = true;
    p = kProbabilityFloor;
  }
  return std::log(p);
}

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double peak = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

inline void check_group(std::span<const AtomId> group, std::size_t num_atoms) {
  if (group.empty()) throw ValidationError("ground-truth group is empty");
  for (AtomId a : group) {
    if (a >= num_atoms) {
      throw ValidationError("group atom " + std::to_string(a) +
                            " out of range");
    }
  }
}

}  // namespace detail

// Max-subtracted softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// s_m = sum of sigma over the atoms of label m.
inline std::vector<double> group_sum(std::span<const double> sigma,
                                     const LabelSpace& space) {
  std::size_t covered = 0;
  for (const auto& g : space.groups) covered += g.size();
  if (covered != sigma.size()) {
    throw ValidationError("group_sum: sigma has " +
                          std::to_string(sigma.size()) +
                          " atoms but groups cover " + std::to_string(covered));
  }
  std::vector<double> out(space.groups.size(), 0.0);
  for (std::size_t m = 0; m < space.groups.size(); ++m) {
    for (AtomId a : space.groups[m]) {
      if (a >= sigma.size()) {
        throw ValidationError("group_sum: atom " + std::to_string(a) +
                              " out of range");
      }
      out[m] += sigma[a];
    }
  }
  return out;
}

// Per-pixel group_sum over a whole raster.
inline ProbRaster group_sum(const ProbRaster& atoms, const LabelSpace& space) {
  ProbRaster out(atoms.width, atoms.height, space.size());
  for (std::size_t p = 0; p < atoms.num_pixels(); ++p) {
    auto s = group_sum(atoms.pixel(p), space);
    std::copy(s.begin(), s.end(), out.pixel(p).begin());
  }
  return out;
}

// Mean over non-ignored pixels of -log s_{p, y_p}; 0 when no pixel counts.
inline LossResult loss_per_image(const ClassRaster& labels,
                                 const ProbRaster& sigma,
                                 const LabelSpace& space,
                                 const std::set<std::uint16_t>& ignore = {}) {
  if (labels.width != sigma.width || labels.height != sigma.height) {
    throw ValidationError("loss_per_image: dimension mismatch");
  }
  LossResult result;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const std::uint16_t y = labels.data[p];
    if (ignore.count(y)) continue;
    if (y >= space.size()) {
      throw ValidationError("loss_per_image: label " + std::to_string(y) +
                            " >= " + std::to_string(space.size()));
    }
    double s = 0.0;
    auto px = sigma.pixel(p);
    for (AtomId a : space.groups[y]) s += px[a];
    sum -= detail::safe_log(s, result.clamped);
    ++counted;
  }
  result.value = counted ? sum / static_cast<double>(counted) : 0.0;
  return result;
}

// -log(sum_{a in group} softmax(logits)_a), evaluated in log space.
inline double group_log_loss(std::span<const double> logits,
                             std::span<const AtomId> group) {
  detail::check_group(group, logits.size());
  std::vector<double> in_group;
  in_group.reserve(group.size());
  for (AtomId a : group) in_group.push_back(logits[a]);
  return detail::log_sum_exp(logits) - detail::log_sum_exp(in_group);
}

// Exact gradient of group_log_loss w.r.t. the logits:
//   g_m = sigma_m - [m in G] * sigma_m / s_G,  s_G = sum_{a in G} sigma_a.
// Reduces to sigma_m - [m = m*] for a singleton group.
inline std::vector<double> grad_logits(std::span<const double> sigma,
                                       std::span<const AtomId> gt_group) {
  detail::check_group(gt_group, sigma.size());
  double s_group = 0.0;
  for (AtomId a : gt_group) s_group += sigma[a];
  s_group = std::max(s_group, kProbabilityFloor);
  std::vector<double> g(sigma.begin(), sigma.end());
  for (AtomId a : gt_group) g[a] = sigma[a] - sigma[a] / s_group;
  return g;
}

// The indicator form sigma_m - [m in G]. Equal to grad_logits only for
// singleton groups; kept for comparison against the exact gradient.
inline std::vector<double> grad_logits_indicator(
    std::span<const double> sigma, std::span<const AtomId> gt_group) {
  detail::check_group(gt_group, sigma.size());
  std::vector<double> g(sigma.begin(), sigma.end());
  for (AtomId a : gt_group) g[a] = sigma[a] - 1.0;
  return g;
}

// Max |analytic - central difference| of group_log_loss.
inline double finite_diff_check(std::span<const double> logits,
                                std::span<const AtomId> gt_group,
                                double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  const auto analytic = grad_logits(softmax(logits), gt_group);
  std::vector<double> probe(logits.begin(), logits.end());
  double worst = 0.0;
  for (std::size_t m = 0; m < probe.size(); ++m) {
    const double saved = probe[m];
    probe[m] = saved + epsilon;
    const double up = group_log_loss(probe, gt_group);
    probe[m] = saved - epsilon;
    const double down = group_log_loss(probe, gt_group);
    probe[m] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    worst = std::max(worst, std::abs(numeric - analytic[m]));
  }
  return worst;
}

// -sum_i p_i log s_i; zero-target terms are skipped.
inline LossResult dense_cce(std::span<const double> target,
                            std::span<const double> sigma) {
  if (target.size() != sigma.size()) {
    throw ValidationError("dense_cce: length mismatch");
  }
  LossResult result;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    result.value -= target[i] * detail::safe_log(sigma[i], result.clamped);
  }
  return result;
}

inline LossResult sparse_cce(std::size_t label, std::span<const double> sigma) {
  if (label >= sigma.size()) {
    throw ValidationError("sparse_cce: label out of range");
  }
  std::vector<double> one_hot(sigma.size(), 0.0);
  one_hot[label] = 1.0;
  return dense_cce(one_hot, sigma);
}

// ---- hierarchical classifiers ---------------------------------------------

struct LossBreakdown {
  std::vector<double> losses;
  std::vector<double> weights;
  double total = 0.0;
};

inline LossBreakdown hierarchical_loss(
    std::span<const std::pair<double, double>> per_classifier) {
  LossBreakdown out;
  for (const auto& [loss, weight] : per_classifier) {
    if (weight < 0.0) throw ValidationError("classifier weight must be >= 0");
    out.losses.push_back(loss);
    out.weights.push_back(weight);
    out.total += weight * loss;
  }
  return out;
}

namespace detail {

inline void enumerate_classes(const HierarchyNode& node,
                              std::vector<std::string>& out) {
  for (const auto& cls : node.classes) {
    out.push_back(cls);
    if (const HierarchyNode* child = node.child(cls)) {
      enumerate_classes(*child, out);
    }
  }
}

inline void collect_nodes(const HierarchyNode& node,
                          std::vector<const HierarchyNode*>& out) {
  out.push_back(&node);
  for (const auto& [cls, child] : node.children) collect_nodes(child, out);
}

}  // namespace detail

// Output enumeration of hierarchical_decode: every class of every node in
// depth-first pre-order (a parent class precedes its sub-classes).
inline std::vector<std::string> decoded_label_names(const HierarchyNode& tree) {
  std::vector<std::string> names;
  detail::enumerate_classes(tree, names);
  return names;
}

// Per pixel: argmax of the root classifier, then repeatedly descend into the
// chosen class's child classifier. With child_threshold > 0 the descent stops
// (keeping the parent class) when the child's top probability is below it.
inline ClassRaster hierarchical_decode(
    const HierarchyNode& tree, const std::map<std::string, ProbRaster>& probs,
    double child_threshold = 0.0) {
  std::vector<const HierarchyNode*> nodes;
  detail::collect_nodes(tree, nodes);
  const ProbRaster* first = nullptr;
  for (const HierarchyNode* node : nodes) {
    auto it = probs.find(node->name);
    if (it == probs.end()) {
      throw ValidationError("missing classifier raster for node '" +
                            node->name + "'");
    }
    if (it->second.channels != node->classes.size()) {
      throw ValidationError("classifier '" + node->name + "' has " +
                            std::to_string(it->second.channels) +
                            " channels, expected " +
                            std::to_string(node->classes.size()));
    }
    if (!first) {
      first = &it->second;
    } else if (it->second.width != first->width ||
               it->second.height != first->height) {
      throw ValidationError("classifier '" + node->name +
                            "' raster dimensions disagree");
    }
  }

  const auto names = decoded_label_names(tree);
  if (names.size() > 65536) {
    throw ValidationError("too many decoded labels for a 16-bit raster");
  }
  // (node, class index) -> output id, following the pre-order enumeration.
  std::map<std::pair<const HierarchyNode*, std::size_t>, std::uint16_t> ids;
  {
    std::uint16_t next = 0;
    auto walk = [&](auto&& self, const HierarchyNode& node) -> void {
      for (std::size_t c = 0; c < node.classes.size(); ++c) {
        ids[{&node, c}] = next++;
        if (const HierarchyNode* child = node.child(node.classes[c])) {
          self(self, *child);
        }
      }
    };
    walk(walk, tree);
  }

  ClassRaster out(first->width, first->height);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const HierarchyNode* node = &tree;
    std::size_t choice = argmax(probs.at(node->name).pixel(p));
    while (const HierarchyNode* child = node->child(node->classes[choice])) {
      auto px = probs.at(child->name).pixel(p);
      const std::size_t sub = argmax(px);
      if (px[sub] < child_threshold) break;
      node = child;
      choice = sub;
    }
    out.data[p] = ids.at({node, choice});
  }
  return out;
}

}  // namespace hetseg
