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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hetseg/error.hpp"
#include "hetseg/report.hpp"
#include "json.hpp"

namespace hetseg {

using AtomId = std::uint32_t;
using LabelId = std::uint32_t;

inline constexpr LabelId kUnassignedLabel = static_cast<LabelId>(-1);

// One dataset's label space. groups[m] lists the atoms that make up label m;
// label 0 is the dataset's void class.
struct LabelSpace {
  std::vector<std::string> labels;
  std::vector<std::vector<AtomId>> groups;

  std::size_t size() const { return labels.size(); }
};

struct HierarchyNode {
  std::string name;
  std::vector<std::string> classes;
  std::map<std::string, HierarchyNode> children;

  const HierarchyNode* child(const std::string& cls) const {
    auto it = children.find(cls);
    return it == children.end() ? nullptr : &it->second;
  }
};

// Unified atom set plus every dataset's grouping of those atoms. Construction
// does not validate; run validate_atom_properties() or use load_taxonomy().
class AtomTaxonomy {
 public:
  AtomTaxonomy(std::vector<std::string> atoms,
               std::map<std::string, LabelSpace> datasets,
               std::optional<HierarchyNode> hierarchy = std::nullopt)
      : atoms_(std::move(atoms)),
        datasets_(std::move(datasets)),
        hierarchy_(std::move(hierarchy)) {
    for (const auto& [name, space] : datasets_) {
      auto& inverse = atom_to_label_[name];
      inverse.assign(atoms_.size(), kUnassignedLabel);
      for (LabelId m = 0; m < space.groups.size(); ++m) {
        for (AtomId a : space.groups[m]) {
          if (a < inverse.size() && inverse[a] == kUnassignedLabel) {
            inverse[a] = m;
          }
        }
      }
    }
  }

  const std::vector<std::string>& atoms() const { return atoms_; }
  std::size_t atom_count() const { return atoms_.size(); }
  const std::map<std::string, LabelSpace>& datasets() const {
    return datasets_;
  }
  const std::optional<HierarchyNode>& hierarchy() const { return hierarchy_; }

  const LabelSpace& dataset(const std::string& name) const {
    auto it = datasets_.find(name);
    if (it == datasets_.end()) {
      throw ValidationError("unknown dataset '" + name + "'");
    }
    return it->second;
  }

  LabelId label_of_atom(const std::string& dataset_name, AtomId atom) const {
    auto it = atom_to_label_.find(dataset_name);
    if (it == atom_to_label_.end()) {
      throw ValidationError("unknown dataset '" + dataset_name + "'");
    }
    if (atom >= atoms_.size()) {
      throw ValidationError("atom id " + std::to_string(atom) +
                            " out of range (A=" +
                            std::to_string(atoms_.size()) + ")");
    }
    LabelId label = it->second[atom];
    if (label == kUnassignedLabel) {
      throw ValidationError("atom " + std::to_string(atom) +
                            " has no label in dataset '" + dataset_name + "'");
    }
    return label;
  }

 private:
  std::vector<std::string> atoms_;
  std::map<std::string, LabelSpace> datasets_;
  std::optional<HierarchyNode> hierarchy_;
  std::map<std::string, std::vector<LabelId>> atom_to_label_;
};

inline LabelId label_of_atom(const AtomTaxonomy& tax, const std::string& dataset,
                             AtomId atom) {
  return tax.label_of_atom(dataset, atom);
}

namespace detail {

inline void collect_hierarchy_classes(
    const HierarchyNode& node, std::map<std::string, int>& occurrences,
    std::vector<ValidationIssue>& violations) {
  std::set<std::string> seen;
  for (const auto& cls : node.classes) {
    if (!seen.insert(cls).second) {
      violations.push_back({"", "hierarchy",
                            "class '" + cls + "' repeated in node '" +
                                node.name + "'"});
    }
    ++occurrences[cls];
  }
  for (const auto& [cls, child] : node.children) {
    if (!seen.count(cls)) {
      violations.push_back({"", "hierarchy",
                            "child key '" + cls +
                                "' is not a class of node '" + node.name +
                                "'"});
    }
    collect_hierarchy_classes(child, occurrences, violations);
  }
}

}  // namespace detail

// Checks, per dataset: exact partition of the atom set (is-a), non-empty
// groups (has-a), void atom in the void label, and hierarchy coverage when a
// hierarchy is attached.
inline ValidationReport validate_atom_properties(const AtomTaxonomy& tax) {
  ValidationReport report;
  const std::size_t num_atoms = tax.atom_count();

  if (num_atoms == 0 || tax.atoms()[0] != "void") {
    report.violations.push_back({"", "void", "atom 0 must be named \"void\""});
  }
  std::set<std::string> names;
  for (AtomId a = 0; a < num_atoms; ++a) {
    const auto& name = tax.atoms()[a];
    if (name.empty()) {
      report.violations.push_back(
          {"", "atoms", "atom " + std::to_string(a) + " has an empty name"});
    } else if (!names.insert(name).second) {
      report.violations.push_back(
          {"", "atoms", "atom name '" + name + "' is not unique"});
    }
  }
  if (tax.datasets().empty()) {
    report.violations.push_back({"", "datasets", "no dataset declared"});
  }

  // atom -> datasets where it sits in the void group / a non-void group
  std::vector<std::vector<std::string>> void_in(num_atoms);
  std::vector<std::vector<std::string>> labeled_in(num_atoms);

  for (const auto& [ds, space] : tax.datasets()) {
    if (space.labels.empty()) {
      report.violations.push_back({ds, "void", "dataset has no labels"});
      continue;
    }
    if (space.groups.size() != space.labels.size()) {
      report.violations.push_back(
          {ds, "schema",
           "labels and groups differ in length (" +
               std::to_string(space.labels.size()) + " vs " +
               std::to_string(space.groups.size()) + ")"});
      continue;
    }
    std::vector<LabelId> owner(num_atoms, kUnassignedLabel);
    for (LabelId m = 0; m < space.groups.size(); ++m) {
      if (space.groups[m].empty()) {
        report.violations.push_back(
            {ds, "has-a",
             "label " + std::to_string(m) + " ('" + space.labels[m] +
                 "') contains no atom"});
      }
      for (AtomId a : space.groups[m]) {
        if (a >= num_atoms) {
          report.violations.push_back(
              {ds, "range",
               "label " + std::to_string(m) + " references atom " +
                   std::to_string(a) + " >= A=" + std::to_string(num_atoms)});
          continue;
        }
        if (owner[a] != kUnassignedLabel) {
          report.violations.push_back(
              {ds, "partition",
               "atom " + std::to_string(a) + " appears in label " +
                   std::to_string(owner[a]) + " and label " +
                   std::to_string(m) + " (is-a violated)"});
          continue;
        }
        owner[a] = m;
      }
    }
    for (AtomId a = 0; a < num_atoms; ++a) {
      if (owner[a] == kUnassignedLabel) {
        report.violations.push_back(
            {ds, "partition",
             "atom " + std::to_string(a) + " is missing from all groups"});
      } else if (a != 0) {
        (owner[a] == 0 ? void_in : labeled_in)[a].push_back(ds);
      }
    }
    if (num_atoms > 0 && owner[0] != 0 && owner[0] != kUnassignedLabel) {
      report.violations.push_back(
          {ds, "void", "atom 0 (void) must belong to label 0"});
    }
  }

  for (AtomId a = 1; a < num_atoms; ++a) {
    if (!void_in[a].empty() && !labeled_in[a].empty()) {
      report.warnings.push_back(
          {void_in[a].front(), "void-overlap",
           "atom " + std::to_string(a) + " ('" + tax.atoms()[a] +
               "') is void here but labeled in '" + labeled_in[a].front() +
               "'"});
    }
  }

  if (tax.hierarchy()) {
    std::map<std::string, int> occurrences;
    detail::collect_hierarchy_classes(*tax.hierarchy(), occurrences,
                                      report.violations);
    for (const auto& [ds, space] : tax.datasets()) {
      for (std::size_t m = 1; m < space.labels.size(); ++m) {
        int count = occurrences[space.labels[m]];
        if (count != 1) {
          report.violations.push_back(
              {ds, "hierarchy",
               "label '" + space.labels[m] + "' appears on " +
                   std::to_string(count) + " hierarchy paths (expected 1)"});
        }
      }
    }
  }
  return report;
}

namespace detail {

inline HierarchyNode parse_hierarchy(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("name") || !j.contains("classes")) {
    throw ValidationError("schema: hierarchy node needs name and classes");
  }
  HierarchyNode node;
  node.name = j.at("name").get<std::string>();
  node.classes = j.at("classes").get<std::vector<std::string>>();
  if (j.contains("children")) {
    for (const auto& [key, child] : j.at("children").items()) {
      node.children.emplace(key, parse_hierarchy(child));
    }
  }
  return node;
}

inline nlohmann::json hierarchy_to_json(const HierarchyNode& node) {
  nlohmann::json children = nlohmann::json::object();
  for (const auto& [key, child] : node.children) {
    children[key] = hierarchy_to_json(child);
  }
  return {{"name", node.name}, {"classes", node.classes}, {"children", children}};
}

}  // namespace detail

// Schema-level parse; throws ValidationError on a schema violation. Partition
// and property checks are left to validate_atom_properties().
inline AtomTaxonomy parse_taxonomy(const nlohmann::json& j) {
  try {
    if (!j.is_object() || !j.contains("atoms") || !j.contains("datasets")) {
      throw ValidationError("schema: expected object with atoms and datasets");
    }
    auto atoms = j.at("atoms").get<std::vector<std::string>>();
    std::map<std::string, LabelSpace> datasets;
    for (const auto& [name, ds] : j.at("datasets").items()) {
      if (!ds.contains("labels") || !ds.contains("groups")) {
        throw ValidationError("schema: dataset '" + name +
                              "' needs labels and groups");
      }
      LabelSpace space;
      space.labels = ds.at("labels").get<std::vector<std::string>>();
      space.groups = ds.at("groups").get<std::vector<std::vector<AtomId>>>();
      datasets.emplace(name, std::move(space));
    }
    std::optional<HierarchyNode> hierarchy;
    if (j.contains("hierarchy") && !j.at("hierarchy").is_null()) {
      hierarchy = detail::parse_hierarchy(j.at("hierarchy"));
    }
    return AtomTaxonomy(std::move(atoms), std::move(datasets),
                        std::move(hierarchy));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("schema: ") + e.what());
  }
}

inline nlohmann::json to_json(const AtomTaxonomy& tax) {
  nlohmann::json datasets = nlohmann::json::object();
  for (const auto& [name, space] : tax.datasets()) {
    datasets[name] = {{"labels", space.labels}, {"groups", space.groups}};
  }
  nlohmann::json out = {{"atoms", tax.atoms()}, {"datasets", datasets}};
  if (tax.hierarchy()) {
    out["hierarchy"] = detail::hierarchy_to_json(*tax.hierarchy());
  }
  return out;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "'");
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("parse error in '" + path.string() + "': " + e.what());
  }
}

// Parse without property validation (for reporting tools).
inline AtomTaxonomy read_taxonomy(const std::filesystem::path& path) {
  return parse_taxonomy(read_json_file(path));
}

// Parse and validate; throws ValidationError naming the first violation.
inline AtomTaxonomy load_taxonomy(const std::filesystem::path& path) {
  AtomTaxonomy tax = read_taxonomy(path);
  ValidationReport report = validate_atom_properties(tax);
  if (!report.ok()) {
    const auto& first = report.violations.front();
    throw ValidationError(
        first.kind + " violation" +
        (first.dataset.empty() ? "" : " in dataset '" + first.dataset + "'") +
        ": " + first.message);
  }
  return tax;
}

}  // namespace hetseg
