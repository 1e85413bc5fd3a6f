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

#include <string>
#include <vector>

#include "json.hpp"

namespace hetseg {

struct ValidationIssue {
  std::string dataset;  // empty for taxonomy-wide issues
  std::string kind;     // partition | has-a | void | range | hierarchy | ...
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> violations;
  std::vector<ValidationIssue> warnings;

  bool ok() const { return violations.empty(); }
};

inline nlohmann::json to_json(const ValidationReport& report) {
  auto issues = [](const std::vector<ValidationIssue>& list) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& issue : list) {
      out.push_back({{"dataset", issue.dataset},
                     {"kind", issue.kind},
                     {"message", issue.message}});
    }
    return out;
  };
  return {{"ok", report.ok()},
          {"violations", issues(report.violations)},
          {"warnings", issues(report.warnings)}};
}

}  // namespace hetseg
