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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>

#include "hetseg/error.hpp"
#include "hetseg/raster.hpp"
#include "hetseg/report.hpp"
#include "json.hpp"

namespace hetseg {

// Hierarchical panoptic-parts id. Levels:
//   semantic                     uid = sid
//   semantic+instance            uid = sid * 10^3 + iid
//   semantic+instance+part       uid = sid * 10^5 + iid * 10^2 + pid
struct Uid {
  std::uint32_t semantic = 0;
  std::optional<std::uint32_t> instance;
  std::optional<std::uint32_t> part;

  bool operator==(const Uid&) const = default;
};

inline constexpr std::uint32_t kMaxSemanticId = 99;
inline constexpr std::uint32_t kMaxInstanceId = 999;
inline constexpr std::uint32_t kMaxPartId = 99;

inline std::uint32_t encode(std::uint32_t semantic,
                            std::optional<std::uint32_t> instance = std::nullopt,
                            std::optional<std::uint32_t> part = std::nullopt) {
  if (semantic > kMaxSemanticId) {
    throw ValidationError("semantic id " + std::to_string(semantic) + " > 99");
  }
  if (instance && *instance > kMaxInstanceId) {
    throw ValidationError("instance id " + std::to_string(*instance) +
                          " > 999");
  }
  if (part && *part > kMaxPartId) {
    throw ValidationError("part id " + std::to_string(*part) + " > 99");
  }
  if (part && !instance) {
    throw ValidationError("part id requires an instance id");
  }
  // sid 0 with lower levels would fall into the 1-level value range.
  if (semantic == 0 && instance) {
    throw ValidationError("semantic id 0 cannot carry instance or part ids");
  }
  if (part) return semantic * 100'000 + *instance * 100 + *part;
  if (instance) return semantic * 1'000 + *instance;
  return semantic;
}

inline std::uint32_t encode(const Uid& uid) {
  return encode(uid.semantic, uid.instance, uid.part);
}

// Values 100..999 are not produced by encode() (they would need sid 0 with an
// instance) and are rejected.
inline Uid decode(std::uint32_t value) {
  if (value > kMaxUid) {
    throw ValidationError("uid " + std::to_string(value) + " > 9999999");
  }
  if (value <= 99) return {value, std::nullopt, std::nullopt};
  if (value <= 99'999) {
    if (value < 1'000) {
      throw ValidationError("uid " + std::to_string(value) +
                            " is not canonical (semantic id 0 with instance)");
    }
    return {value / 1'000, value % 1'000, std::nullopt};
  }
  return {value / 100'000, (value / 100) % 1'000, value % 100};
}

inline bool is_valid_uid(std::uint32_t value) {
  return value <= kMaxUid && (value <= 99 || value >= 1'000);
}

// Drops the part level: 3-level uids become 2-level, others are unchanged.
inline UidRaster project_panoptic(const UidRaster& raster) {
  UidRaster out(raster.width, raster.height);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const Uid uid = decode(raster.data[i]);
    out.data[i] = encode(uid.semantic, uid.instance);
  }
  return out;
}

inline ClassRaster project_semantic(const UidRaster& raster) {
  ClassRaster out(raster.width, raster.height);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    out.data[i] = static_cast<std::uint16_t>(decode(raster.data[i]).semantic);
  }
  return out;
}

// Part ids, 0 (void part) where no part level is present.
inline ClassRaster project_parts(const UidRaster& raster) {
  ClassRaster out(raster.width, raster.height);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    out.data[i] =
        static_cast<std::uint16_t>(decode(raster.data[i]).part.value_or(0));
  }
  return out;
}

// Scene/part class declaration. parts[sid] is the number of non-void part
// classes of sid; valid part ids are 0 (void part) .. parts[sid].
struct PartsSpec {
  std::set<std::uint32_t> stuff;
  std::set<std::uint32_t> things;
  std::set<std::uint32_t> void_ids = {0};
  std::map<std::uint32_t, std::uint32_t> parts;

  bool declared(std::uint32_t sid) const {
    return stuff.count(sid) || things.count(sid) || void_ids.count(sid);
  }
  bool has_parts(std::uint32_t sid) const { return parts.count(sid) > 0; }
  std::uint32_t part_count(std::uint32_t sid) const {
    auto it = parts.find(sid);
    return it == parts.end() ? 0 : it->second;
  }
};

inline PartsSpec parse_parts_spec(const nlohmann::json& j) {
  try {
    PartsSpec spec;
    if (j.contains("stuff")) spec.stuff = j.at("stuff").get<std::set<std::uint32_t>>();
    if (j.contains("things")) spec.things = j.at("things").get<std::set<std::uint32_t>>();
    if (j.contains("void")) spec.void_ids = j.at("void").get<std::set<std::uint32_t>>();
    if (j.contains("parts")) {
      for (const auto& [key, count] : j.at("parts").items()) {
        spec.parts[static_cast<std::uint32_t>(std::stoul(key))] =
            count.get<std::uint32_t>();
      }
    }
    return spec;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("schema: parts spec: ") + e.what());
  }
}

inline nlohmann::json to_json(const PartsSpec& spec) {
  nlohmann::json parts = nlohmann::json::object();
  for (const auto& [sid, n] : spec.parts) parts[std::to_string(sid)] = n;
  return {{"stuff", spec.stuff},
          {"things", spec.things},
          {"void", spec.void_ids},
          {"parts", parts}};
}

// One issue per distinct offending (kind, uid), with its pixel count.
inline ValidationReport validate_raster(const UidRaster& raster,
                                        const PartsSpec& spec) {
  std::map<std::pair<std::string, std::uint32_t>,
           std::pair<std::size_t, std::string>>
      found;
  auto flag = [&](const std::string& kind, std::uint32_t value,
                  const std::string& why) {
    auto& slot = found[{kind, value}];
    if (slot.first++ == 0) slot.second = why;
  };
  for (std::uint32_t value : raster.data) {
    if (!is_valid_uid(value)) {
      flag("decode", value, "not a valid uid");
      continue;
    }
    const Uid uid = decode(value);
    if (!spec.declared(uid.semantic)) {
      flag("range", value,
           "semantic id " + std::to_string(uid.semantic) + " not declared");
      continue;
    }
    if (uid.instance && !spec.things.count(uid.semantic)) {
      flag("instance-on-stuff", value,
           "instance id on non-things class " + std::to_string(uid.semantic));
    }
    if (uid.part && *uid.part != 0) {
      if (!spec.has_parts(uid.semantic)) {
        flag("part-on-non-parts", value,
             "part id on class " + std::to_string(uid.semantic) +
                 " which declares no parts");
      } else if (*uid.part > spec.part_count(uid.semantic)) {
        flag("part-range", value,
             "part id " + std::to_string(*uid.part) + " > declared " +
                 std::to_string(spec.part_count(uid.semantic)));
      }
    }
  }
  ValidationReport report;
  for (const auto& [key, info] : found) {
    report.violations.push_back(
        {"", key.first,
         "uid " + std::to_string(key.second) + ": " + info.second + " (" +
             std::to_string(info.first) + " px)"});
  }
  return report;
}

}  // namespace hetseg
