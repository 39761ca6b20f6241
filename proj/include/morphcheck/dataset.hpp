// Copyright 2026 The Morphcheck Authors
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

// Image datasets with bounding-box annotations: the manifest data model, its
// file format, validation, seeded sampling and per-class statistics.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "morphcheck/common.hpp"

namespace morphcheck {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kManifestVersion = "1";
inline constexpr const char* kOriginalScenario = "original";

// Slack allowed on the x+w <= 1 and y+h <= 1 constraints for ratios that
// were computed in floating point.
inline constexpr double kBoxSlack = 1e-9;

// Normalized top-left box; every field is a ratio of image width or height.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Annotation {
  std::string cls;
  BBox box;
  bool recognizable = true;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct ImageRecord {
  std::string id;
  std::string path;
  int width = 1;
  int height = 1;
  std::vector<Annotation> annotations;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

inline std::string scenario_name(const std::vector<std::string>& chain) {
  return chain.empty() ? std::string(kOriginalScenario) : join(chain, "+");
}

struct Provenance {
  std::optional<std::string> seed_id;
  std::vector<std::string> chain;
  std::string scenario = kOriginalScenario;

  static Provenance original() { return {}; }
  static Provenance mutant(std::string seed, std::vector<std::string> chain) {
    Provenance p;
    p.seed_id = std::move(seed);
    p.scenario = scenario_name(chain);
    p.chain = std::move(chain);
    return p;
  }

  bool is_seed() const { return chain.empty(); }

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ManifestEntry {
  ImageRecord image;
  Provenance provenance;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::string version = kManifestVersion;
  std::vector<std::string> class_set;
  std::vector<ManifestEntry> images;
  std::optional<std::uint64_t> master_seed;
  // Directory image paths resolve against. Not serialized.
  fs::path base_dir;

  std::size_t size() const { return images.size(); }

  fs::path resolve(const ImageRecord& img) const { return base_dir / img.path; }

  const ManifestEntry* find(std::string_view id) const {
    for (const auto& e : images)
      if (e.image.id == id) return &e;
    return nullptr;
  }

  bool has_class(std::string_view cls) const {
    return std::find(class_set.begin(), class_set.end(), cls) != class_set.end();
  }

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.version == b.version && a.class_set == b.class_set &&
           a.images == b.images && a.master_seed == b.master_seed;
  }
};

// ---------------------------------------------------------------------------
// Validation

inline void check_box(const BBox& b, const std::string& where,
                      std::vector<std::string>& problems) {
  auto fail = [&](const std::string& what) {
    problems.push_back(where + ": " + what);
  };
  if (!(b.x >= 0)) fail("x < 0");
  if (!(b.y >= 0)) fail("y < 0");
  if (!(b.w > 0)) fail("w <= 0");
  if (!(b.h > 0)) fail("h <= 0");
  if (!(b.x + b.w <= 1 + kBoxSlack)) fail("x+w > 1");
  if (!(b.y + b.h <= 1 + kBoxSlack)) fail("y+h > 1");
}

inline std::vector<std::string> manifest_problems(const DatasetManifest& m) {
  std::vector<std::string> problems;
  if (m.version != kManifestVersion)
    problems.push_back("unsupported manifest version \"" + m.version + "\"");
  std::set<std::string> classes;
  for (const auto& c : m.class_set)
    if (!classes.insert(c).second)
      problems.push_back("class \"" + c + "\" declared twice");

  std::unordered_set<std::string> ids;
  for (const auto& entry : m.images) {
    const auto& img = entry.image;
    const std::string where = "image \"" + img.id + "\"";
    if (img.id.empty()) problems.push_back("image with empty id");
    if (!ids.insert(img.id).second)
      problems.push_back("duplicate id \"" + img.id + "\"");
    if (img.width < 1 || img.height < 1)
      problems.push_back(where + ": width and height must be >= 1");
    for (std::size_t i = 0; i < img.annotations.size(); ++i) {
      const auto& a = img.annotations[i];
      const std::string at = where + " annotation " + std::to_string(i);
      if (!classes.count(a.cls))
        problems.push_back(at + ": unknown class \"" + a.cls + "\"");
      check_box(a.box, at, problems);
    }
    const auto& p = entry.provenance;
    if (p.chain.empty() != !p.seed_id.has_value())
      problems.push_back(where +
                         ": provenance seed_id must be set iff chain is non-empty");
    if (p.scenario != scenario_name(p.chain))
      problems.push_back(where + ": scenario \"" + p.scenario +
                         "\" does not match chain \"" + scenario_name(p.chain) +
                         "\"");
  }
  return problems;
}

inline void validate_manifest(const DatasetManifest& m) {
  auto problems = manifest_problems(m);
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

// Every image file must exist once the dataset is materialized.
inline void check_files_exist(const DatasetManifest& m) {
  std::vector<std::string> problems;
  for (const auto& e : m.images)
    if (!fs::exists(m.resolve(e.image)))
      problems.push_back("image \"" + e.image.id + "\": missing file " +
                         m.resolve(e.image).string());
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

// ---------------------------------------------------------------------------
// Serialization

inline json box_to_json(const BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

inline BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4)
    throw ParseError("box must be an array of 4 numbers");
  for (const auto& v : j)
    if (!v.is_number()) throw ParseError("box must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

inline json annotation_to_json(const Annotation& a) {
  return {{"class", a.cls}, {"box", box_to_json(a.box)}, {"recognizable", a.recognizable}};
}

inline Annotation annotation_from_json(const json& j) {
  Annotation a;
  a.cls = j.at("class").get<std::string>();
  a.box = box_from_json(j.at("box"));
  a.recognizable = j.value("recognizable", true);
  return a;
}

inline json manifest_to_json(const DatasetManifest& m) {
  json images = json::array();
  for (const auto& e : m.images) {
    json anns = json::array();
    for (const auto& a : e.image.annotations) anns.push_back(annotation_to_json(a));
    json prov = {{"seed_id", e.provenance.seed_id ? json(*e.provenance.seed_id) : json()},
                 {"chain", e.provenance.chain},
                 {"scenario", e.provenance.scenario}};
    images.push_back({{"id", e.image.id},
                      {"path", e.image.path},
                      {"width", e.image.width},
                      {"height", e.image.height},
                      {"annotations", std::move(anns)},
                      {"provenance", std::move(prov)}});
  }
  json out = {{"version", m.version}, {"class_set", m.class_set}};
  out["master_seed"] = m.master_seed ? json(*m.master_seed) : json();
  out["images"] = std::move(images);
  return out;
}

// Parses without validating.
inline DatasetManifest manifest_from_json(const json& j) {
  try {
    DatasetManifest m;
    m.version = j.at("version").get<std::string>();
    m.class_set = j.at("class_set").get<std::vector<std::string>>();
    if (j.contains("master_seed") && !j["master_seed"].is_null())
      m.master_seed = j["master_seed"].get<std::uint64_t>();
    for (const auto& ji : j.at("images")) {
      ManifestEntry e;
      e.image.id = ji.at("id").get<std::string>();
      e.image.path = ji.at("path").get<std::string>();
      e.image.width = ji.at("width").get<int>();
      e.image.height = ji.at("height").get<int>();
      for (const auto& ja : ji.value("annotations", json::array()))
        e.image.annotations.push_back(annotation_from_json(ja));
      if (ji.contains("provenance")) {
        const auto& jp = ji["provenance"];
        if (jp.contains("seed_id") && !jp["seed_id"].is_null())
          e.provenance.seed_id = jp["seed_id"].get<std::string>();
        e.provenance.chain = jp.value("chain", std::vector<std::string>{});
        e.provenance.scenario =
            jp.value("scenario", scenario_name(e.provenance.chain));
      }
      m.images.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed manifest: ") + ex.what());
  }
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ParseError(path.string() + ": " + ex.what());
  }
}

// Writes via a temporary sibling and rename so readers never see a partial
// document.
inline void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_json_file(const fs::path& path, const json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

inline DatasetManifest load_manifest(const fs::path& path) {
  DatasetManifest m = manifest_from_json(read_json_file(path));
  m.base_dir = path.parent_path();
  validate_manifest(m);
  return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  write_json_file(path, manifest_to_json(m));
}

// Content fingerprint used to check that two reports describe the same data.
inline std::string manifest_digest(const DatasetManifest& m) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0')
     << fnv1a64(manifest_to_json(m).dump());
  return os.str();
}

// ---------------------------------------------------------------------------
// Sampling and statistics

inline std::size_t fraction_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

// Seeded shuffle of the lexicographically sorted ids of `m`, minus `exclude`.
inline std::vector<std::string> shuffled_ids(const DatasetManifest& m,
                                             std::uint64_t seed,
                                             const std::set<std::string>& exclude = {}) {
  std::vector<std::string> ids;
  ids.reserve(m.images.size());
  for (const auto& e : m.images)
    if (!exclude.count(e.image.id)) ids.push_back(e.image.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(ids));
  return ids;
}

inline DatasetManifest subset_by_ids(const DatasetManifest& m,
                                     const std::vector<std::string>& ids) {
  std::unordered_map<std::string_view, const ManifestEntry*> index;
  for (const auto& e : m.images) index.emplace(e.image.id, &e);
  DatasetManifest out = m;
  out.images.clear();
  out.images.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw Error("unknown image id \"" + id + "\"");
    out.images.push_back(*it->second);
  }
  return out;
}

// floor(fraction * N) images drawn uniformly without replacement. `exclude`
// removes ids from the candidate pool; the count is still taken against the
// full dataset size.
inline DatasetManifest sample_fraction(const DatasetManifest& m, double fraction,
                                       std::uint64_t seed,
                                       const std::set<std::string>& exclude = {}) {
  if (!(fraction > 0 && fraction <= 1))
    throw Error("fraction must be in (0, 1], got " + std::to_string(fraction));
  const std::size_t k = fraction_count(fraction, m.size());
  if (k == 0) throw Error("fraction too small for dataset size");
  auto ids = shuffled_ids(m, seed, exclude);
  if (ids.size() < k)
    throw Error("not enough images left to sample " + std::to_string(k));
  ids.resize(k);
  return subset_by_ids(m, ids);
}

struct ClassStats {
  std::vector<std::string> classes;
  std::vector<std::size_t> counts;
  std::size_t total = 0;

  std::size_t count(std::string_view cls) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == cls) return counts[i];
    return 0;
  }

  friend bool operator==(const ClassStats&, const ClassStats&) = default;
};

// Counts recognizable annotations per class.
inline ClassStats class_stats(const DatasetManifest& m) {
  ClassStats s;
  s.classes = m.class_set;
  s.counts.assign(m.class_set.size(), 0);
  for (const auto& e : m.images)
    for (const auto& a : e.image.annotations) {
      if (!a.recognizable) continue;
      auto it = std::find(m.class_set.begin(), m.class_set.end(), a.cls);
      if (it == m.class_set.end()) continue;
      ++s.counts[static_cast<std::size_t>(it - m.class_set.begin())];
      ++s.total;
    }
  return s;
}

inline DatasetManifest merge_manifests(const std::vector<DatasetManifest>& ms) {
  if (ms.empty()) throw Error("merge requires at least one manifest");
  DatasetManifest out = ms.front();
  std::unordered_set<std::string> ids;
  for (const auto& e : out.images) ids.insert(e.image.id);
  for (std::size_t i = 1; i < ms.size(); ++i) {
    const auto& m = ms[i];
    if (m.class_set != out.class_set)
      throw Error("class_set mismatch between manifests 0 and " + std::to_string(i));
    if (m.master_seed != out.master_seed) out.master_seed.reset();
    for (auto e : m.images) {
      if (!ids.insert(e.image.id).second)
        throw Error("id collision: \"" + e.image.id + "\"");
      if (m.base_dir != out.base_dir) {
        const fs::path abs = fs::absolute(m.resolve(e.image)).lexically_normal();
        const fs::path base =
            out.base_dir.empty() ? fs::current_path() : fs::absolute(out.base_dir);
        e.image.path = abs.lexically_proximate(base.lexically_normal()).generic_string();
      }
      out.images.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace morphcheck
