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

// Human triage decisions: suspected weak scenarios/classes and labels that
// are not recognizable in a mutant image.

#pragma once

#include <chrono>
#include <ctime>
#include <optional>
#include <string>
#include <vector>

#include "morphcheck/dataset.hpp"

namespace morphcheck {

inline constexpr const char* kTagSuspectScenario = "suspect-scenario:";
inline constexpr const char* kTagSuspectClass = "suspect-class:";
inline constexpr const char* kTagUnrecognizable = "unrecognizable";
inline constexpr const char* kTagOk = "ok";

inline bool valid_tag(std::string_view tag) {
  if (tag == kTagUnrecognizable || tag == kTagOk) return true;
  for (std::string_view prefix : {kTagSuspectScenario, kTagSuspectClass})
    if (starts_with(tag, prefix) && tag.size() > prefix.size()) return true;
  return false;
}

struct TriageEntry {
  std::string image_id;
  std::optional<std::size_t> annotation_index;
  std::string tag;
  std::string note;
  std::string author;
  std::string timestamp;

  // Identity for de-duplication: the note, author and time do not count.
  bool same_target_and_tag(const TriageEntry& o) const {
    return image_id == o.image_id && annotation_index == o.annotation_index && tag == o.tag;
  }

  friend bool operator==(const TriageEntry&, const TriageEntry&) = default;
};

struct TriageFile {
  std::vector<TriageEntry> entries;

  // Returns false when an identical (target, tag) entry already exists.
  bool add(TriageEntry e) {
    for (const auto& existing : entries)
      if (existing.same_target_and_tag(e)) return false;
    entries.push_back(std::move(e));
    return true;
  }

  // Suspects in the diagnose vocabulary: "<scenario>" or "class:<name>",
  // in first-seen order.
  std::vector<std::string> suspects() const {
    std::vector<std::string> out;
    auto push = [&](std::string s) {
      if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
    };
    for (const auto& e : entries) {
      if (starts_with(e.tag, kTagSuspectScenario))
        push(e.tag.substr(std::string_view(kTagSuspectScenario).size()));
      else if (starts_with(e.tag, kTagSuspectClass))
        push("class:" + e.tag.substr(std::string_view(kTagSuspectClass).size()));
    }
    return out;
  }

  friend bool operator==(const TriageFile&, const TriageFile&) = default;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json triage_entry_to_json(const TriageEntry& e) {
  json j = {{"image_id", e.image_id},
            {"tag", e.tag},
            {"note", e.note},
            {"author", e.author},
            {"timestamp", e.timestamp}};
  j["annotation_index"] = e.annotation_index ? json(*e.annotation_index) : json();
  return j;
}

inline TriageEntry triage_entry_from_json(const json& j) {
  TriageEntry e;
  e.image_id = j.at("image_id").get<std::string>();
  if (j.contains("annotation_index") && !j["annotation_index"].is_null())
    e.annotation_index = j["annotation_index"].get<std::size_t>();
  e.tag = j.at("tag").get<std::string>();
  e.note = j.value("note", "");
  e.author = j.value("author", "");
  e.timestamp = j.value("timestamp", "");
  if (!valid_tag(e.tag)) throw ParseError("unknown triage tag \"" + e.tag + "\"");
  return e;
}

inline json triage_to_json(const TriageFile& t) {
  json entries = json::array();
  for (const auto& e : t.entries) entries.push_back(triage_entry_to_json(e));
  return {{"version", "1"}, {"entries", std::move(entries)}};
}

inline TriageFile triage_from_json(const json& j) {
  try {
    TriageFile t;
    for (const auto& je : j.at("entries")) t.entries.push_back(triage_entry_from_json(je));
    return t;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed triage file: ") + ex.what());
  }
}

// A missing file is an empty triage.
inline TriageFile load_triage(const fs::path& path) {
  if (!fs::exists(path)) return {};
  return triage_from_json(read_json_file(path));
}

inline void save_triage(const TriageFile& t, const fs::path& path) {
  write_json_file(path, triage_to_json(t));
}

// Marks the annotations of one image that triage flags as unrecognizable.
inline std::vector<Annotation> apply_recognizability_filter(
    std::string_view image_id, std::vector<Annotation> annotations, const TriageFile& triage) {
  for (const auto& e : triage.entries) {
    if (e.image_id != image_id || e.tag != kTagUnrecognizable) continue;
    if (!e.annotation_index || *e.annotation_index >= annotations.size())
      throw Error("dangling triage reference (" + e.image_id + ", " +
                  (e.annotation_index ? std::to_string(*e.annotation_index) : "none") + ")");
    annotations[*e.annotation_index].recognizable = false;
  }
  return annotations;
}

// Manifest-wide form; also rejects entries naming images that do not exist.
inline DatasetManifest apply_recognizability_filter(DatasetManifest m, const TriageFile& triage) {
  for (const auto& e : triage.entries)
    if (!m.find(e.image_id))
      throw Error("dangling triage reference (" + e.image_id + ", " +
                  (e.annotation_index ? std::to_string(*e.annotation_index) : "none") + ")");
  for (auto& entry : m.images)
    entry.image.annotations = apply_recognizability_filter(
        entry.image.id, std::move(entry.image.annotations), triage);
  return m;
}

}  // namespace morphcheck
