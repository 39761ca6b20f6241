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

// Workspace layout and defaults shared by the command line and the server.
//
//   <root>/manifests/*.json      dataset manifests
//   <root>/images/               image files (manifests may point anywhere)
//   <root>/runs/<model_id>/      run.json, preds/, logs/
//   <root>/reports/              report documents
//   <root>/triage/triage.json    the triage file

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "morphcheck/datamorph.hpp"
#include "morphcheck/dataset.hpp"

namespace morphcheck {

struct WorkspaceConfig {
  fs::path root = ".";
  std::uint64_t seed = 0;
  double iou = 0.5;
  double delta = 5.0;
  double epsilon = 1.0;
  int bootstrap = 1000;
  double confidence = 0.95;
  // "op.key" -> value, applied to every operator spec the workspace builds.
  std::map<std::string, double> overrides;
};

inline std::pair<std::string, std::string> split_override_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
    throw Error("override \"" + key + "\" must look like op.param");
  return {to_lower(key.substr(0, dot)), key.substr(dot + 1)};
}

// Merges the overrides that name this operator into the spec; explicit spec
// parameters win.
inline DatamorphismSpec with_overrides(DatamorphismSpec spec,
                                       const std::map<std::string, double>& overrides) {
  for (const auto& [key, value] : overrides) {
    const auto [op, param] = split_override_key(key);
    if (op == spec.name) spec.params.try_emplace(param, value);
  }
  validate_spec(spec);
  return spec;
}

inline void validate_workspace_config(const WorkspaceConfig& c) {
  if (!(c.iou > 0 && c.iou < 1)) throw Error("config: iou must be in (0, 1)");
  if (c.bootstrap < 100) throw Error("config: bootstrap must be >= 100");
  if (!(c.delta >= 0)) throw Error("config: delta must be >= 0");
  if (!(c.epsilon >= 0)) throw Error("config: epsilon must be >= 0");
  if (!(c.confidence > 0 && c.confidence < 1)) throw Error("config: confidence must be in (0, 1)");
  for (const auto& [key, value] : c.overrides) {
    const auto [op, param] = split_override_key(key);
    validate_spec({op, {{param, value}}});
  }
}

// Relative roots resolve against the config file's directory.
inline WorkspaceConfig workspace_config_from_json(const json& j, const fs::path& config_dir = {}) {
  WorkspaceConfig c;
  try {
    if (j.contains("root")) {
      fs::path root = j["root"].get<std::string>();
      c.root = root.is_absolute() || config_dir.empty() ? root : config_dir / root;
    } else if (!config_dir.empty()) {
      c.root = config_dir;
    }
    c.seed = j.value("seed", c.seed);
    c.iou = j.value("iou", c.iou);
    c.delta = j.value("delta", c.delta);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.confidence = j.value("confidence", c.confidence);
    if (j.contains("overrides"))
      c.overrides = j["overrides"].get<std::map<std::string, double>>();
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed workspace config: ") + ex.what());
  }
  validate_workspace_config(c);
  return c;
}

inline WorkspaceConfig load_workspace_config(const fs::path& path) {
  return workspace_config_from_json(read_json_file(path), path.parent_path());
}

struct Workspace {
  fs::path root;

  fs::path manifests_dir() const { return root / "manifests"; }
  fs::path images_dir() const { return root / "images"; }
  fs::path runs_dir() const { return root / "runs"; }
  fs::path reports_dir() const { return root / "reports"; }
  fs::path triage_path() const { return root / "triage" / "triage.json"; }

  // Sorted by file name.
  std::vector<fs::path> manifest_files() const {
    std::vector<fs::path> out;
    if (!fs::is_directory(manifests_dir())) return out;
    for (const auto& f : fs::directory_iterator(manifests_dir()))
      if (f.is_regular_file() && f.path().extension() == ".json") out.push_back(f.path());
    std::sort(out.begin(), out.end());
    return out;
  }

  // Model ids with a run.json, sorted.
  std::vector<std::string> run_ids() const {
    std::vector<std::string> out;
    if (!fs::is_directory(runs_dir())) return out;
    for (const auto& d : fs::directory_iterator(runs_dir()))
      if (d.is_directory() && fs::exists(d.path() / "run.json"))
        out.push_back(d.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
  }
};

}  // namespace morphcheck
