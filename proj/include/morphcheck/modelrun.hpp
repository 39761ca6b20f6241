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

// Black-box binding of a detection model to a dataset manifest. The model
// runs behind a process boundary (a command template) or its outputs are
// replayed from stored prediction files.
//
// Prediction file: one detection per line,
//   <class> <confidence> <x> <y> <w> <h>
// whitespace separated, normalized top-left box. Empty file = no detections.

#pragma once

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <charconv>
#include <chrono>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "morphcheck/dataset.hpp"
#include "morphcheck/triage.hpp"

extern char** environ;

namespace morphcheck {

inline constexpr const char* kPredictionExtension = ".pred";

struct Detection {
  std::string cls;
  BBox box;
  double confidence = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct PredictionRecord {
  std::string image_id;
  std::vector<Detection> detections;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct ModelRunManifest {
  std::string model_id;
  std::string dataset_path;
  std::string dataset_digest;
  std::vector<PredictionRecord> predictions;  // dataset order
  json meta = json::object();
  std::vector<std::string> warnings;  // not serialized

  const PredictionRecord* find(std::string_view id) const {
    for (const auto& p : predictions)
      if (p.image_id == id) return &p;
    return nullptr;
  }
};

struct RunnerConfig {
  std::string command_template;
  double timeout_seconds = 60;
  bool batch = false;
  unsigned jobs = 1;
};

inline void validate_runner_config(const RunnerConfig& cfg) {
  if (cfg.command_template.find("{image}") == std::string::npos ||
      cfg.command_template.find("{out}") == std::string::npos)
    throw Error("command template must contain both {image} and {out}");
  if (!(cfg.timeout_seconds > 0)) throw Error("timeout must be positive");
}

// ---------------------------------------------------------------------------
// Prediction files

namespace detail {

inline double parse_number(std::string_view field, const std::string& where) {
  double v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError(where + ": bad number \"" + std::string(field) + "\"");
  return v;
}

inline void check_detection(const Detection& d, const std::vector<std::string>& class_set,
                            const std::string& where) {
  std::vector<std::string> problems;
  if (std::find(class_set.begin(), class_set.end(), d.cls) == class_set.end())
    problems.push_back(where + ": unknown class \"" + d.cls + "\"");
  if (!(d.confidence >= 0 && d.confidence <= 1))
    problems.push_back(where + ": confidence " + std::to_string(d.confidence) +
                       " outside [0, 1]");
  check_box(d.box, where, problems);
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

}  // namespace detail

inline std::vector<Detection> parse_prediction_text(std::string_view text,
                                                    const std::vector<std::string>& class_set,
                                                    const std::string& source) {
  std::vector<Detection> out;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::vector<std::string_view> fields;
    std::string_view line(raw);
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      if (j > i) fields.push_back(line.substr(i, j - i));
      i = j;
    }
    if (fields.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != 6)
      throw ParseError(where + ": expected 6 fields, got " + std::to_string(fields.size()));
    Detection d;
    d.cls = std::string(fields[0]);
    d.confidence = detail::parse_number(fields[1], where);
    d.box = {detail::parse_number(fields[2], where), detail::parse_number(fields[3], where),
             detail::parse_number(fields[4], where), detail::parse_number(fields[5], where)};
    detail::check_detection(d, class_set, where);
    out.push_back(std::move(d));
  }
  return out;
}

inline std::string format_prediction_text(const std::vector<Detection>& dets) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& d : dets)
    os << d.cls << ' ' << d.confidence << ' ' << d.box.x << ' ' << d.box.y << ' ' << d.box.w
       << ' ' << d.box.h << '\n';
  return os.str();
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Run manifests

inline json detection_to_json(const Detection& d) {
  return {{"class", d.cls}, {"confidence", d.confidence}, {"box", box_to_json(d.box)}};
}

inline Detection detection_from_json(const json& j) {
  return {j.at("class").get<std::string>(), box_from_json(j.at("box")),
          j.at("confidence").get<double>()};
}

inline json run_to_json(const ModelRunManifest& run) {
  json preds = json::array();
  for (const auto& p : run.predictions) {
    json dets = json::array();
    for (const auto& d : p.detections) dets.push_back(detection_to_json(d));
    preds.push_back({{"image_id", p.image_id}, {"detections", std::move(dets)}});
  }
  return {{"version", "1"},
          {"model_id", run.model_id},
          {"dataset", {{"path", run.dataset_path}, {"digest", run.dataset_digest}}},
          {"predictions", std::move(preds)},
          {"meta", run.meta}};
}

inline ModelRunManifest run_from_json(const json& j) {
  try {
    ModelRunManifest run;
    run.model_id = j.at("model_id").get<std::string>();
    run.dataset_path = j.at("dataset").value("path", "");
    run.dataset_digest = j.at("dataset").value("digest", "");
    for (const auto& jp : j.at("predictions")) {
      PredictionRecord p;
      p.image_id = jp.at("image_id").get<std::string>();
      for (const auto& jd : jp.at("detections")) p.detections.push_back(detection_from_json(jd));
      run.predictions.push_back(std::move(p));
    }
    run.meta = j.value("meta", json::object());
    return run;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed run manifest: ") + ex.what());
  }
}

// Accepts a run directory (containing run.json) or the file itself.
inline ModelRunManifest load_run(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "run.json" : path;
  return run_from_json(read_json_file(file));
}

inline void save_run(const ModelRunManifest& run, const fs::path& rundir) {
  write_json_file(rundir / "run.json", run_to_json(run));
}

// Checks the one-record-per-image bijection and detection validity.
inline void check_run_binding(const ModelRunManifest& run, const DatasetManifest& m) {
  std::vector<std::string> problems;
  std::set<std::string> seen, ids;
  for (const auto& e : m.images) ids.insert(e.image.id);
  for (const auto& p : run.predictions) {
    if (!seen.insert(p.image_id).second)
      problems.push_back("duplicate predictions for " + p.image_id);
    if (!ids.count(p.image_id)) problems.push_back("predictions for unknown image " + p.image_id);
    for (std::size_t i = 0; i < p.detections.size(); ++i) {
      try {
        detail::check_detection(p.detections[i], m.class_set,
                                p.image_id + " detection " + std::to_string(i));
      } catch (const ValidationError& e) {
        problems.insert(problems.end(), e.problems().begin(), e.problems().end());
      }
    }
  }
  for (const auto& e : m.images)
    if (!seen.count(e.image.id)) problems.push_back("no predictions for " + e.image.id);
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

// `path` is either a directory of <image_id>.pred files or a single JSON
// document {"predictions": {"<image_id>": [{class, confidence, box}, ...]}}.
inline ModelRunManifest ingest_predictions(const fs::path& path, const DatasetManifest& m,
                                           std::string model_id) {
  ModelRunManifest run;
  run.model_id = std::move(model_id);
  run.dataset_digest = manifest_digest(m);
  if (fs::is_regular_file(path)) {
    const json doc = read_json_file(path);
    const json& preds = doc.contains("predictions") ? doc["predictions"] : doc;
    for (const auto& e : m.images) {
      if (!preds.contains(e.image.id))
        throw Error("no predictions for " + e.image.id);
      PredictionRecord p{e.image.id, {}};
      for (const auto& jd : preds[e.image.id]) {
        Detection d;
        try {
          d = detection_from_json(jd);
        } catch (const json::exception& ex) {
          throw ParseError(path.string() + ": " + e.image.id + ": " + ex.what());
        }
        detail::check_detection(d, m.class_set, path.string() + ": " + e.image.id);
        p.detections.push_back(std::move(d));
      }
      run.predictions.push_back(std::move(p));
    }
    for (const auto& [id, _] : preds.items())
      if (!m.find(id)) run.warnings.push_back("ignoring predictions for unknown image " + id);
  } else if (fs::is_directory(path)) {
    for (const auto& e : m.images) {
      const fs::path file = path / (e.image.id + kPredictionExtension);
      if (!fs::exists(file)) throw Error("no predictions for " + e.image.id);
      run.predictions.push_back(
          {e.image.id, parse_prediction_text(read_text_file(file), m.class_set, file.string())});
    }
    std::vector<std::string> extra;
    for (const auto& f : fs::directory_iterator(path)) {
      const auto stem = f.path().stem().string();
      if (f.path().extension() != kPredictionExtension || !m.find(stem))
        extra.push_back(f.path().filename().string());
    }
    std::sort(extra.begin(), extra.end());
    for (const auto& x : extra) run.warnings.push_back("ignoring extra file " + x);
  } else {
    throw IoError("no prediction directory or file at " + path.string());
  }
  return run;
}

// ---------------------------------------------------------------------------
// Running an external command

inline std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += '\'';
  return out;
}

inline std::string expand_template(std::string tmpl, const std::string& image,
                                   const std::string& out) {
  auto replace_all = [&](const std::string& key, const std::string& value) {
    for (std::size_t pos = 0; (pos = tmpl.find(key, pos)) != std::string::npos;
         pos += value.size())
      tmpl.replace(pos, key.size(), value);
  };
  replace_all("{image}", shell_quote(image));
  replace_all("{out}", shell_quote(out));
  return tmpl;
}

struct ProcessResult {
  int exit_code = 0;
  bool timed_out = false;
};

// Runs `/bin/sh -c command` in its own process group with stdout and stderr
// redirected to `log_path`. The whole group is killed on timeout.
inline ProcessResult run_shell(const std::string& command, const fs::path& log_path,
                               double timeout_seconds) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, 1, log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC,
                                   0644);
  posix_spawn_file_actions_adddup2(&actions, 1, 2);
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);

  std::string sh = "/bin/sh", dash_c = "-c", cmd = command;
  char* argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, &attr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) throw IoError("cannot spawn /bin/sh: " + std::string(std::strerror(rc)));

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_seconds);
  auto pause = std::chrono::microseconds(200);
  int status = 0;
  while (true) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw IoError("waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      return {-1, true};
    }
    std::this_thread::sleep_for(pause);
    pause = std::min(pause * 2, std::chrono::microseconds(20000));
  }
  if (WIFEXITED(status)) return {WEXITSTATUS(status), false};
  return {128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0), false};
}

// Invokes the model command per image (or once, in batch mode), then ingests
// <rundir>/preds. In batch mode {image} is a list file of "<id>\t<path>"
// lines and {out} the predictions directory.
inline ModelRunManifest run_model(const RunnerConfig& cfg, const DatasetManifest& m,
                                  std::string model_id, const fs::path& rundir) {
  validate_runner_config(cfg);
  const fs::path preds = rundir / "preds";
  const fs::path logs = rundir / "logs";
  fs::create_directories(preds);
  fs::create_directories(logs);
  const auto started = utc_timestamp();

  auto fail = [](const std::string& what, const fs::path& log) {
    std::string captured;
    if (fs::exists(log)) captured = read_text_file(log);
    throw Error(what + (captured.empty() ? "" : "\n" + captured));
  };

  if (cfg.batch) {
    std::ostringstream list;
    for (const auto& e : m.images)
      list << e.image.id << '\t' << fs::absolute(m.resolve(e.image)).string() << '\n';
    const fs::path list_file = rundir / "images.txt";
    write_text_atomic(list_file, list.str());
    const fs::path log = logs / "batch.log";
    const auto cmd = expand_template(cfg.command_template, fs::absolute(list_file).string(),
                                     fs::absolute(preds).string());
    const auto r = run_shell(cmd, log, cfg.timeout_seconds);
    if (r.timed_out) fail("model command timed out in batch mode", log);
    if (r.exit_code != 0)
      fail("model command failed in batch mode with exit code " + std::to_string(r.exit_code),
           log);
  } else {
    parallel_for(m.images.size(), cfg.jobs, [&](std::size_t i) {
      const auto& img = m.images[i].image;
      const fs::path out = preds / (img.id + kPredictionExtension);
      const fs::path log = logs / (img.id + ".log");
      fs::remove(out);
      const auto cmd = expand_template(cfg.command_template,
                                       fs::absolute(m.resolve(img)).string(),
                                       fs::absolute(out).string());
      const auto r = run_shell(cmd, log, cfg.timeout_seconds);
      if (r.timed_out)
        fail("model command timed out after " + std::to_string(cfg.timeout_seconds) +
                 "s on " + img.id,
             log);
      if (r.exit_code != 0)
        fail("model command failed on " + img.id + " with exit code " +
                 std::to_string(r.exit_code),
             log);
      if (!fs::exists(out)) fail("model command wrote no output for " + img.id, log);
    });
  }

  ModelRunManifest run = ingest_predictions(preds, m, std::move(model_id));
  run.meta = {{"command", cfg.command_template},
              {"batch", cfg.batch},
              {"started", started},
              {"finished", utc_timestamp()}};
  return run;
}

}  // namespace morphcheck
