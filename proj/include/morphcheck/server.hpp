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

// HTTP API over a workspace, consumed by the triage UI. Every request reads
// the workspace afresh; the only state held here is the triage write lock.

#pragma once

#include <httplib.h>

#include <mutex>
#include <regex>
#include <string>
#include <vector>

#include "morphcheck/evaluate.hpp"
#include "morphcheck/triage.hpp"
#include "morphcheck/workspace.hpp"

namespace morphcheck {

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

namespace api {

struct NamedManifest {
  std::string name;  // file stem
  fs::path path;
  DatasetManifest manifest;
  std::string digest;
};

inline json annotation_view(const Annotation& a, std::size_t index, bool matched) {
  return {{"index", index},
          {"class", a.cls},
          {"box", box_to_json(a.box)},
          {"recognizable", a.recognizable},
          {"matched", matched}};
}

// One image's ground truth, predictions and match outcome.
inline json case_view(const ManifestEntry& e, const PredictionRecord& pred, const ImageMatch& match,
                      const std::string& run_id) {
  json anns = json::array();
  std::size_t misses = 0, fps = 0;
  for (const auto& g : match.ground_truths) {
    anns.push_back(annotation_view(e.image.annotations[g.index], g.index, g.matched));
    if (g.counted && !g.matched) ++misses;
  }
  json dets = json::array();
  for (const auto& d : match.detections) {
    const auto& det = pred.detections[d.index];
    dets.push_back({{"index", d.index},
                    {"class", det.cls},
                    {"box", box_to_json(det.box)},
                    {"confidence", det.confidence},
                    {"matched", d.matched},
                    {"gt_index", d.gt_index ? json(*d.gt_index) : json()}});
    if (!d.matched) ++fps;
  }
  const auto& p = e.provenance;
  return {{"run", run_id},
          {"image_id", e.image.id},
          {"image_url", "/api/image/" + e.image.id},
          {"width", e.image.width},
          {"height", e.image.height},
          {"scenario", p.scenario},
          {"provenance",
           {{"seed_id", p.seed_id ? json(*p.seed_id) : json()}, {"chain", p.chain}, {"scenario", p.scenario}}},
          {"false_positives", fps},
          {"misses", misses},
          {"failing", fps > 0 || misses > 0},
          {"annotations", std::move(anns)},
          {"detections", std::move(dets)}};
}

}  // namespace api

struct ServerOptions {
  WorkspaceConfig config;
  std::optional<fs::path> ui_dir;  // static assets mounted at "/"
};

class Server {
 public:
  explicit Server(ServerOptions opt) : opt_(std::move(opt)), ws_{opt_.config.root} { routes(); }

  const Workspace& workspace() const { return ws_; }

  // Throws unless the workspace holds at least one manifest and one run.
  void check_workspace() const {
    if (ws_.manifest_files().empty() || ws_.run_ids().empty())
      throw Error("workspace " + ws_.root.string() + " needs at least one manifest and one run");
  }

  // Returns the bound port.
  int bind(const std::string& host, int port) {
    check_workspace();
    if (port == 0) {
      const int p = http_.bind_to_any_port(host);
      if (p < 0) throw Error("cannot bind " + host);
      return p;
    }
    if (!http_.bind_to_port(host, port))
      throw Error("cannot listen on " + host + ":" + std::to_string(port) + " (port in use?)");
    return port;
  }

  // Blocks until stop().
  void listen_after_bind() { http_.listen_after_bind(); }
  void wait_until_ready() const { http_.wait_until_ready(); }
  void stop() { http_.stop(); }

  // --- request handling, public so it can be exercised without sockets ---

  std::vector<api::NamedManifest> manifests() const {
    std::vector<api::NamedManifest> out;
    for (const auto& f : ws_.manifest_files()) {
      auto m = load_manifest(f);
      auto digest = manifest_digest(m);
      out.push_back({f.stem().string(), f, std::move(m), std::move(digest)});
    }
    return out;
  }

  ModelRunManifest run(const std::string& id) const {
    if (!valid_name(id) || !fs::exists(ws_.runs_dir() / id / "run.json"))
      throw HttpError(404, "unknown run \"" + id + "\"");
    return load_run(ws_.runs_dir() / id);
  }

  // The workspace manifest a run was produced for, matched by digest.
  api::NamedManifest manifest_for(const ModelRunManifest& r) const {
    for (auto& nm : manifests())
      if (nm.digest == r.dataset_digest) return nm;
    throw HttpError(409, "no manifest in the workspace matches run \"" + r.model_id + "\"");
  }

  TriageFile triage() const { return load_triage(ws_.triage_path()); }

  json list_manifests() const {
    json arr = json::array();
    for (const auto& nm : manifests()) {
      const auto stats = class_stats(nm.manifest);
      json counts = json::object();
      for (std::size_t i = 0; i < stats.classes.size(); ++i) counts[stats.classes[i]] = stats.counts[i];
      arr.push_back({{"name", nm.name},
                     {"images", nm.manifest.size()},
                     {"class_set", nm.manifest.class_set},
                     {"digest", nm.digest},
                     {"class_counts", std::move(counts)}});
    }
    return {{"manifests", std::move(arr)}};
  }

  json list_runs() const {
    json arr = json::array();
    const auto ms = manifests();
    for (const auto& id : ws_.run_ids()) {
      const auto r = load_run(ws_.runs_dir() / id);
      json manifest;
      for (const auto& nm : ms)
        if (nm.digest == r.dataset_digest) manifest = nm.name;
      arr.push_back({{"model_id", r.model_id},
                     {"run", id},
                     {"images", r.predictions.size()},
                     {"dataset", {{"path", r.dataset_path}, {"digest", r.dataset_digest}}},
                     {"manifest", manifest},
                     {"meta", r.meta}});
    }
    return {{"runs", std::move(arr)}};
  }

  // Worst first (most false positives plus misses), ties in manifest order.
  json list_cases(const std::string& run_id, const std::string& scenario,
                  const std::string& verdict, const std::string& cls) const {
    if (verdict != "fail" && verdict != "all")
      throw HttpError(400, "verdict must be fail or all");
    const auto r = run(run_id);
    const auto nm = manifest_for(r);
    const auto m = filtered(nm.manifest);
    check_run_binding(r, m);
    std::vector<json> cases;
    for (const auto& e : m.images) {
      if (!scenario.empty() && to_lower(e.provenance.scenario) != to_lower(scenario)) continue;
      const auto& pred = *r.find(e.image.id);
      if (!cls.empty()) {
        bool involved = false;
        for (const auto& a : e.image.annotations) involved = involved || a.cls == cls;
        for (const auto& d : pred.detections) involved = involved || d.cls == cls;
        if (!involved) continue;
      }
      auto view = api::case_view(e, pred, match_image(e.image, pred, m.class_set, opt_.config.iou), run_id);
      if (verdict == "fail" && !view["failing"].get<bool>()) continue;
      cases.push_back(std::move(view));
    }
    std::stable_sort(cases.begin(), cases.end(), [](const json& a, const json& b) {
      return a["false_positives"].get<std::size_t>() + a["misses"].get<std::size_t>() >
             b["false_positives"].get<std::size_t>() + b["misses"].get<std::size_t>();
    });
    json arr = json::array();
    for (auto& c : cases) arr.push_back(std::move(c));
    return {{"run", run_id}, {"iou_threshold", opt_.config.iou}, {"count", arr.size()}, {"cases", std::move(arr)}};
  }

  json get_case(const std::string& run_id, const std::string& image_id) const {
    const auto r = run(run_id);
    const auto nm = manifest_for(r);
    const auto m = filtered(nm.manifest);
    const auto* e = m.find(image_id);
    const auto* pred = r.find(image_id);
    if (!e || !pred) throw HttpError(404, "unknown image \"" + image_id + "\"");
    return api::case_view(*e, *pred, match_image(e->image, *pred, m.class_set, opt_.config.iou), run_id);
  }

  // First manifest (by file name) holding the id.
  std::pair<fs::path, const ManifestEntry*> locate_image(const std::vector<api::NamedManifest>& ms,
                                                         const std::string& id) const {
    for (const auto& nm : ms)
      if (const auto* e = nm.manifest.find(id)) return {nm.manifest.resolve(e->image), e};
    throw HttpError(404, "unknown image \"" + id + "\"");
  }

  json post_tag(const json& body) {
    TriageEntry e;
    try {
      e.image_id = body.at("image_id").get<std::string>();
      e.tag = body.at("tag").get<std::string>();
      if (body.contains("annotation_index") && !body["annotation_index"].is_null())
        e.annotation_index = body["annotation_index"].get<std::size_t>();
      e.note = body.value("note", "");
      e.author = body.value("author", "");
    } catch (const json::exception& ex) {
      throw HttpError(400, std::string("malformed tag: ") + ex.what());
    }
    if (!valid_tag(e.tag)) throw HttpError(400, "unknown tag \"" + e.tag + "\"");
    const auto ms = manifests();
    const auto [_, entry] = locate_image(ms, e.image_id);
    if (e.tag == kTagUnrecognizable && !e.annotation_index)
      throw HttpError(400, "unrecognizable needs an annotation_index");
    if (e.annotation_index && *e.annotation_index >= entry->image.annotations.size())
      throw HttpError(404, "image \"" + e.image_id + "\" has no annotation " +
                               std::to_string(*e.annotation_index));
    e.timestamp = utc_timestamp();
    std::lock_guard<std::mutex> lock(triage_mutex_);
    auto t = triage();
    const bool added = t.add(e);
    if (added) {
      fs::create_directories(ws_.triage_path().parent_path());
      save_triage(t, ws_.triage_path());
    }
    return {{"added", added}, {"entry", triage_entry_to_json(e)}, {"entries", t.entries.size()}};
  }

  json get_tags() const {
    std::lock_guard<std::mutex> lock(triage_mutex_);
    return triage_to_json(triage());
  }

  static bool valid_name(const std::string& s) {
    static const std::regex re("[A-Za-z0-9._-]+");
    return std::regex_match(s, re) && s != "." && s != "..";
  }

 private:
  // Applies unrecognizable marks that target this manifest's images.
  DatasetManifest filtered(DatasetManifest m) const {
    const auto t = triage();
    for (auto& e : m.images)
      e.image.annotations = apply_recognizability_filter(e.image.id, std::move(e.image.annotations), t);
    return m;
  }

  static void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(2), "application/json");
  }

  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const HttpError& e) {
        send_json(res, {{"error", e.what()}}, e.status());
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}}, 500);
      }
    };
  }

  void routes() {
    http_.Get("/api/manifests", guarded([this](const auto&, auto& res) { send_json(res, list_manifests()); }));
    http_.Get("/api/runs", guarded([this](const auto&, auto& res) { send_json(res, list_runs()); }));
    http_.Get("/api/cases", guarded([this](const httplib::Request& req, auto& res) {
      std::string run_id = req.get_param_value("run");
      if (run_id.empty()) {
        const auto ids = ws_.run_ids();
        if (ids.size() != 1) throw HttpError(400, "run parameter required");
        run_id = ids.front();
      }
      const auto verdict = req.has_param("verdict") ? req.get_param_value("verdict") : "fail";
      send_json(res, list_cases(run_id, req.get_param_value("scenario"), verdict,
                                req.get_param_value("class")));
    }));
    http_.Get(R"(/api/case/([^/]+)/([^/]+))", guarded([this](const httplib::Request& req, auto& res) {
      send_json(res, get_case(req.matches[1], req.matches[2]));
    }));
    http_.Get(R"(/api/image/([^/]+))", guarded([this](const httplib::Request& req, auto& res) {
      const auto ms = manifests();
      const auto [path, _] = locate_image(ms, req.matches[1]);
      const auto bytes = read_text_file(path);
      const bool png = bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0;
      res.set_content(bytes, png ? "image/png" : "image/jpeg");
    }));
    http_.Get("/api/tags", guarded([this](const auto&, auto& res) { send_json(res, get_tags()); }));
    http_.Post("/api/tags", guarded([this](const httplib::Request& req, auto& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& ex) {
        throw HttpError(400, std::string("malformed JSON: ") + ex.what());
      }
      send_json(res, post_tag(body));
    }));
    http_.Get(R"(/api/reports/([^/]+))", guarded([this](const httplib::Request& req, auto& res) {
      const std::string name = req.matches[1];
      const fs::path p = ws_.reports_dir() / name;
      if (!valid_name(name) || !fs::is_regular_file(p))
        throw HttpError(404, "unknown report \"" + name + "\"");
      const auto ext = to_lower(p.extension().string());
      res.set_content(read_text_file(p), ext == ".html" ? "text/html" : "application/json");
    }));
    if (opt_.ui_dir) http_.set_mount_point("/", opt_.ui_dir->string());
  }

  ServerOptions opt_;
  Workspace ws_;
  httplib::Server http_;
  mutable std::mutex triage_mutex_;
};

}  // namespace morphcheck
