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

// Test fixtures and independent oracles. Nothing here calls into the code
// under test for the quantity it is meant to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "morphcheck/dataset.hpp"
#include "morphcheck/evaluate.hpp"
#include "morphcheck/image.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace morphcheck;

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = fs::temp_directory_path() / ("morphcheck-test-" + std::to_string(gen()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative path -> contents for every regular file under root.
inline std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& f : fs::recursive_directory_iterator(root))
    if (f.is_regular_file()) out[fs::relative(f.path(), root).string()] = slurp(f.path());
  return out;
}

// ---------------------------------------------------------------------------
// AP oracle: enumerate every confidence threshold, take the (recall,
// precision) point it produces, and integrate the precision envelope over
// the distinct recall levels.

inline std::optional<double> oracle_ap(const std::vector<std::pair<double, bool>>& dets,
                                       std::size_t gt_count) {
  if (gt_count == 0) return std::nullopt;
  std::set<double> thresholds;
  for (const auto& d : dets) thresholds.insert(d.first);
  std::vector<std::pair<double, double>> points;  // (recall, precision)
  for (double t : thresholds) {
    double tp = 0, n = 0;
    for (const auto& d : dets)
      if (d.first >= t) {
        n += 1;
        tp += d.second ? 1 : 0;
      }
    points.push_back({tp / static_cast<double>(gt_count), tp / n});
  }
  std::set<double> recalls;
  for (const auto& p : points) recalls.insert(p.first);
  double ap = 0, prev = 0;
  for (double r : recalls) {
    double best = 0;
    for (const auto& p : points)
      if (p.first >= r) best = std::max(best, p.second);
    ap += (r - prev) * best;
    prev = r;
  }
  return ap;
}

// ---------------------------------------------------------------------------
// HSV oracle, the textbook hexcone formulas on [0,1] channels.

struct OracleHsv {
  double h, s, v;
};

inline OracleHsv oracle_rgb_to_hsv(int r8, int g8, int b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double c = mx - mn;
  double h = 0;
  if (c > 0) {
    if (mx == r)
      h = 60.0 * std::fmod((g - b) / c + 6.0, 6.0);
    else if (mx == g)
      h = 60.0 * ((b - r) / c + 2.0);
    else
      h = 60.0 * ((r - g) / c + 4.0);
  }
  return {h, mx > 0 ? c / mx : 0.0, mx};
}

inline std::array<double, 3> oracle_hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1 - std::fabs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0};
}

// ---------------------------------------------------------------------------
// Coverage oracle: count subsets of an m-set with size <= L by enumerating
// bitmasks.

inline std::size_t oracle_subset_count(int m, int max_size) {
  std::size_t n = 0;
  for (unsigned mask = 0; mask < (1u << m); ++mask)
    if (std::popcount(mask) <= max_size) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// In-memory fixtures

inline ImageRecord image(std::string id, std::vector<Annotation> anns = {}) {
  return {std::move(id), "images/x.png", 100, 100, std::move(anns)};
}

inline Annotation ann(std::string cls, double x, double y, double w, double h, bool rec = true) {
  return {std::move(cls), {x, y, w, h}, rec};
}

inline Detection det(std::string cls, double conf, double x, double y, double w, double h) {
  return {std::move(cls), {x, y, w, h}, conf};
}

// Random non-degenerate box inside the unit square.
inline BBox random_box(std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = 0.05 + 0.3 * u(g), h = 0.05 + 0.3 * u(g);
  return {u(g) * (1 - w), u(g) * (1 - h), w, h};
}

// A jittered copy of b, kept inside the unit square.
inline BBox jitter(const BBox& b, std::mt19937_64& g, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  BBox o = b;
  o.x = std::clamp(b.x + u(g) * b.w, 0.0, 1.0 - b.w);
  o.y = std::clamp(b.y + u(g) * b.h, 0.0, 1.0 - b.h);
  return o;
}

struct Scenario {
  DatasetManifest manifest;
  ModelRunManifest run;
};

// Random multi-class, multi-scenario data with a noisy detector. Confidences
// are drawn from a coarse grid so ties occur.
inline Scenario random_scenario(std::mt19937_64& g, int images = 20,
                                std::vector<std::string> classes = {"yellow", "blue", "orange"}) {
  static const std::vector<std::vector<std::string>> chains = {{}, {"fog"}, {"rain"}, {"dark", "fog"}};
  std::uniform_int_distribution<int> n_gt(0, 4), n_fp(0, 3), cls_pick(0, static_cast<int>(classes.size()) - 1),
      grid(0, 20), chain_pick(0, static_cast<int>(chains.size()) - 1);
  std::bernoulli_distribution hit(0.7), recog(0.9);
  Scenario s;
  s.manifest.class_set = classes;
  s.run.model_id = "M";
  for (int i = 0; i < images; ++i) {
    const std::string id = "img" + std::to_string(i);
    ImageRecord rec = image(id);
    PredictionRecord pred{id, {}};
    for (int k = n_gt(g); k > 0; --k) {
      const auto& cls = classes[static_cast<std::size_t>(cls_pick(g))];
      const BBox b = random_box(g);
      rec.annotations.push_back({cls, b, recog(g)});
      if (hit(g)) pred.detections.push_back({cls, jitter(b, g, 0.1), grid(g) / 20.0});
    }
    for (int k = n_fp(g); k > 0; --k)
      pred.detections.push_back({classes[static_cast<std::size_t>(cls_pick(g))], random_box(g), grid(g) / 20.0});
    const auto& chain = chains[static_cast<std::size_t>(chain_pick(g))];
    Provenance p = chain.empty() ? Provenance::original() : Provenance::mutant("seed" + std::to_string(i), chain);
    s.manifest.images.push_back({std::move(rec), std::move(p)});
    s.run.predictions.push_back(std::move(pred));
  }
  s.run.dataset_digest = manifest_digest(s.manifest);
  return s;
}

}  // namespace testing_support
