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

// A desk-scale stand-in for a cone detection task: synthetic frames of
// coloured triangle "cones" on a noisy grey ground, and a rule-based colour
// segmentation detector with switchable blind spots.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "morphcheck/datamorph.hpp"
#include "morphcheck/dataset.hpp"
#include "morphcheck/image.hpp"
#include "morphcheck/modelrun.hpp"

namespace morphcheck::toy {

inline const std::vector<std::string>& cone_classes() {
  static const std::vector<std::string> classes = {"yellow", "blue", "orange"};
  return classes;
}

struct ToyCorpusOptions {
  int count = 60;
  int width = 160;
  int height = 120;
  std::uint64_t seed = 1;
  std::string id_prefix = "img_";
};

inline std::array<std::uint8_t, 3> cone_color(const std::string& cls) {
  if (cls == "yellow") return {240, 220, 30};
  if (cls == "blue") return {30, 60, 220};
  return {250, 120, 20};
}

namespace detail {

struct Rect {
  int x, y, w, h;
  bool overlaps(const Rect& o, int margin) const {
    return x < o.x + o.w + margin && o.x < x + w + margin && y < o.y + o.h + margin &&
           o.y < y + h + margin;
  }
};

// Upright isosceles triangle filling the rect; a pixel is painted when its
// centre is inside.
inline void paint_triangle(PixelImage& img, const Rect& r, std::array<std::uint8_t, 3> rgb) {
  const double apex_x = r.x + r.w / 2.0;
  for (int y = r.y; y < r.y + r.h; ++y) {
    const double t = (y + 0.5 - r.y) / r.h;  // 0 at apex, 1 at base
    const double half = t * r.w / 2.0;
    for (int x = r.x; x < r.x + r.w; ++x) {
      const double cx = x + 0.5;
      if (cx < apex_x - half || cx > apex_x + half) continue;
      auto* p = img.at(x, y);
      p[0] = rgb[0];
      p[1] = rgb[1];
      p[2] = rgb[2];
    }
  }
}

}  // namespace detail

// Writes `count` PNG frames under out_dir/images and returns the seed
// manifest (saved as out_dir/manifest.json).
inline DatasetManifest make_corpus(const fs::path& out_dir, const ToyCorpusOptions& opt = {}) {
  Rng rng(opt.seed);
  DatasetManifest m;
  m.class_set = cone_classes();
  m.master_seed = opt.seed;
  m.base_dir = out_dir;
  fs::create_directories(out_dir / "images");
  for (int n = 0; n < opt.count; ++n) {
    char id[64];
    std::snprintf(id, sizeof id, "%s%03d", opt.id_prefix.c_str(), n + 1);
    PixelImage img(opt.width, opt.height);
    for (int y = 0; y < opt.height; ++y)
      for (int x = 0; x < opt.width; ++x) {
        const double base = y < opt.height / 3 ? 170.0 : 105.0;
        const auto v = to_byte(base + rng.uniform(-10.0, 10.0));
        auto* p = img.at(x, y);
        p[0] = p[1] = p[2] = v;
      }
    std::vector<std::string> wanted;
    for (int i = 0, k = 1 + static_cast<int>(rng.below(2)); i < k; ++i) wanted.push_back("yellow");
    for (int i = 0, k = 1 + static_cast<int>(rng.below(2)); i < k; ++i) wanted.push_back("blue");
    if (rng.uniform() < 0.75) wanted.push_back("orange");

    ImageRecord rec;
    rec.id = id;
    rec.path = std::string("images/") + id + ".png";
    rec.width = opt.width;
    rec.height = opt.height;
    std::vector<detail::Rect> placed;
    for (const auto& cls : wanted) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const int w = 14 + static_cast<int>(rng.below(13));
        const int h = 18 + static_cast<int>(rng.below(15));
        const detail::Rect r{2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.width - w - 4))),
                             opt.height / 3 +
                                 static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                     opt.height - opt.height / 3 - h - 2))),
                             w, h};
        bool clash = false;
        for (const auto& o : placed) clash = clash || r.overlaps(o, 4);
        if (clash) continue;
        placed.push_back(r);
        detail::paint_triangle(img, r, cone_color(cls));
        rec.annotations.push_back(
            {cls,
             {static_cast<double>(r.x) / opt.width, static_cast<double>(r.y) / opt.height,
              static_cast<double>(r.w) / opt.width, static_cast<double>(r.h) / opt.height},
             true});
        break;
      }
    }
    write_png(img, out_dir / rec.path);
    m.images.push_back({std::move(rec), Provenance::original()});
  }
  validate_manifest(m);
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

enum class DetectorVariant {
  kOrangeBlind,    // never reports orange
  kOrangeAware,    // all three colours
  kSpeedDegraded,  // orange-aware, but gives up on horizontally smeared frames
};

inline DetectorVariant parse_variant(std::string_view s) {
  if (s == "orange-blind") return DetectorVariant::kOrangeBlind;
  if (s == "orange-aware") return DetectorVariant::kOrangeAware;
  if (s == "speed-degraded") return DetectorVariant::kSpeedDegraded;
  throw Error("unknown detector variant \"" + std::string(s) + "\"");
}

// Ratio of horizontal to vertical luminance gradient energy. Near 1 on the
// noisy ground; a horizontal box blur pushes it well below.
inline double gradient_anisotropy(const PixelImage& img) {
  auto lum = [&](int x, int y) {
    const auto* p = img.at(x, y);
    return (p[0] + p[1] + p[2]) / 3.0;
  };
  double gx = 0, gy = 0;
  for (int y = 0; y + 1 < img.height; ++y)
    for (int x = 0; x + 1 < img.width; ++x) {
      gx += std::fabs(lum(x + 1, y) - lum(x, y));
      gy += std::fabs(lum(x, y + 1) - lum(x, y));
    }
  return gy > 0 ? gx / gy : 1.0;
}

// Measured on the toy corpus: motion-blurred frames sit near 0.3, frames
// under the isotropic water blur near 0.6, everything else above 0.9.
inline constexpr double kSmearThreshold = 0.45;

// Colour segmentation: label pixels by hue band, take 4-connected
// components, report each component's bounding box.
inline std::vector<Detection> detect(const PixelImage& img, DetectorVariant variant) {
  if (variant == DetectorVariant::kSpeedDegraded && gradient_anisotropy(img) < kSmearThreshold)
    return {};
  const int W = img.width, H = img.height;
  const auto& classes = cone_classes();
  std::vector<int> label(static_cast<std::size_t>(W) * static_cast<std::size_t>(H), -1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto* p = img.at(x, y);
      const Hsv c = rgb_to_hsv(p[0], p[1], p[2]);
      if (c.s < 0.3 || c.v < 0.2) continue;
      int cls = -1;
      if (c.h >= 5 && c.h < 40)
        cls = 2;
      else if (c.h >= 40 && c.h < 75)
        cls = 0;
      else if (c.h >= 190 && c.h <= 260)
        cls = 1;
      if (cls == 2 && variant == DetectorVariant::kOrangeBlind) cls = -1;
      label[static_cast<std::size_t>(y) * static_cast<std::size_t>(W) + static_cast<std::size_t>(x)] = cls;
    }

  std::vector<Detection> out;
  std::vector<bool> seen(label.size(), false);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto start = static_cast<std::size_t>(y) * static_cast<std::size_t>(W) + static_cast<std::size_t>(x);
      if (seen[start] || label[start] < 0) continue;
      const int cls = label[start];
      int x0 = x, x1 = x, y0 = y, y1 = y, area = 0;
      stack.assign(1, {x, y});
      seen[start] = true;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        ++area;
        x0 = std::min(x0, cx);
        x1 = std::max(x1, cx);
        y0 = std::min(y0, cy);
        y1 = std::max(y1, cy);
        const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (const auto& d : nb) {
          const int nx = cx + d[0], ny = cy + d[1];
          if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
          const auto k = static_cast<std::size_t>(ny) * static_cast<std::size_t>(W) + static_cast<std::size_t>(nx);
          if (seen[k] || label[k] != cls) continue;
          seen[k] = true;
          stack.push_back({nx, ny});
        }
      }
      if (area < 20) continue;
      Detection d;
      d.cls = classes[static_cast<std::size_t>(cls)];
      d.box = {static_cast<double>(x0) / W, static_cast<double>(y0) / H,
               static_cast<double>(x1 - x0 + 1) / W, static_cast<double>(y1 - y0 + 1) / H};
      d.confidence = 0.5 + 0.5 * std::min(1.0, area / 300.0);
      out.push_back(std::move(d));
    }
  return out;
}

}  // namespace morphcheck::toy
