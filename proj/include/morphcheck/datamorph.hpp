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

// Datamorphisms: seeded, geometry-preserving image transforms that turn a
// seed test case into a test case of another operating scenario.
//
// All randomness comes from the case seed handed to each call, so outputs
// never depend on thread scheduling. Every operator keeps the image size and
// the annotation list unchanged; label validity after a transform is a human
// decision recorded through triage.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "morphcheck/common.hpp"
#include "morphcheck/dataset.hpp"
#include "morphcheck/image.hpp"

namespace morphcheck {

inline constexpr const char* kBlueClass = "blue";

struct ParamInfo {
  std::string name;
  double default_value;
  double min;
  double max;
};

struct OperatorInfo {
  std::string name;
  std::string description;
  bool stochastic;
  std::vector<ParamInfo> params;
};

// Registry order is also the canonical application order for chains.
inline const std::vector<OperatorInfo>& operator_registry() {
  static const std::vector<OperatorInfo> registry = {
      {"bright", "blend toward white: v' = v*alpha + 255*(1-alpha)", false,
       {{"alpha", 0.9, 0.0, 1.0}}},
      {"dark", "gain: v' = v*gain", false, {{"gain", 0.4, 0.0, 1.0}}},
      {"flare", "additive radial flare centred in the top half of the frame", true,
       {{"intensity", 180.0, 0.0, 255.0}, {"radius", 0.25, 0.01, 1.0}}},
      {"fog", "uniform fog blend: v' = v*(1-density) + color*density", false,
       {{"density", 0.4, 0.0, 1.0}, {"color", 220.0, 0.0, 255.0}}},
      {"rain", "seeded 1-px rain streaks blended over the frame", true,
       {{"density", 0.002, 0.0, 0.05},
        {"length_min", 12.0, 1.0, 500.0},
        {"length_max", 24.0, 1.0, 500.0},
        {"angle_min", 100.0, 0.0, 180.0},
        {"angle_max", 110.0, 0.0, 180.0},
        {"opacity", 0.6, 0.0, 1.0},
        {"color", 200.0, 0.0, 255.0}}},
      {"speed", "horizontal box motion blur, edge-clamped", false,
       {{"length", 9.0, 1.0, 101.0}}},
      {"water", "gaussian blur plus seeded blurred, brightened droplets", true,
       {{"sigma", 1.5, 0.1, 20.0},
        {"drops", 20.0, 0.0, 1000.0},
        {"radius_min", 4.0, 1.0, 200.0},
        {"radius_max", 10.0, 1.0, 200.0},
        {"drop_sigma", 4.0, 0.1, 20.0},
        {"brighten", 10.0, 0.0, 255.0}}},
      {"orangecone", "re-hue blue pixels inside blue-class boxes to orange", false,
       {{"blue_hue_min", 190.0, 0.0, 360.0},
        {"blue_hue_max", 260.0, 0.0, 360.0},
        {"min_saturation", 0.25, 0.0, 1.0},
        {"target_hue_min", 20.0, 0.0, 360.0},
        {"target_hue_max", 35.0, 0.0, 360.0}}},
  };
  return registry;
}

// Index in the registry, or nullopt for unknown names.
inline std::optional<std::size_t> operator_index(std::string_view name) {
  const auto& reg = operator_registry();
  for (std::size_t i = 0; i < reg.size(); ++i)
    if (reg[i].name == name) return i;
  return std::nullopt;
}

inline const OperatorInfo& operator_info(std::string_view name) {
  auto idx = operator_index(name);
  if (!idx) throw Error("unknown datamorphism \"" + std::string(name) + "\"");
  return operator_registry()[*idx];
}

// The operator set of the racing-cone case study, without orangecone.
inline std::vector<std::string> weather_operator_names() {
  return {"bright", "dark", "flare", "fog", "rain", "speed", "water"};
}

struct DatamorphismSpec {
  std::string name;
  // Overrides only; missing parameters take the registry default.
  std::map<std::string, double> params;

  double param(std::string_view key) const {
    if (auto it = params.find(std::string(key)); it != params.end()) return it->second;
    for (const auto& p : operator_info(name).params)
      if (p.name == key) return p.default_value;
    throw Error("operator \"" + name + "\" has no parameter \"" + std::string(key) + "\"");
  }

  friend bool operator==(const DatamorphismSpec&, const DatamorphismSpec&) = default;
};

inline void validate_spec(const DatamorphismSpec& spec) {
  const auto& info = operator_info(spec.name);
  for (const auto& [key, value] : spec.params) {
    auto it = std::find_if(info.params.begin(), info.params.end(),
                           [&](const ParamInfo& p) { return p.name == key; });
    if (it == info.params.end())
      throw Error("operator \"" + spec.name + "\" has no parameter \"" + key + "\"");
    if (!(value >= it->min && value <= it->max))
      throw Error("parameter " + spec.name + "." + key + " = " + std::to_string(value) +
                  " outside [" + std::to_string(it->min) + ", " + std::to_string(it->max) + "]");
  }
  auto ordered = [&](const char* lo, const char* hi) {
    if (spec.param(lo) > spec.param(hi))
      throw Error("parameter " + spec.name + "." + lo + " exceeds " + hi);
  };
  if (spec.name == "rain") {
    ordered("length_min", "length_max");
    ordered("angle_min", "angle_max");
  } else if (spec.name == "water") {
    ordered("radius_min", "radius_max");
  } else if (spec.name == "orangecone") {
    ordered("blue_hue_min", "blue_hue_max");
    ordered("target_hue_min", "target_hue_max");
  }
}

using DatamorphChain = std::vector<DatamorphismSpec>;

inline std::vector<std::string> chain_names(const DatamorphChain& chain) {
  std::vector<std::string> out;
  out.reserve(chain.size());
  for (const auto& s : chain) out.push_back(s.name);
  return out;
}

// Per-test-case seed from the run's master seed, the source image and the
// operator names of the chain.
inline std::uint64_t derive_case_seed(std::uint64_t master_seed, std::string_view image_id,
                                      const std::vector<std::string>& chain) {
  std::uint64_t h = fnv1a64(image_id);
  for (const auto& name : chain) {
    h = fnv1a64("\x1f", h);
    h = fnv1a64(name, h);
  }
  return hash_combine(master_seed, h);
}

inline std::uint64_t derive_case_seed(std::uint64_t master_seed, std::string_view image_id,
                                      const DatamorphChain& chain) {
  return derive_case_seed(master_seed, image_id, chain_names(chain));
}

inline std::uint64_t step_seed(std::uint64_t case_seed, std::size_t step) {
  return hash_combine(case_seed, static_cast<std::uint64_t>(step) + 1);
}

// ---------------------------------------------------------------------------
// Colour helpers

struct Hsv {
  double h;  // degrees [0, 360)
  double s;  // [0, 1]
  double v;  // [0, 1]
};

inline Hsv rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0;
  if (d > 0) {
    if (mx == r)
      h = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g)
      h = 60.0 * ((b - r) / d + 2.0);
    else
      h = 60.0 * ((r - g) / d + 4.0);
  }
  if (h < 0) h += 360.0;
  return {h, mx > 0 ? d / mx : 0.0, mx};
}

inline std::array<std::uint8_t, 3> hsv_to_rgb(Hsv c) {
  const double h = std::fmod(c.h, 360.0) / 60.0;
  const double chroma = c.v * c.s;
  const double x = chroma * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = chroma; g = x; break;
    case 1: r = x; g = chroma; break;
    case 2: g = chroma; b = x; break;
    case 3: g = x; b = chroma; break;
    case 4: r = x; b = chroma; break;
    default: r = chroma; b = x; break;
  }
  const double m = c.v - chroma;
  return {to_byte((r + m) * 255.0), to_byte((g + m) * 255.0), to_byte((b + m) * 255.0)};
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

inline PixelImage map_values(const PixelImage& in, auto&& fn) {
  PixelImage out = in;
  for (auto& v : out.pixels) v = to_byte(fn(static_cast<double>(v)));
  return out;
}

// Separable gaussian blur, edge-clamped, computed in double and rounded once.
inline std::vector<double> gaussian_blur(const PixelImage& in, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> weights(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int k = -radius; k <= radius; ++k) {
    const double w = std::exp(-(k * k) / (2.0 * sigma * sigma));
    weights[static_cast<std::size_t>(k + radius)] = w;
    sum += w;
  }
  for (auto& w : weights) w /= sum;

  const int W = in.width, H = in.height;
  std::vector<double> tmp(in.pixels.size()), out(in.pixels.size());
  auto idx = [W](int x, int y, int c) {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(W) + static_cast<std::size_t>(x)) * 3 +
           static_cast<std::size_t>(c);
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, W - 1);
          acc += weights[static_cast<std::size_t>(k + radius)] * in.pixels[idx(xx, y, c)];
        }
        tmp[idx(x, y, c)] = acc;
      }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, H - 1);
          acc += weights[static_cast<std::size_t>(k + radius)] * tmp[idx(x, yy, c)];
        }
        out[idx(x, y, c)] = acc;
      }
  return out;
}

inline PixelImage to_image(int w, int h, const std::vector<double>& values) {
  PixelImage out(w, h);
  for (std::size_t i = 0; i < values.size(); ++i) out.pixels[i] = to_byte(values[i]);
  return out;
}

inline PixelImage bright(const PixelImage& in, const DatamorphismSpec& s) {
  const double a = s.param("alpha");
  return map_values(in, [a](double v) { return v * a + 255.0 * (1.0 - a); });
}

inline PixelImage dark(const PixelImage& in, const DatamorphismSpec& s) {
  const double g = s.param("gain");
  return map_values(in, [g](double v) { return v * g; });
}

inline PixelImage fog(const PixelImage& in, const DatamorphismSpec& s) {
  const double f = s.param("density"), color = s.param("color");
  return map_values(in, [f, color](double v) { return v * (1.0 - f) + color * f; });
}

inline PixelImage flare(const PixelImage& in, const DatamorphismSpec& s, std::uint64_t seed) {
  Rng rng(seed);
  const double cx = rng.uniform(0.0, in.width);
  const double cy = rng.uniform(0.0, in.height / 2.0);
  const double radius = s.param("radius") * std::min(in.width, in.height);
  const double peak = s.param("intensity");
  PixelImage out = in;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (d >= radius) continue;
      const double add = peak * (1.0 - d / radius);
      auto* p = out.at(x, y);
      for (int c = 0; c < 3; ++c) p[c] = to_byte(p[c] + add);
    }
  return out;
}

inline PixelImage rain(const PixelImage& in, const DatamorphismSpec& s, std::uint64_t seed) {
  Rng rng(seed);
  const auto count = static_cast<long>(
      std::round(s.param("density") * in.width * in.height));
  const double opacity = s.param("opacity"), color = s.param("color");
  PixelImage out = in;
  std::vector<std::pair<int, int>> pts;
  for (long i = 0; i < count; ++i) {
    const double x0 = rng.uniform(0.0, in.width);
    const double y0 = rng.uniform(0.0, in.height);
    const double len = rng.uniform(s.param("length_min"), s.param("length_max"));
    const double ang = rng.uniform(s.param("angle_min"), s.param("angle_max")) *
                       std::numbers::pi / 180.0;
    const double dx = std::cos(ang), dy = std::sin(ang);
    pts.clear();
    for (int t = 0; t <= static_cast<int>(len); ++t) {
      const int px = static_cast<int>(std::floor(x0 + t * dx));
      const int py = static_cast<int>(std::floor(y0 + t * dy));
      if (px < 0 || py < 0 || px >= in.width || py >= in.height) continue;
      if (!pts.empty() && pts.back() == std::make_pair(px, py)) continue;
      pts.emplace_back(px, py);
    }
    for (auto [px, py] : pts) {
      auto* p = out.at(px, py);
      for (int c = 0; c < 3; ++c) p[c] = to_byte(p[c] * (1.0 - opacity) + color * opacity);
    }
  }
  return out;
}

inline PixelImage speed(const PixelImage& in, const DatamorphismSpec& s) {
  const int len = static_cast<int>(std::round(s.param("length")));
  const int left = len / 2;
  PixelImage out(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int k = 0; k < len; ++k) {
          const int xx = std::clamp(x - left + k, 0, in.width - 1);
          sum += in.at(xx, y)[c];
        }
        out.at(x, y)[c] = to_byte(static_cast<double>(sum) / len);
      }
  return out;
}

inline PixelImage water(const PixelImage& in, const DatamorphismSpec& s, std::uint64_t seed) {
  PixelImage base = to_image(in.width, in.height, gaussian_blur(in, s.param("sigma")));
  const auto drops = static_cast<int>(std::round(s.param("drops")));
  if (drops == 0) return base;
  Rng rng(seed);
  std::vector<bool> mask(static_cast<std::size_t>(in.width) * static_cast<std::size_t>(in.height));
  for (int i = 0; i < drops; ++i) {
    const double cx = rng.uniform(0.0, in.width);
    const double cy = rng.uniform(0.0, in.height);
    const double r = rng.uniform(s.param("radius_min"), s.param("radius_max"));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(in.width - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(in.height - 1, static_cast<int>(std::ceil(cy + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= r * r)
          mask[static_cast<std::size_t>(y) * static_cast<std::size_t>(in.width) +
               static_cast<std::size_t>(x)] = true;
      }
  }
  const auto drop_blur = gaussian_blur(base, s.param("drop_sigma"));
  const double brighten = s.param("brighten");
  PixelImage out = base;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = to_byte(drop_blur[i * 3 + c] + brighten);
  }
  return out;
}

}  // namespace kernels

struct OrangeConeParams {
  double blue_hue_min = 190.0;
  double blue_hue_max = 260.0;
  double min_saturation = 0.25;
  double target_hue_min = 20.0;
  double target_hue_max = 35.0;
};

// Pixel (px, py) belongs to a box when its centre lies in the half-open
// rectangle [x*W, (x+w)*W) x [y*H, (y+h)*H).
inline bool pixel_in_box(const BBox& b, int px, int py, int width, int height) {
  const double cx = px + 0.5, cy = py + 0.5;
  return cx >= b.x * width && cx < (b.x + b.w) * width && cy >= b.y * height &&
         cy < (b.y + b.h) * height;
}

// The orangecone kernel: inside the given boxes, pixels whose hue lies in the
// blue band (and are saturated enough) get their hue mapped linearly onto
// the orange band. Saturation and value are kept.
inline PixelImage recolor_blue_to_orange(const PixelImage& in, std::span<const BBox> blue_boxes,
                                         const OrangeConeParams& p = {}) {
  PixelImage out = in;
  const double band = p.blue_hue_max - p.blue_hue_min;
  for (const auto& b : blue_boxes) {
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x * in.width)));
    const int x1 = std::min(in.width - 1, static_cast<int>(std::ceil((b.x + b.w) * in.width)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y * in.height)));
    const int y1 = std::min(in.height - 1, static_cast<int>(std::ceil((b.y + b.h) * in.height)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!pixel_in_box(b, x, y, in.width, in.height)) continue;
        // Read from the input so overlapping boxes recolour a pixel once.
        const auto* src = in.at(x, y);
        Hsv c = rgb_to_hsv(src[0], src[1], src[2]);
        if (c.s < p.min_saturation || c.h < p.blue_hue_min || c.h > p.blue_hue_max) continue;
        const double t = band > 0 ? (c.h - p.blue_hue_min) / band : 0.0;
        c.h = p.target_hue_min + t * (p.target_hue_max - p.target_hue_min);
        const auto rgb = hsv_to_rgb(c);
        auto* dst = out.at(x, y);
        dst[0] = rgb[0];
        dst[1] = rgb[1];
        dst[2] = rgb[2];
      }
  }
  return out;
}

struct MorphedImage {
  PixelImage image;
  std::vector<Annotation> annotations;
};

inline MorphedImage apply_datamorphism(const DatamorphismSpec& spec, const PixelImage& image,
                                       const std::vector<Annotation>& annotations,
                                       std::uint64_t case_seed) {
  validate_spec(spec);
  if (!image.valid()) throw Error("invalid input image");
  MorphedImage out{{}, annotations};
  const auto& n = spec.name;
  if (n == "bright") {
    out.image = kernels::bright(image, spec);
  } else if (n == "dark") {
    out.image = kernels::dark(image, spec);
  } else if (n == "flare") {
    out.image = kernels::flare(image, spec, case_seed);
  } else if (n == "fog") {
    out.image = kernels::fog(image, spec);
  } else if (n == "rain") {
    out.image = kernels::rain(image, spec, case_seed);
  } else if (n == "speed") {
    out.image = kernels::speed(image, spec);
  } else if (n == "water") {
    out.image = kernels::water(image, spec, case_seed);
  } else if (n == "orangecone") {
    std::vector<BBox> boxes;
    for (const auto& a : annotations)
      if (a.cls == kBlueClass) boxes.push_back(a.box);
    const OrangeConeParams p{spec.param("blue_hue_min"), spec.param("blue_hue_max"),
                             spec.param("min_saturation"), spec.param("target_hue_min"),
                             spec.param("target_hue_max")};
    out.image = recolor_blue_to_orange(image, boxes, p);
  } else {
    throw Error("unknown datamorphism \"" + n + "\"");
  }
  return out;
}

struct MutantRecord {
  PixelImage image;
  std::vector<Annotation> annotations;
  Provenance provenance;
  std::uint64_t case_seed = 0;
};

// Left-to-right application; step i is seeded from (case_seed, i).
inline MutantRecord compose_chain(const DatamorphChain& chain, const PixelImage& image,
                                  const std::vector<Annotation>& annotations,
                                  std::uint64_t case_seed, std::string_view seed_id) {
  if (chain.empty()) throw Error("a datamorphism chain needs at least one operator");
  MorphedImage cur{image, annotations};
  for (std::size_t i = 0; i < chain.size(); ++i)
    cur = apply_datamorphism(chain[i], cur.image, cur.annotations, step_seed(case_seed, i));
  return {std::move(cur.image), std::move(cur.annotations),
          Provenance::mutant(std::string(seed_id), chain_names(chain)), case_seed};
}

// Parses "name" or "name:key=value,key=value".
inline DatamorphismSpec parse_operator(std::string_view text) {
  DatamorphismSpec spec;
  const auto colon = text.find(':');
  spec.name = to_lower(text.substr(0, colon));
  operator_info(spec.name);
  if (colon != std::string_view::npos) {
    for (const auto& kv : split(text.substr(colon + 1), ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("bad operator parameter \"" + kv + "\"");
      try {
        spec.params[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
      } catch (const std::exception&) {
        throw Error("bad operator parameter \"" + kv + "\"");
      }
    }
  }
  validate_spec(spec);
  return spec;
}

}  // namespace morphcheck
