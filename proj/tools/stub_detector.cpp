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

// Rule-based cone detector for the toy corpus, in the shape `run` expects:
//   stub_detector [--variant orange-blind|orange-aware|speed-degraded] <image> <out>
// Writes one "class confidence x y w h" line per detection.

#include <iostream>

#include "morphcheck/toy.hpp"

int main(int argc, char** argv) {
  std::string variant = "orange-aware";
  std::vector<std::string> positional;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--variant" && i + 1 < argc)
      variant = argv[++i];
    else
      positional.push_back(a);
  }
  if (positional.size() != 2) {
    std::cerr << "usage: stub_detector [--variant orange-blind|orange-aware|speed-degraded] "
                 "<image> <out>\n";
    return 2;
  }
  try {
    const auto v = morphcheck::toy::parse_variant(variant);
    const auto img = morphcheck::read_image(positional[0]);
    const auto dets = morphcheck::toy::detect(img, v);
    morphcheck::write_text_atomic(positional[1], morphcheck::format_prediction_text(dets));
  } catch (const std::exception& e) {
    std::cerr << "stub_detector: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
