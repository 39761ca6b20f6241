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

#include <gtest/gtest.h>

#include <numeric>

#include "morphcheck/dataset.hpp"
#include "morphcheck/image.hpp"
#include "morphcheck/triage.hpp"
#include "support.hpp"

using namespace morphcheck;
using namespace testing_support;

// ---------------------------------------------------------------------------
// common

TEST(Common, ToByteRoundsHalfAwayFromZeroAndClamps) {
  EXPECT_EQ(to_byte(83.5), 84);
  EXPECT_EQ(to_byte(83.49), 83);
  EXPECT_EQ(to_byte(-3.0), 0);
  EXPECT_EQ(to_byte(300.0), 255);
  EXPECT_EQ(to_byte(254.5), 255);
  EXPECT_EQ(to_byte(0.5), 1);
}

TEST(Common, RngIsDeterministicPerSeed) {
  Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> va, vb, vc;
  for (int i = 0; i < 100; ++i) {
    va.push_back(a.next());
    vb.push_back(b.next());
    vc.push_back(c.next());
  }
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(Common, RngBelowStaysInRangeAndCoversIt) {
  Rng r(7);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Common, RngUniformInHalfOpenUnitInterval) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Common, ShuffleIsAPermutation) {
  Rng r(11);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(std::span<int>(w));
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(Common, StreamSeedsDifferByName) {
  EXPECT_NE(stream_seed(5, "synthetic"), stream_seed(5, "rehearsal"));
  EXPECT_EQ(stream_seed(5, "synthetic"), stream_seed(5, "synthetic"));
  EXPECT_NE(stream_seed(5, "synthetic"), stream_seed(6, "synthetic"));
}

TEST(Common, SplitJoinRoundTrip) {
  EXPECT_EQ(split("a,b,,c", ','), (std::vector<std::string>{"a", "b", "", "c"}));
  EXPECT_EQ(join({"a", "b", "c"}, "+"), "a+b+c");
  EXPECT_EQ(to_lower("FoG"), "fog");
}

TEST(Common, ParallelForRunsEveryIndexAndRethrowsLowestFailure) {
  std::vector<int> seen(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { seen[i] += 1; });
  EXPECT_EQ(std::accumulate(seen.begin(), seen.end(), 0), 100);
  try {
    parallel_for(100, 4, [&](std::size_t i) {
      if (i == 17 || i == 60) throw Error("fail " + std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "fail 17");
  }
}

// ---------------------------------------------------------------------------
// dataset

namespace {

DatasetManifest small_manifest() {
  DatasetManifest m;
  m.class_set = {"yellow", "blue", "orange"};
  m.images.push_back({image("a", {ann("yellow", 0.1, 0.1, 0.2, 0.2), ann("blue", 0.5, 0.5, 0.2, 0.3)}),
                      Provenance::original()});
  m.images.push_back({image("b", {ann("orange", 0.0, 0.0, 1.0, 1.0, false)}), Provenance::original()});
  m.images.push_back({image("b__fog", {ann("orange", 0.0, 0.0, 1.0, 1.0)}), Provenance::mutant("b", {"fog"})});
  return m;
}

DatasetManifest random_manifest(std::mt19937_64& g, int n) {
  DatasetManifest m;
  m.class_set = {"yellow", "blue", "orange", "big"};
  std::uniform_int_distribution<int> k(0, 6), c(0, 3), chain(0, 2);
  std::bernoulli_distribution recog(0.85);
  for (int i = 0; i < n; ++i) {
    ImageRecord rec = image("im" + std::to_string(i));
    rec.width = 640;
    rec.height = 480;
    for (int j = k(g); j > 0; --j)
      rec.annotations.push_back({m.class_set[static_cast<std::size_t>(c(g))], random_box(g), recog(g)});
    const int ch = chain(g);
    Provenance p = ch == 0 ? Provenance::original()
                           : Provenance::mutant("im0", ch == 1 ? std::vector<std::string>{"rain"}
                                                               : std::vector<std::string>{"dark", "fog"});
    m.images.push_back({std::move(rec), std::move(p)});
  }
  m.master_seed = 99;
  return m;
}

}  // namespace

TEST(Dataset, ValidManifestHasNoProblems) { EXPECT_TRUE(manifest_problems(small_manifest()).empty()); }

TEST(Dataset, ValidationCollectsEveryProblem) {
  auto m = small_manifest();
  m.images[0].image.annotations.push_back(ann("purple", 0.1, 0.1, 0.1, 0.1));
  m.images[0].image.annotations.push_back(ann("yellow", 0.9, 0.1, 0.2, 0.1));
  m.images.push_back(m.images[1]);
  const auto problems = manifest_problems(m);
  ASSERT_EQ(problems.size(), 3u);
  EXPECT_NE(problems[0].find("unknown class \"purple\""), std::string::npos);
  EXPECT_NE(problems[1].find("x+w > 1"), std::string::npos);
  EXPECT_NE(problems[2].find("duplicate id \"b\""), std::string::npos);
  try {
    validate_manifest(m);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.problems(), problems);
  }
}

TEST(Dataset, BoxEdgeWithinSlackIsAccepted) {
  auto m = small_manifest();
  m.images[0].image.annotations[0].box = {0.7, 0.0, 0.3 + 5e-10, 1.0};
  EXPECT_TRUE(manifest_problems(m).empty());
}

TEST(Dataset, ProvenanceMustBeConsistent) {
  auto m = small_manifest();
  m.images[2].provenance.scenario = "rain";
  m.images[1].provenance.seed_id = "a";
  EXPECT_EQ(manifest_problems(m).size(), 2u);
}

TEST(Dataset, JsonRoundTripPreservesEverything) {
  const auto m = small_manifest();
  const auto back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back, m);
  const auto j = manifest_to_json(m);
  EXPECT_EQ(j["version"], "1");
  EXPECT_EQ(j["images"][0]["annotations"][0]["box"], json::array({0.1, 0.1, 0.2, 0.2}));
  EXPECT_EQ(j["images"][2]["provenance"]["scenario"], "fog");
}

TEST(Dataset, ReloadPreservesClassStatsOnRandomManifests) {
  std::mt19937_64 g(2024);
  TempDir dir;
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_manifest(g, 520);
    save_manifest(m, dir / "m.json");
    const auto back = load_manifest(dir / "m.json");
    EXPECT_EQ(back, m);
    EXPECT_EQ(class_stats(back), class_stats(m));
    EXPECT_EQ(manifest_digest(back), manifest_digest(m));
  }
}

TEST(Dataset, ClassStatsCountsRecognizableOnly) {
  const auto s = class_stats(small_manifest());
  EXPECT_EQ(s.count("yellow"), 1u);
  EXPECT_EQ(s.count("blue"), 1u);
  EXPECT_EQ(s.count("orange"), 1u);
  EXPECT_EQ(s.total, 3u);
}

TEST(Dataset, LoadRejectsMalformedJson) {
  TempDir dir;
  std::ofstream(dir / "bad.json") << "{\"version\": \"1\", \"class_set\": [";
  EXPECT_THROW(load_manifest(dir / "bad.json"), ParseError);
  EXPECT_THROW(load_manifest(dir / "missing.json"), IoError);
}

TEST(Dataset, SampleFractionCountsAndDeterminism) {
  std::mt19937_64 g(5);
  const auto m = random_manifest(g, 1000);
  for (double f : {0.1, 0.3, 0.5, 1.0}) {
    const auto s = sample_fraction(m, f, 77);
    EXPECT_EQ(s.size(), static_cast<std::size_t>(std::floor(f * 1000 + 1e-9)));
    EXPECT_EQ(s, sample_fraction(m, f, 77));
    std::set<std::string> ids;
    for (const auto& e : s.images) ids.insert(e.image.id);
    EXPECT_EQ(ids.size(), s.size());
  }
  EXPECT_NE(sample_fraction(m, 0.1, 77), sample_fraction(m, 0.1, 78));
  // 0.29 * 100 evaluates to 28.999999999999996; the count is still 29.
  DatasetManifest hundred = m;
  hundred.images.resize(100);
  EXPECT_EQ(sample_fraction(hundred, 0.29, 1).size(), 29u);
}

TEST(Dataset, SampleFractionIndependentOfInputOrder) {
  std::mt19937_64 g(6);
  auto m = random_manifest(g, 200);
  auto reversed = m;
  std::reverse(reversed.images.begin(), reversed.images.end());
  EXPECT_EQ(sample_fraction(m, 0.2, 3), sample_fraction(reversed, 0.2, 3));
}

TEST(Dataset, SamplesOfDifferentSizesAreNested) {
  std::mt19937_64 g(8);
  const auto m = random_manifest(g, 300);
  const auto small = sample_fraction(m, 0.1, 9), large = sample_fraction(m, 0.5, 9);
  for (std::size_t i = 0; i < small.size(); ++i) EXPECT_EQ(small.images[i].image.id, large.images[i].image.id);
}

TEST(Dataset, SampleFractionErrors) {
  std::mt19937_64 g(1);
  const auto m = random_manifest(g, 5);
  EXPECT_THROW(sample_fraction(m, 0.1, 1), Error);  // floor(0.5) = 0
  EXPECT_THROW(sample_fraction(m, 0.0, 1), Error);
  EXPECT_THROW(sample_fraction(m, 1.5, 1), Error);
  EXPECT_THROW(sample_fraction(m, 0.8, 1, {"im0", "im1"}), Error);
}

TEST(Dataset, SampleFractionHonoursExclusions) {
  std::mt19937_64 g(2);
  const auto m = random_manifest(g, 100);
  std::set<std::string> exclude;
  for (int i = 0; i < 50; ++i) exclude.insert("im" + std::to_string(i));
  const auto s = sample_fraction(m, 0.3, 4, exclude);
  EXPECT_EQ(s.size(), 30u);
  for (const auto& e : s.images) EXPECT_FALSE(exclude.count(e.image.id));
}

TEST(Dataset, MergeChecksClassSetsAndIds) {
  const auto a = small_manifest();
  auto b = small_manifest();
  EXPECT_THROW(merge_manifests({}), Error);
  EXPECT_THROW(merge_manifests({a, b}), Error);  // id collision
  b.class_set.push_back("extra");
  EXPECT_THROW(merge_manifests({a, b}), Error);
  auto c = a;
  for (auto& e : c.images) e.image.id += "_c";
  for (auto& e : c.images)
    if (e.provenance.seed_id) *e.provenance.seed_id += "_c";
  const auto merged = merge_manifests({a, c});
  EXPECT_EQ(merged.size(), 6u);
  EXPECT_TRUE(manifest_problems(merged).empty());
}

TEST(Dataset, MergeRebasesPathsAcrossDirectories) {
  auto a = small_manifest();
  a.base_dir = "/data/a";
  auto b = small_manifest();
  b.base_dir = "/data/b";
  for (auto& e : b.images) e.image.id += "_b";
  for (auto& e : b.images)
    if (e.provenance.seed_id) *e.provenance.seed_id += "_b";
  const auto merged = merge_manifests({a, b});
  EXPECT_EQ(merged.images[3].image.path, "../b/images/x.png");
  EXPECT_EQ(merged.resolve(merged.images[3].image).lexically_normal(), fs::path("/data/b/images/x.png"));
}

// ---------------------------------------------------------------------------
// triage

TEST(Triage, AddDeduplicatesOnTargetAndTag) {
  TriageFile t;
  EXPECT_TRUE(t.add({"a", std::nullopt, "suspect-class:orange", "note 1", "x", "t1"}));
  EXPECT_FALSE(t.add({"a", std::nullopt, "suspect-class:orange", "other note", "y", "t2"}));
  EXPECT_TRUE(t.add({"a", 0, "unrecognizable", "", "", ""}));
  EXPECT_TRUE(t.add({"b", std::nullopt, "suspect-scenario:fog", "", "", ""}));
  EXPECT_EQ(t.entries.size(), 3u);
  EXPECT_EQ(t.suspects(), (std::vector<std::string>{"class:orange", "fog"}));
}

TEST(Triage, TagVocabulary) {
  EXPECT_TRUE(valid_tag("ok"));
  EXPECT_TRUE(valid_tag("unrecognizable"));
  EXPECT_TRUE(valid_tag("suspect-scenario:rain"));
  EXPECT_TRUE(valid_tag("suspect-class:blue"));
  EXPECT_FALSE(valid_tag("suspect-class:"));
  EXPECT_FALSE(valid_tag("bad"));
}

TEST(Triage, JsonRoundTripAndMissingFile) {
  TempDir dir;
  TriageFile t;
  t.add({"a", 2, "unrecognizable", "fogged out", "tester", "2026-01-01T00:00:00Z"});
  t.add({"b", std::nullopt, "ok", "", "", ""});
  save_triage(t, dir / "t.json");
  EXPECT_EQ(load_triage(dir / "t.json"), t);
  EXPECT_TRUE(load_triage(dir / "none.json").entries.empty());
  std::ofstream(dir / "bad.json") << R"({"entries": [{"image_id": "a", "tag": "weird"}]})";
  EXPECT_THROW(load_triage(dir / "bad.json"), ParseError);
}

TEST(Triage, UnrecognizableMarksChangeStatsNotAnnotations) {
  const auto m = small_manifest();
  TriageFile t;
  t.add({"a", 1, "unrecognizable", "", "", ""});
  const auto f = apply_recognizability_filter(m, t);
  EXPECT_EQ(f.images[0].image.annotations.size(), 2u);
  EXPECT_FALSE(f.images[0].image.annotations[1].recognizable);
  EXPECT_EQ(class_stats(m).count("blue"), 1u);
  EXPECT_EQ(class_stats(f).count("blue"), 0u);
}

TEST(Triage, DanglingReferencesAreErrors) {
  const auto m = small_manifest();
  TriageFile t;
  t.add({"a", 5, "unrecognizable", "", "", ""});
  EXPECT_THROW(apply_recognizability_filter(m, t), Error);
  TriageFile u;
  u.add({"zzz", std::nullopt, "ok", "", "", ""});
  EXPECT_THROW(apply_recognizability_filter(m, u), Error);
}

// ---------------------------------------------------------------------------
// image

TEST(Image, PngRoundTripIsExact) {
  TempDir dir;
  std::mt19937_64 g(1);
  PixelImage img(37, 23);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(g());
  write_png(img, dir / "x.png");
  EXPECT_EQ(read_image(dir / "x.png"), img);
  write_png(img, dir / "y.png");
  EXPECT_EQ(slurp(dir / "x.png"), slurp(dir / "y.png"));
}

TEST(Image, ReadsBaselineJpeg) {
  TempDir dir;
  const fs::path path = dir / "x.jpg";
  const auto src = PixelImage::filled(16, 8, 200, 40, 90);
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    ASSERT_NE(f, nullptr);
    jpeg_compress_struct c;
    jpeg_error_mgr err;
    c.err = jpeg_std_error(&err);
    jpeg_create_compress(&c);
    jpeg_stdio_dest(&c, f);
    c.image_width = 16;
    c.image_height = 8;
    c.input_components = 3;
    c.in_color_space = JCS_RGB;
    jpeg_set_defaults(&c);
    jpeg_set_quality(&c, 100, TRUE);
    jpeg_start_compress(&c, TRUE);
    while (c.next_scanline < c.image_height) {
      JSAMPROW row = const_cast<JSAMPROW>(src.at(0, static_cast<int>(c.next_scanline)));
      jpeg_write_scanlines(&c, &row, 1);
    }
    jpeg_finish_compress(&c);
    jpeg_destroy_compress(&c);
    std::fclose(f);
  }
  const auto img = read_image(path);
  ASSERT_EQ(img.width, 16);
  ASSERT_EQ(img.height, 8);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    EXPECT_NEAR(img.pixels[i], src.pixels[i], 4) << i;
}

TEST(Image, UnknownFormatAndMissingFileAreErrors) {
  TempDir dir;
  std::ofstream(dir / "x.png") << "not an image at all";
  EXPECT_THROW(read_image(dir / "x.png"), Error);
  EXPECT_THROW(read_image(dir / "missing.png"), Error);
}
