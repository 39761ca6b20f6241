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

// Acceptance run: one PASS/FAIL line per headline criterion. Exit status is
// nonzero if any criterion fails.

#include <chrono>
#include <functional>
#include <iostream>

#include "morphcheck/cli.hpp"
#include "morphcheck/toy.hpp"
#include "morphcheck/treatment.hpp"
#include "support.hpp"

#ifndef STUB_DETECTOR
#error "STUB_DETECTOR must name the stub detector executable"
#endif

using namespace morphcheck;
using namespace testing_support;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records the first failure only; later checks keep their context short.
  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

double round_away(double v) { return v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "morphcheck");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = command_dispatch(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << "  [" << args[1] << " exited " << code << "] " << e.str();
  return code;
}

ModelRunManifest perfect_run(const DatasetManifest& m) {
  ModelRunManifest run;
  run.model_id = "perfect";
  run.dataset_digest = manifest_digest(m);
  for (const auto& e : m.images) {
    PredictionRecord p{e.image.id, {}};
    for (const auto& a : e.image.annotations) p.detections.push_back({a.cls, a.box, 1.0});
    run.predictions.push_back(std::move(p));
  }
  return run;
}

// ---------------------------------------------------------------------------

Outcome ap_oracle() {
  Outcome o;
  std::mt19937_64 g(101);
  std::uniform_int_distribution<int> n_det(0, 20), n_gt(0, 10), grid(0, 10);
  std::bernoulli_distribution coin(0.5);
  const auto start = Clock::now();
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int gt = n_gt(g);
    std::vector<ScoredDetection> dets;
    std::vector<std::pair<double, bool>> plain;
    int tps = 0;
    for (int k = n_det(g); k > 0; --k) {
      const bool tp = tps < gt && coin(g);
      tps += tp;
      const double c = grid(g) / 10.0;
      dets.push_back({c, tp});
      plain.push_back({c, tp});
    }
    const auto got = average_precision(dets, static_cast<std::size_t>(gt)).ap;
    const auto want = oracle_ap(plain, static_cast<std::size_t>(gt));
    o.require(got.has_value() == want.has_value(), "definedness differs on instance " + std::to_string(trial));
    if (got && want) worst = std::max(worst, std::fabs(*got - *want));
  }
  const double elapsed = seconds_since(start);
  o.require(worst <= 1e-9, "max |AP - oracle| = " + std::to_string(worst));
  o.require(elapsed < 10.0, "took " + fmt(elapsed) + " s");
  if (o.pass) o.detail = "1000 instances, max error " + std::to_string(worst) + ", " + fmt(elapsed, 3) + " s";
  return o;
}

Outcome metric_sanity() {
  Outcome o;
  std::mt19937_64 g(102);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_scenario(g, 15);
    for (auto& e : s.manifest.images)
      for (auto& a : e.image.annotations) a.recognizable = true;
    const auto perfect = evaluate_report(perfect_run(s.manifest), s.manifest, {});
    if (!perfect.overall.map) continue;
    ++checked;
    o.require(perfect.overall.precision == 1.0 && perfect.overall.recall == 1.0 && perfect.overall.map == 1.0,
              "perfect detector below 100% on trial " + std::to_string(trial));
    ModelRunManifest none = perfect_run(s.manifest);
    for (auto& p : none.predictions) p.detections.clear();
    const auto empty = evaluate_report(none, s.manifest, {});
    o.require(empty.overall.recall == 0.0 && empty.overall.map == 0.0,
              "empty detector above 0 on trial " + std::to_string(trial));
  }
  if (o.pass) o.detail = std::to_string(checked) + " scenarios: perfect = 100%, empty = 0%";
  return o;
}

Outcome ranking_invariance() {
  Outcome o;
  std::mt19937_64 g(103);
  double (*maps[])(double) = {[](double c) { return c * c; }, [](double c) { return (c + 1) / 2; },
                              [](double c) { return 1 / (1 + std::exp(-10 * (c - 0.5))); }};
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_scenario(g, 12);
    const auto base = report_to_json(evaluate_report(s.run, s.manifest, {}));
    for (auto* f : maps) {
      auto run = s.run;
      for (auto& p : run.predictions)
        for (auto& d : p.detections) d.confidence = f(d.confidence);
      o.require(report_to_json(evaluate_report(run, s.manifest, {})) == base,
                "report changed on instance " + std::to_string(trial));
    }
  }
  if (o.pass) o.detail = "200 instances x 3 increasing maps, reports identical";
  return o;
}

Outcome datamorph_determinism() {
  Outcome o;
  std::mt19937_64 g(104);
  auto random_image = [&](int w, int h) {
    PixelImage img(w, h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(g());
    return img;
  };
  std::vector<Annotation> anns;
  for (int k = 0; k < 4; ++k) anns.push_back({k % 2 ? "blue" : "yellow", random_box(g), true});
  const std::vector<PixelImage> inputs = {PixelImage::filled(48, 36, 0, 0, 0),
                                          PixelImage::filled(48, 36, 255, 255, 255), random_image(48, 36)};
  std::vector<std::uint64_t> seeds(20);
  for (auto& s : seeds) s = g();
  int applications = 0;
  for (const auto& info : operator_registry())
    for (const std::uint64_t seed : seeds)
      for (const auto& img : inputs) {
        const auto x = apply_datamorphism({info.name, {}}, img, anns, seed);
        const auto y = apply_datamorphism({info.name, {}}, img, anns, seed);
        applications += 2;
        o.require(x.image.pixels == y.image.pixels, info.name + " not deterministic for seed " + std::to_string(seed));
        o.require(x.image.width == img.width && x.image.height == img.height && x.image.valid(),
                  info.name + " changed dimensions");
        o.require(x.annotations == anns, info.name + " changed annotations");
      }
  // orangecone locality: pixel centres outside every blue box are untouched.
  for (int trial = 0; trial < 50; ++trial) {
    auto img = random_image(60, 40);
    for (int y = 0; y < img.height; y += 2)
      for (int x = 0; x < img.width; x += 3) {
        auto* p = img.at(x, y);
        p[0] = 20;
        p[1] = 40;
        p[2] = 230;
      }
    std::vector<Annotation> boxes = {{"blue", random_box(g), true}, {"yellow", random_box(g), true}};
    const auto out = apply_datamorphism({"orangecone", {}}, img, boxes, 0).image;
    const auto& b = boxes[0].box;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        const bool inside = cx >= b.x * img.width && cx < (b.x + b.w) * img.width && cy >= b.y * img.height &&
                            cy < (b.y + b.h) * img.height;
        if (!inside)
          o.require(std::equal(img.at(x, y), img.at(x, y) + 3, out.at(x, y)),
                    "orangecone changed a pixel outside blue boxes");
      }
  }
  if (o.pass)
    o.detail = "8 operators x 20 seeds x 3 images (" + std::to_string(applications) +
               " applications); orangecone local on 50 scenes";
  return o;
}

Outcome pixel_formulas() {
  Outcome o;
  auto uniform_after = [](const DatamorphChain& chain, std::uint8_t v) {
    return static_cast<int>(compose_chain(chain, PixelImage::filled(4, 4, v, v, v), {}, 1, "s").image.pixels[0]);
  };
  const int dark200 = uniform_after({{"dark", {}}}, 200);
  const int fog100 = uniform_after({{"fog", {}}}, 100);
  const int dark_fog = uniform_after({{"dark", {}}, {"fog", {}}}, 200);
  const int fog_dark = uniform_after({{"fog", {}}, {"dark", {}}}, 200);
  // Hand composition of the per-pixel formulas with Table coefficients.
  const int want_fog_dark = static_cast<int>(round_away(round_away(200 * 0.6 + 220 * 0.4) * 0.4));
  o.require(dark200 == 80, "dark(200) = " + std::to_string(dark200));
  o.require(fog100 == 148, "fog(100) = " + std::to_string(fog100));
  o.require(dark_fog == 136, "[dark,fog](200) = " + std::to_string(dark_fog));
  o.require(fog_dark == want_fog_dark, "[fog,dark](200) = " + std::to_string(fog_dark));
  o.require(fog_dark != dark_fog, "chains commute");
  o.detail = "dark(200)=" + std::to_string(dark200) + " fog(100)=" + std::to_string(fog100) +
             " [dark,fog](200)=" + std::to_string(dark_fog) + " [fog,dark](200)=" + std::to_string(fog_dark) +
             " (hand composition round(round(200*0.6+88)*0.4) = " + std::to_string(want_fog_dark) +
             "; the criterion's literal 82 is an arithmetic slip)";
  return o;
}

Outcome coverage_law() {
  Outcome o;
  const auto names = operator_registry();
  int plans = 0;
  for (int n = 1; n <= 3; ++n)
    for (int m = 1; m <= 5; ++m) {
      DatasetManifest seeds;
      seeds.class_set = {"blue"};
      for (int i = 0; i < n; ++i) seeds.images.push_back({image("s" + std::to_string(i)), Provenance::original()});
      std::vector<DatamorphismSpec> ops;
      for (int i = 0; i < m; ++i) ops.push_back({names[static_cast<std::size_t>(i)].name, {}});
      std::vector<std::pair<CoverageCriterion, int>> crits = {{CoverageCriterion::first_order(), 1}};
      for (int k = 2; k <= m + 1; ++k) crits.push_back({CoverageCriterion::kth_order(k), k - 1});
      for (int j = 1; j <= m; ++j) crits.push_back({CoverageCriterion::combination_complete(j), j});
      for (const auto& [crit, len] : crits) {
        const auto plan = plan_mutants(seeds, ops, crit);
        ++plans;
        const auto want = static_cast<std::size_t>(n) * oracle_subset_count(m, len);
        o.require(plan.entries.size() == want, "n=" + std::to_string(n) + " m=" + std::to_string(m) + " " +
                                                   crit.to_string() + ": " + std::to_string(plan.entries.size()) +
                                                   " != " + std::to_string(want));
        DatasetManifest generated;
        generated.class_set = {"blue"};
        for (const auto& e : plan.entries)
          generated.images.push_back({image(mutant_id(e)), e.chain.empty() ? Provenance::original()
                                                                           : Provenance::mutant(e.seed_id, e.chain)});
        const auto rep = measure_coverage(generated, plan.operator_set(), crit);
        o.require(rep.satisfied && rep.ratio == 1.0, "generated plan not satisfied for " + crit.to_string());
      }
    }
  if (o.pass) o.detail = std::to_string(plans) + " plans match subset enumeration; all measure 1.0";
  return o;
}

Outcome treatment_counts() {
  Outcome o;
  DatasetManifest train;
  train.class_set = {"yellow", "blue", "orange"};
  for (int i = 0; i < 1000; ++i) train.images.push_back({image("t" + std::to_string(i)), Provenance::original()});
  const MixtureSpec spec{0.30, 0.10, {{"orangecone", {}}}, 17, false};
  const auto plan = plan_treatment(train, spec, "M0");
  o.require(plan.counts.synthetic == 300 && plan.counts.rehearsal == 100,
            "counts " + std::to_string(plan.counts.synthetic) + "+" + std::to_string(plan.counts.rehearsal));
  o.require(plan_to_json(plan) == plan_to_json(plan_treatment(train, spec, "M0")), "plan not deterministic");

  SweepSpec ss;
  ss.target = {{"orangecone", {}}};
  ss.master_seed = 17;
  const auto plans = sweep(train, ss, "M0");
  for (const auto& p : plans) o.require(p.rehearsal_ids == plans[0].rehearsal_ids, p.label + " rehearsal differs");

  // Materialized manifests are byte-identical under the same seed.
  TempDir dir;
  toy::ToyCorpusOptions opt;
  opt.count = 20;
  const auto corpus = toy::make_corpus(dir / "train", opt);
  std::size_t entries = 0;
  for (const char* name : {"a", "b"}) {
    auto p = plan_treatment(corpus, {0.30, 0.10, {{"orangecone", {}}}, 17, false}, "M0");
    entries = materialize_treatment(p, corpus, dir / name).size();
  }
  const auto ta = tree_contents(dir / "a"), tb = tree_contents(dir / "b");
  // plan.json records its own output path, which differs by directory.
  auto strip = [](auto t) {
    t.erase("plan.json");
    return t;
  };
  o.require(strip(ta) == strip(tb), "materialized treatment differs between runs");
  o.require(entries == 6 + 2, "toy treatment has " + std::to_string(entries) + " entries");
  if (o.pass)
    o.detail = "N=1000 p=0.30 r=0.10 -> 300+100; " + std::to_string(plans.size()) +
               " sweep plans share rehearsal ids; plans and outputs reproducible";
  return o;
}

Outcome toy_cycle() {
  Outcome o;
  const auto start = Clock::now();
  TempDir ws;
  const std::string root = ws.path().string();
  const std::string stub = STUB_DETECTOR;
  const std::string testset = root + "/testset/manifest.json";
  std::string out;

  o.require(cli({"toy", "--out", root + "/seeds", "--count", "60", "--seed", "1"}) == 0, "toy failed");
  o.require(cli({"--jobs", "2", "mutate", "--in", root + "/seeds/manifest.json", "--out", root + "/testset",
                 "--criterion", "first", "--seed", "7"}) == 0,
            "mutate failed");
  if (!o.pass) return o;
  for (const char* variant : {"orange-blind", "orange-aware", "speed-degraded"}) {
    const std::string id = variant;
    o.require(cli({"run", "--model-id", id, "--cmd", stub + " --variant " + id + " {image} {out}", "--in", testset,
                   "--out", root + "/runs/" + id, "--jobs", "2"}) == 0,
              "run " + id + " failed");
    o.require(cli({"eval", "--run", root + "/runs/" + id, "--in", testset, "--out",
                   root + "/reports/" + id + ".json"}) == 0,
              "eval " + id + " failed");
  }
  if (!o.pass) return o;

  // (1) per-class weakness
  const auto blind = report_from_json(read_json_file(root + "/reports/orange-blind.json"));
  const double overall = *blind.overall.map * 100, orange = *blind.overall.find_class("orange")->ap * 100;
  o.require(orange <= overall - 30, "orange AP " + fmt(orange) + " vs overall " + fmt(overall));

  // (2) diagnosis
  o.require(cli({"diagnose", "--run", root + "/runs/orange-blind", "--in", testset, "--suspects", "class:orange",
                 "--delta", "5", "--bootstrap", "1000", "--seed", "7", "--out", root + "/reports/diag.json"}) == 0,
            "diagnose failed");
  const auto diag = read_json_file(root + "/reports/diag.json");
  o.require(diag["suspects"][0]["verdict"] == "confirmed", "class:orange not confirmed");

  // (3) treatment plan
  o.require(cli({"toy", "--out", root + "/train", "--count", "60", "--seed", "2"}) == 0, "toy train failed");
  o.require(cli({"plan", "--train", root + "/train/manifest.json", "--target", "orangecone", "--p", "0.3", "--r",
                 "0.1", "--base", "orange-blind", "--seed", "7", "--out", root + "/treatment"}) == 0,
            "plan failed");
  std::size_t synthetic = 0, rehearsal = 0;
  if (o.pass) {
    for (const auto& e : load_manifest(root + "/treatment/manifest.json").images) {
      if (e.provenance.chain == std::vector<std::string>{"orangecone"})
        ++synthetic;
      else if (e.provenance.is_seed())
        ++rehearsal;
    }
    o.require(synthetic == 18 && rehearsal == 6,
              "treatment manifest " + std::to_string(synthetic) + "+" + std::to_string(rehearsal));
  }

  // (4) comparisons
  o.require(cli({"compare", "--a", root + "/reports/orange-blind.json", "--b", root + "/reports/orange-aware.json",
                 "--treated", "class:orange", "--epsilon", "1.0", "--out", root + "/reports/cmp-aware.json"}) == 0,
            "compare aware failed");
  o.require(cli({"compare", "--a", root + "/reports/orange-blind.json", "--b", root + "/reports/speed-degraded.json",
                 "--treated", "class:orange", "--epsilon", "1.0", "--out", root + "/reports/cmp-degraded.json"}) == 0,
            "compare degraded failed");
  if (!o.pass) return o;
  const auto aware = comparison_from_json(read_json_file(root + "/reports/cmp-aware.json"));
  const auto degraded = comparison_from_json(read_json_file(root + "/reports/cmp-degraded.json"));
  double orange_delta = 0;
  for (const auto& d : aware.classes)
    if (d.name == "orange") orange_delta = d.delta_points.value_or(0);
  o.require(orange_delta > 0, "orange delta " + fmt(orange_delta));
  o.require(aware.forgetting.empty(), "orange-aware raised " + std::to_string(aware.forgetting.size()) + " flags");
  o.require(degraded.forgetting == std::vector<std::string>{"speed"},
            "degraded flags: " + join(degraded.forgetting, ","));
  const double elapsed = seconds_since(start);
  o.require(elapsed < 120, "took " + fmt(elapsed) + " s");
  if (o.pass)
    o.detail = "orange AP " + fmt(orange) + " vs overall " + fmt(overall) + "; class:orange confirmed; plan " +
               std::to_string(synthetic) + "+" + std::to_string(rehearsal) + "; orange +" + fmt(orange_delta) +
               " pts, 0 flags; degraded flags [speed]; " + fmt(elapsed, 1) + " s";
  return o;
}

Outcome bootstrap_convergence() {
  Outcome o;
  TempDir dir;
  toy::ToyCorpusOptions opt;
  opt.count = 60;
  const auto seeds = toy::make_corpus(dir / "seeds", opt);
  std::vector<DatamorphismSpec> ops;
  for (const auto& n : weather_operator_names()) ops.push_back({n, {}});
  const auto testset =
      materialize_plan(plan_mutants(seeds, ops, CoverageCriterion::first_order()), seeds, 7, dir / "testset", 2);
  ModelRunManifest run;
  // The degraded variant misses every motion-blurred frame, which gives the
  // interval real width.
  run.model_id = "speed-degraded";
  run.dataset_digest = manifest_digest(testset);
  for (const auto& e : testset.images)
    run.predictions.push_back(
        {e.image.id, toy::detect(read_image(testset.resolve(e.image)), toy::DetectorVariant::kSpeedDegraded)});

  DiagnosisConfig cfg;
  cfg.seed = 7;
  cfg.jobs = 2;
  cfg.bootstrap = 1000;
  const auto a = bootstrap_ci(run, testset, "overall", cfg);
  const auto a_again = bootstrap_ci(run, testset, "overall", cfg);
  cfg.jobs = 1;
  const auto a_serial = bootstrap_ci(run, testset, "overall", cfg);
  o.require(a.low == a_again.low && a.high == a_again.high && a.low == a_serial.low && a.high == a_serial.high,
            "fixed-seed interval not reproducible");
  cfg.bootstrap = 100000;
  cfg.jobs = 2;
  const auto big = bootstrap_ci(run, testset, "overall", cfg);
  const double dlo = std::fabs(a.low - big.low) * 100, dhi = std::fabs(a.high - big.high) * 100;
  o.require(dlo <= 1.0 && dhi <= 1.0, "endpoints moved " + fmt(dlo, 3) + " / " + fmt(dhi, 3) + " points");
  o.detail = "overall mAP " + fmt(*a.point * 100) + "%: B=1000 [" + fmt(a.low * 100, 3) + ", " +
             fmt(a.high * 100, 3) + "] vs B=100000 [" + fmt(big.low * 100, 3) + ", " + fmt(big.high * 100, 3) +
             "]; reproducible under a fixed seed";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AP oracle equivalence", ap_oracle},
      {"Metric sanity", metric_sanity},
      {"Ranking invariance", ranking_invariance},
      {"Datamorph determinism", datamorph_determinism},
      {"Pixel-formula spot checks", pixel_formulas},
      {"Coverage counting law", coverage_law},
      {"Treatment counts", treatment_counts},
      {"End-to-end toy cycle", toy_cycle},
      {"Bootstrap determinism and convergence", bootstrap_convergence},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
