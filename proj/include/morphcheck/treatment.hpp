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

// Retraining dataset recipes: a targeted synthetic sample (training images
// run through the treatment datamorphisms) plus an unmodified rehearsal
// sample of the original training data. Training happens elsewhere; this
// only composes and writes the dataset.

#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "morphcheck/datamorph.hpp"
#include "morphcheck/dataset.hpp"
#include "morphcheck/image.hpp"

namespace morphcheck {

// With more target operators than this, sources get one operator each,
// round-robin, instead of one mutant per operator.
inline constexpr std::size_t kMaxOperatorsPerSource = 3;

struct MixtureSpec {
  double synthetic_fraction = 0.1;
  double rehearsal_fraction = 0.1;
  std::vector<DatamorphismSpec> target;
  std::uint64_t master_seed = 0;
  bool disjoint = false;  // keep rehearsal ids out of the synthetic sources
};

inline void validate_mixture(const MixtureSpec& s) {
  if (!(s.synthetic_fraction > 0 && s.synthetic_fraction <= 1))
    throw Error("synthetic fraction must be in (0, 1]");
  if (!(s.rehearsal_fraction > 0 && s.rehearsal_fraction <= 1))
    throw Error("rehearsal fraction must be in (0, 1]");
  if (s.target.empty()) throw Error("treatment needs at least one target datamorphism");
  for (const auto& t : s.target) validate_spec(t);
}

inline constexpr const char* kOrangeClass = "orange";

// Training labels for a synthetic image. Operators never touch annotations,
// but a cone re-hued by orangecone must be learned as orange, so its blue
// labels are renamed when the class set has an orange class.
inline std::vector<Annotation> training_annotations(const DatamorphismSpec& op,
                                                    std::vector<Annotation> anns,
                                                    const std::vector<std::string>& class_set) {
  if (op.name != "orangecone" ||
      std::find(class_set.begin(), class_set.end(), kOrangeClass) == class_set.end())
    return anns;
  for (auto& a : anns)
    if (a.cls == kBlueClass) a.cls = kOrangeClass;
  return anns;
}

struct SyntheticItem {
  std::string id;
  std::string source_id;
  DatamorphismSpec op;
};

struct TreatmentCounts {
  std::size_t synthetic_sources = 0;
  std::size_t synthetic = 0;
  std::size_t rehearsal = 0;
  std::size_t total() const { return synthetic + rehearsal; }
};

struct TreatmentPlan {
  std::string label;
  MixtureSpec spec;
  std::string base_model_id;
  std::string operator_mode;  // "each" or "round-robin"
  std::size_t train_size = 0;
  std::uint64_t synthetic_seed = 0;
  std::uint64_t rehearsal_seed = 0;
  std::vector<SyntheticItem> synthetic;
  std::vector<std::string> rehearsal_ids;
  TreatmentCounts counts;
  std::string manifest_path;  // set once materialized
};

namespace detail {

inline TreatmentPlan plan_treatment_impl(const DatasetManifest& train, const MixtureSpec& spec,
                                         std::string base_model_id,
                                         const std::set<std::string>& rehearsal_exclude) {
  validate_mixture(spec);
  if (train.images.empty()) throw Error("training manifest is empty");
  TreatmentPlan plan;
  plan.label = "treatment";
  plan.spec = spec;
  plan.base_model_id = std::move(base_model_id);
  plan.train_size = train.size();
  plan.synthetic_seed = stream_seed(spec.master_seed, "synthetic");
  plan.rehearsal_seed = stream_seed(spec.master_seed, "rehearsal");

  const auto sources = sample_fraction(train, spec.synthetic_fraction, plan.synthetic_seed);
  const bool each = spec.target.size() <= kMaxOperatorsPerSource;
  plan.operator_mode = each ? "each" : "round-robin";
  for (std::size_t k = 0; k < sources.images.size(); ++k) {
    const auto& src = sources.images[k].image.id;
    if (each) {
      for (const auto& op : spec.target) plan.synthetic.push_back({src + "__" + op.name, src, op});
    } else {
      const auto& op = spec.target[k % spec.target.size()];
      plan.synthetic.push_back({src + "__" + op.name, src, op});
    }
  }
  const auto rehearsal = sample_fraction(train, spec.rehearsal_fraction, plan.rehearsal_seed,
                                         rehearsal_exclude);
  for (const auto& e : rehearsal.images) plan.rehearsal_ids.push_back(e.image.id);

  plan.counts.synthetic_sources = sources.size();
  plan.counts.synthetic = plan.synthetic.size();
  plan.counts.rehearsal = plan.rehearsal_ids.size();
  return plan;
}

inline std::set<std::string> synthetic_sources(const DatasetManifest& train, double fraction,
                                               std::uint64_t master_seed) {
  const auto sampled = sample_fraction(train, fraction, stream_seed(master_seed, "synthetic"));
  std::set<std::string> out;
  for (const auto& e : sampled.images) out.insert(e.image.id);
  return out;
}

}  // namespace detail

// Pure planning: which images are sampled and which operators they get.
inline TreatmentPlan plan_treatment(const DatasetManifest& train, const MixtureSpec& spec,
                                    std::string base_model_id) {
  validate_mixture(spec);
  std::set<std::string> exclude;
  if (spec.disjoint)
    exclude = detail::synthetic_sources(train, spec.synthetic_fraction, spec.master_seed);
  return detail::plan_treatment_impl(train, spec, std::move(base_model_id), exclude);
}

struct SweepSpec {
  std::vector<double> synthetic_fractions = {0.10, 0.20, 0.30, 0.40, 0.50};
  double rehearsal_fraction = 0.1;
  std::vector<DatamorphismSpec> target;
  std::uint64_t master_seed = 0;
  bool disjoint = false;
};

inline std::string sweep_label(double p) {
  return "M-sweep-p" + std::to_string(static_cast<long>(std::lround(p * 100.0)));
}

// One plan per synthetic fraction. The rehearsal sample comes from the same
// seed stream in every plan, so only the synthetic fraction varies.
inline std::vector<TreatmentPlan> sweep(const DatasetManifest& train, const SweepSpec& s,
                                        const std::string& base_model_id) {
  if (s.synthetic_fractions.empty()) throw Error("sweep needs at least one fraction");
  for (std::size_t i = 1; i < s.synthetic_fractions.size(); ++i)
    if (!(s.synthetic_fractions[i] > s.synthetic_fractions[i - 1]))
      throw Error("sweep fractions must be strictly increasing");
  std::set<std::string> exclude;
  // Synthetic samples are prefixes of one shuffle, so excluding the largest
  // keeps the rehearsal sample disjoint from every plan and identical across them.
  if (s.disjoint)
    exclude = detail::synthetic_sources(train, s.synthetic_fractions.back(), s.master_seed);
  std::vector<TreatmentPlan> plans;
  for (double p : s.synthetic_fractions) {
    MixtureSpec m{p, s.rehearsal_fraction, s.target, s.master_seed, s.disjoint};
    auto plan = detail::plan_treatment_impl(train, m, base_model_id, exclude);
    plan.label = sweep_label(p);
    plans.push_back(std::move(plan));
  }
  return plans;
}

// Parses "start:stop:step" (inclusive) or a comma list.
inline std::vector<double> parse_fraction_list(std::string_view text) {
  auto num = [&](const std::string& s) {
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      throw Error("bad fraction list \"" + std::string(text) + "\"");
    }
  };
  std::vector<double> out;
  if (text.find(':') != std::string_view::npos) {
    const auto parts = split(text, ':');
    if (parts.size() != 3) throw Error("range must be start:stop:step");
    const double start = num(parts[0]), stop = num(parts[1]), step = num(parts[2]);
    if (!(step > 0) || stop < start) throw Error("bad fraction range \"" + std::string(text) + "\"");
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (long i = 0; i < n; ++i) out.push_back(std::round((start + i * step) * 1e9) / 1e9);
  } else {
    for (const auto& p : split(text, ',')) out.push_back(num(p));
  }
  return out;
}

inline json plan_to_json(const TreatmentPlan& p) {
  json target = json::array();
  for (const auto& t : p.spec.target) target.push_back({{"name", t.name}, {"params", t.params}});
  json synthetic = json::array();
  for (const auto& s : p.synthetic)
    synthetic.push_back({{"id", s.id}, {"source_id", s.source_id}, {"operator", s.op.name}});
  return {{"version", "1"},
          {"label", p.label},
          {"base_model_id", p.base_model_id},
          {"synthetic_fraction", p.spec.synthetic_fraction},
          {"rehearsal_fraction", p.spec.rehearsal_fraction},
          {"disjoint", p.spec.disjoint},
          {"target", std::move(target)},
          {"operator_mode", p.operator_mode},
          {"train_size", p.train_size},
          {"seeds",
           {{"master", p.spec.master_seed},
            {"synthetic", p.synthetic_seed},
            {"rehearsal", p.rehearsal_seed}}},
          {"counts",
           {{"synthetic_sources", p.counts.synthetic_sources},
            {"synthetic", p.counts.synthetic},
            {"rehearsal", p.counts.rehearsal},
            {"total", p.counts.total()}}},
          {"synthetic", std::move(synthetic)},
          {"rehearsal_ids", p.rehearsal_ids},
          {"manifest", p.manifest_path}};
}

// Writes synthetic images, copies rehearsal images, and emits
// out_dir/manifest.json plus the plan summary out_dir/plan.json.
inline DatasetManifest materialize_treatment(TreatmentPlan& plan, const DatasetManifest& train,
                                             const fs::path& out_dir, unsigned jobs = 1) {
  fs::create_directories(out_dir / "images");
  DatasetManifest synthetic;
  synthetic.class_set = train.class_set;
  synthetic.master_seed = plan.spec.master_seed;
  synthetic.base_dir = out_dir;
  synthetic.images.resize(plan.synthetic.size());
  parallel_for(plan.synthetic.size(), jobs, [&](std::size_t i) {
    const auto& item = plan.synthetic[i];
    const auto* src = train.find(item.source_id);
    if (!src) throw Error("unknown source image \"" + item.source_id + "\"");
    const auto pixels = read_image(train.resolve(src->image));
    const std::vector<std::string> chain = {item.op.name};
    const auto seed = derive_case_seed(plan.spec.master_seed, item.source_id, chain);
    const auto morphed = apply_datamorphism(item.op, pixels, src->image.annotations, seed);
    ManifestEntry e;
    e.image = src->image;
    e.image.id = item.id;
    e.image.path = "images/" + item.id + ".png";
    e.image.annotations = training_annotations(item.op, morphed.annotations, train.class_set);
    auto full_chain = src->provenance.chain;
    full_chain.push_back(item.op.name);
    e.provenance = Provenance::mutant(src->provenance.seed_id.value_or(item.source_id), full_chain);
    write_png(morphed.image, out_dir / e.image.path);
    synthetic.images[i] = std::move(e);
  });

  DatasetManifest rehearsal = synthetic;
  rehearsal.images.clear();
  for (const auto& id : plan.rehearsal_ids) {
    const auto* src = train.find(id);
    const fs::path from = train.resolve(src->image);
    ManifestEntry e = *src;
    e.image.path = "images/" + id + from.extension().string();
    fs::copy_file(from, out_dir / e.image.path, fs::copy_options::overwrite_existing);
    rehearsal.images.push_back(std::move(e));
  }

  auto merged = merge_manifests({synthetic, rehearsal});
  validate_manifest(merged);
  save_manifest(merged, out_dir / "manifest.json");
  plan.manifest_path = (out_dir / "manifest.json").string();
  write_json_file(out_dir / "plan.json", plan_to_json(plan));
  return merged;
}

}  // namespace morphcheck
