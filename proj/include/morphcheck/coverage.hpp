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

// Mutant coverage criteria over a set of datamorphisms.
//
// A chain is an unordered subset of the operator set, applied in registry
// order. Every criterion includes the seeds themselves (order 0):
//   first      chains of size 0..1
//   kth:K      chains of size 0..K-1
//   combo:J    chains of size 0..J

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "morphcheck/datamorph.hpp"
#include "morphcheck/dataset.hpp"
#include "morphcheck/image.hpp"

namespace morphcheck {

struct CoverageCriterion {
  enum class Kind { kFirstOrder, kKthOrder, kCombinationComplete };

  Kind kind = Kind::kFirstOrder;
  int order = 1;  // K for kKthOrder, max order for kCombinationComplete.

  static CoverageCriterion first_order() { return {Kind::kFirstOrder, 1}; }
  static CoverageCriterion kth_order(int k) {
    if (k < 2) throw Error("kth-order coverage needs K >= 2");
    return {Kind::kKthOrder, k};
  }
  static CoverageCriterion combination_complete(int max_order) {
    if (max_order < 1) throw Error("combination coverage needs max order >= 1");
    return {Kind::kCombinationComplete, max_order};
  }

  // Longest chain the criterion requires.
  int max_chain_length() const {
    switch (kind) {
      case Kind::kFirstOrder: return 1;
      case Kind::kKthOrder: return order - 1;
      case Kind::kCombinationComplete: return order;
    }
    return 0;
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::kFirstOrder: return "first";
      case Kind::kKthOrder: return "kth:" + std::to_string(order);
      case Kind::kCombinationComplete: return "combo:" + std::to_string(order);
    }
    return "";
  }

  friend bool operator==(const CoverageCriterion&, const CoverageCriterion&) = default;
};

inline CoverageCriterion parse_criterion(std::string_view text) {
  auto number = [&](std::string_view rest) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(std::string(rest), &used);
      if (used != rest.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw Error("bad criterion \"" + std::string(text) + "\"");
    }
  };
  if (text == "first") return CoverageCriterion::first_order();
  if (starts_with(text, "kth:")) return CoverageCriterion::kth_order(number(text.substr(4)));
  if (starts_with(text, "combo:"))
    return CoverageCriterion::combination_complete(number(text.substr(6)));
  throw Error("bad criterion \"" + std::string(text) + "\" (expected first, kth:K or combo:J)");
}

struct PlanEntry {
  std::string seed_id;
  std::vector<std::string> chain;  // registry order; empty for the seed itself

  friend auto operator<=>(const PlanEntry&, const PlanEntry&) = default;
};

struct MutantPlan {
  std::vector<PlanEntry> entries;
  CoverageCriterion criterion;
  std::vector<DatamorphismSpec> operators;  // registry order

  std::vector<std::string> operator_set() const { return chain_names(operators); }
};

// Sorts names by registry index; unknown names are an error.
inline std::vector<std::string> canonical_chain(std::vector<std::string> names) {
  for (const auto& n : names)
    if (!operator_index(n)) throw Error("unknown datamorphism \"" + n + "\"");
  std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
    return *operator_index(a) < *operator_index(b);
  });
  return names;
}

namespace detail {

inline std::vector<DatamorphismSpec> canonical_operators(std::vector<DatamorphismSpec> ops) {
  if (ops.empty()) throw Error("empty operator set");
  for (const auto& op : ops) validate_spec(op);
  std::stable_sort(ops.begin(), ops.end(), [](const auto& a, const auto& b) {
    return *operator_index(a.name) < *operator_index(b.name);
  });
  for (std::size_t i = 1; i < ops.size(); ++i)
    if (ops[i].name == ops[i - 1].name)
      throw Error("operator \"" + ops[i].name + "\" listed twice");
  return ops;
}

// All subsets of `names` with size 0..max_len, by size then lexicographic
// index order.
inline std::vector<std::vector<std::string>> chains_up_to(const std::vector<std::string>& names,
                                                          int max_len) {
  std::vector<std::vector<std::string>> out;
  const int m = static_cast<int>(names.size());
  for (int size = 0; size <= max_len; ++size) {
    std::vector<int> idx(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
      std::vector<std::string> chain;
      for (int i : idx) chain.push_back(names[static_cast<std::size_t>(i)]);
      out.push_back(std::move(chain));
      int pos = size - 1;
      while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == m - size + pos) --pos;
      if (pos < 0) break;
      ++idx[static_cast<std::size_t>(pos)];
      for (int i = pos + 1; i < size; ++i)
        idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
    }
  }
  return out;
}

inline std::vector<PlanEntry> required_entries(const std::vector<std::string>& seed_ids,
                                               const std::vector<std::string>& ops,
                                               const CoverageCriterion& c) {
  const int max_len = c.max_chain_length();
  if (max_len > static_cast<int>(ops.size()))
    throw Error("criterion " + c.to_string() + " needs chains of length " +
                std::to_string(max_len) + " but only " + std::to_string(ops.size()) +
                " operators are given");
  const auto chains = chains_up_to(ops, max_len);
  std::vector<PlanEntry> out;
  out.reserve(seed_ids.size() * chains.size());
  for (const auto& s : seed_ids)
    for (const auto& ch : chains) out.push_back({s, ch});
  return out;
}

}  // namespace detail

// Uses the seed images (empty provenance chain) of `seeds`.
inline MutantPlan plan_mutants(const DatasetManifest& seeds,
                               std::vector<DatamorphismSpec> operators,
                               const CoverageCriterion& criterion) {
  MutantPlan plan;
  plan.criterion = criterion;
  plan.operators = detail::canonical_operators(std::move(operators));
  std::vector<std::string> seed_ids;
  for (const auto& e : seeds.images)
    if (e.provenance.is_seed()) seed_ids.push_back(e.image.id);
  if (seed_ids.empty()) throw Error("no seed images to plan mutants from");
  plan.entries = detail::required_entries(seed_ids, plan.operator_set(), criterion);
  return plan;
}

struct CoverageReport {
  bool satisfied = false;
  std::vector<PlanEntry> missing;
  std::size_t present = 0;
  std::size_t required = 0;
  double ratio = 0;
};

// Seeds are every image with an empty chain plus every seed_id referenced
// by a mutant. A test case counts by (seed_id, chain as a set).
inline CoverageReport measure_coverage(const DatasetManifest& testset,
                                       const std::vector<std::string>& operators,
                                       const CoverageCriterion& criterion) {
  if (operators.empty()) throw Error("empty operator set");
  const auto ops = canonical_chain(operators);
  for (std::size_t i = 1; i < ops.size(); ++i)
    if (ops[i] == ops[i - 1]) throw Error("operator \"" + ops[i] + "\" listed twice");

  std::vector<std::string> seed_ids;
  std::set<std::string> seen_seeds;
  std::set<PlanEntry> present;
  for (const auto& e : testset.images) {
    const auto& p = e.provenance;
    const std::string seed = p.is_seed() ? e.image.id : p.seed_id.value_or("");
    if (seen_seeds.insert(seed).second) seed_ids.push_back(seed);
    auto chain = canonical_chain(p.chain);
    chain.erase(std::unique(chain.begin(), chain.end()), chain.end());
    present.insert({seed, std::move(chain)});
  }

  CoverageReport r;
  const auto required = detail::required_entries(seed_ids, ops, criterion);
  r.required = required.size();
  for (const auto& entry : required) {
    if (present.count(entry))
      ++r.present;
    else
      r.missing.push_back(entry);
  }
  r.satisfied = r.missing.empty();
  r.ratio = r.required ? static_cast<double>(r.present) / static_cast<double>(r.required) : 1.0;
  return r;
}

inline std::string mutant_id(const PlanEntry& e) {
  return e.chain.empty() ? e.seed_id : e.seed_id + "__" + join(e.chain, "+");
}

// Writes one image per plan entry under out_dir/images and the resulting
// manifest to out_dir/manifest.json. Seeds are copied byte-for-byte.
inline DatasetManifest materialize_plan(const MutantPlan& plan, const DatasetManifest& seeds,
                                        std::uint64_t master_seed, const fs::path& out_dir,
                                        unsigned jobs = 1) {
  std::map<std::string, DatamorphismSpec> specs;
  for (const auto& op : plan.operators) specs[op.name] = op;

  // Group entries by seed so each seed image is decoded once.
  std::vector<std::string> seed_order;
  std::map<std::string, std::vector<std::size_t>> by_seed;
  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    auto& v = by_seed[plan.entries[i].seed_id];
    if (v.empty()) seed_order.push_back(plan.entries[i].seed_id);
    v.push_back(i);
  }

  DatasetManifest out;
  out.class_set = seeds.class_set;
  out.master_seed = master_seed;
  out.base_dir = out_dir;
  out.images.resize(plan.entries.size());
  fs::create_directories(out_dir / "images");

  parallel_for(seed_order.size(), jobs, [&](std::size_t k) {
    const auto& seed_id = seed_order[k];
    const auto* src = seeds.find(seed_id);
    if (!src) throw Error("plan references unknown seed \"" + seed_id + "\"");
    const fs::path src_path = seeds.resolve(src->image);
    std::optional<PixelImage> pixels;
    for (std::size_t i : by_seed[seed_id]) {
      const auto& entry = plan.entries[i];
      ManifestEntry me;
      me.image = src->image;
      me.image.id = mutant_id(entry);
      if (entry.chain.empty()) {
        const std::string name = me.image.id + src_path.extension().string();
        me.image.path = "images/" + name;
        fs::copy_file(src_path, out_dir / me.image.path, fs::copy_options::overwrite_existing);
        me.provenance = Provenance::original();
      } else {
        if (!pixels) pixels = read_image(src_path);
        DatamorphChain chain;
        for (const auto& n : entry.chain) chain.push_back(specs.at(n));
        const auto case_seed = derive_case_seed(master_seed, seed_id, entry.chain);
        auto mutant = compose_chain(chain, *pixels, src->image.annotations, case_seed, seed_id);
        me.image.path = "images/" + me.image.id + ".png";
        me.image.width = mutant.image.width;
        me.image.height = mutant.image.height;
        me.image.annotations = std::move(mutant.annotations);
        me.provenance = std::move(mutant.provenance);
        write_png(mutant.image, out_dir / me.image.path);
      }
      out.images[i] = std::move(me);
    }
  });

  validate_manifest(out);
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

inline json coverage_report_to_json(const CoverageReport& r, const CoverageCriterion& c) {
  json missing = json::array();
  for (const auto& m : r.missing) missing.push_back({{"seed_id", m.seed_id}, {"chain", m.chain}});
  return {{"criterion", c.to_string()}, {"satisfied", r.satisfied}, {"present", r.present},
          {"required", r.required},     {"ratio", r.ratio},         {"missing", missing}};
}

}  // namespace morphcheck
