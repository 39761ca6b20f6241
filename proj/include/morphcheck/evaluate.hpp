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

// Detection scoring per scenario and per class.
//
// Matching is greedy per image and per class at a single IoU threshold.
// AP is all-point interpolated: the area under the monotone precision
// envelope of the confidence-ranked detections. Detections with equal
// confidence enter the ranking together, so AP depends only on the order of
// confidences, never on how ties happen to be listed.
//
// Ground truths marked unrecognizable are neither matched nor counted;
// a detection on one is a false positive.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "morphcheck/datamorph.hpp"
#include "morphcheck/dataset.hpp"
#include "morphcheck/modelrun.hpp"
#include "morphcheck/triage.hpp"

namespace morphcheck {

inline constexpr const char* kOverallGroup = "overall";

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Matching

struct MatchedDetection {
  std::size_t index = 0;  // position in the input detection list
  double confidence = 0;
  bool matched = false;
  std::optional<std::size_t> gt_index;

  friend bool operator==(const MatchedDetection&, const MatchedDetection&) = default;
};

struct MatchSet {
  std::vector<MatchedDetection> detections;  // confidence descending
  std::size_t gt_count = 0;                  // recognizable ground truths

  std::size_t true_positives() const {
    return static_cast<std::size_t>(std::count_if(
        detections.begin(), detections.end(), [](const auto& d) { return d.matched; }));
  }
};

// Detection indices by confidence descending, ties by list position.
inline std::vector<std::size_t> ranking(std::span<const Detection> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].confidence > preds[b].confidence;
  });
  return order;
}

// Single-class matching. Each detection, in ranking order, takes the
// unmatched recognizable ground truth of highest IoU (lowest index on ties)
// if that IoU reaches `tau`.
inline MatchSet match_detections(std::span<const Detection> preds,
                                 std::span<const Annotation> gts, double tau) {
  MatchSet ms;
  std::vector<bool> taken(gts.size(), false);
  for (const auto& g : gts)
    if (g.recognizable) ++ms.gt_count;
  for (std::size_t di : ranking(preds)) {
    MatchedDetection md{di, preds[di].confidence, false, std::nullopt};
    double best = -1;
    std::optional<std::size_t> best_gt;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi] || !gts[gi].recognizable) continue;
      const double v = iou(preds[di].box, gts[gi].box);
      if (v > best) {
        best = v;
        best_gt = gi;
      }
    }
    if (best_gt && best >= tau) {
      taken[*best_gt] = true;
      md.matched = true;
      md.gt_index = best_gt;
    }
    ms.detections.push_back(md);
  }
  return ms;
}

// ---------------------------------------------------------------------------
// Average precision

struct ScoredDetection {
  double confidence;
  bool tp;
};

struct PrPoint {
  double recall;
  double precision;

  friend bool operator==(const PrPoint&, const PrPoint&) = default;
};

struct APResult {
  std::optional<double> ap;  // undefined when there is no ground truth
  std::vector<PrPoint> pr_points;
  std::string cls;
  std::string group;
};

namespace detail {

// `weight(i)` is the multiplicity of detection i; used by the bootstrap to
// score a resample without materializing it. `dets` must already be sorted
// by confidence descending.
template <typename Weight>
std::optional<double> envelope_ap(std::span<const ScoredDetection> dets, double gt_count,
                                  Weight weight, std::vector<PrPoint>* points) {
  if (gt_count <= 0) return std::nullopt;
  // Reused across calls on the same thread.
  thread_local std::vector<double> rec, prec;
  rec.clear();
  prec.clear();
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < dets.size()) {
    const double c = dets[i].confidence;
    double added = 0;
    for (; i < dets.size() && dets[i].confidence == c; ++i) {
      const double w = weight(i);
      (dets[i].tp ? tp : fp) += w;
      added += w;
    }
    if (added == 0) continue;
    rec.push_back(tp / gt_count);
    prec.push_back(tp / (tp + fp));
  }
  if (points) {
    points->clear();
    for (std::size_t k = 0; k < rec.size(); ++k) points->push_back({rec[k], prec[k]});
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t k = prec.size(); k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
  for (std::size_t k = 0; k < rec.size(); ++k) {
    ap += (rec[k] - prev_recall) * prec[k];
    prev_recall = rec[k];
  }
  return ap;
}

inline void sort_by_confidence(std::vector<ScoredDetection>& dets) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
}

}  // namespace detail

inline APResult average_precision(std::vector<ScoredDetection> dets, std::size_t gt_count) {
  detail::sort_by_confidence(dets);
  APResult r;
  r.ap = detail::envelope_ap(std::span<const ScoredDetection>(dets),
                             static_cast<double>(gt_count), [](std::size_t) { return 1.0; },
                             &r.pr_points);
  return r;
}

inline APResult average_precision(const MatchSet& ms) {
  std::vector<ScoredDetection> dets;
  dets.reserve(ms.detections.size());
  for (const auto& d : ms.detections) dets.push_back({d.confidence, d.matched});
  return average_precision(std::move(dets), ms.gt_count);
}

// ---------------------------------------------------------------------------
// Configuration

struct DiagnosisConfig {
  double iou_threshold = 0.5;
  double delta_points = 5.0;
  int bootstrap = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  // Fixed reference mAP in percent; the run's overall mAP when unset.
  std::optional<double> target_percent;
  unsigned jobs = 1;
};

inline void validate_config(const DiagnosisConfig& c) {
  if (!(c.iou_threshold > 0 && c.iou_threshold < 1)) throw Error("IoU threshold must be in (0, 1)");
  if (c.bootstrap < 100) throw Error("bootstrap replicates must be >= 100");
  if (!(c.confidence > 0 && c.confidence < 1)) throw Error("confidence level must be in (0, 1)");
  if (!(c.delta_points >= 0)) throw Error("weakness margin must be >= 0");
}

// ---------------------------------------------------------------------------
// Per-image scoring: the substrate of reports, the bootstrap and triage.

struct ClassScore {
  std::vector<ScoredDetection> detections;
  std::size_t gt_count = 0;
  std::size_t true_positives = 0;
};

struct ImageScore {
  std::string image_id;
  std::string scenario;
  std::vector<ClassScore> classes;  // aligned with the manifest class_set
  std::size_t false_positives = 0;
  std::size_t misses = 0;

  bool failing() const { return false_positives > 0 || misses > 0; }
};

struct DetectionOutcome {
  std::size_t index;
  bool matched;
  std::optional<std::size_t> gt_index;
};

struct GroundTruthOutcome {
  std::size_t index;
  bool counted;  // recognizable
  bool matched;
};

struct ImageMatch {
  std::vector<DetectionOutcome> detections;  // prediction order
  std::vector<GroundTruthOutcome> ground_truths;
};

inline ImageMatch match_image(const ImageRecord& img, const PredictionRecord& pred,
                              const std::vector<std::string>& class_set, double tau) {
  ImageMatch out;
  out.detections.resize(pred.detections.size());
  out.ground_truths.resize(img.annotations.size());
  for (std::size_t i = 0; i < pred.detections.size(); ++i) out.detections[i] = {i, false, {}};
  for (std::size_t i = 0; i < img.annotations.size(); ++i)
    out.ground_truths[i] = {i, img.annotations[i].recognizable, false};
  for (const auto& cls : class_set) {
    std::vector<Detection> dets;
    std::vector<std::size_t> det_idx;
    for (std::size_t i = 0; i < pred.detections.size(); ++i)
      if (pred.detections[i].cls == cls) {
        dets.push_back(pred.detections[i]);
        det_idx.push_back(i);
      }
    std::vector<Annotation> gts;
    std::vector<std::size_t> gt_idx;
    for (std::size_t i = 0; i < img.annotations.size(); ++i)
      if (img.annotations[i].cls == cls) {
        gts.push_back(img.annotations[i]);
        gt_idx.push_back(i);
      }
    const auto ms = match_detections(dets, gts, tau);
    for (const auto& md : ms.detections) {
      auto& o = out.detections[det_idx[md.index]];
      o.matched = md.matched;
      if (md.gt_index) {
        o.gt_index = gt_idx[*md.gt_index];
        out.ground_truths[gt_idx[*md.gt_index]].matched = true;
      }
    }
  }
  return out;
}

inline std::vector<ImageScore> score_images(const ModelRunManifest& run, const DatasetManifest& m,
                                            double tau) {
  check_run_binding(run, m);
  std::unordered_map<std::string_view, const PredictionRecord*> by_id;
  for (const auto& p : run.predictions) by_id.emplace(p.image_id, &p);
  std::vector<ImageScore> out;
  out.reserve(m.images.size());
  for (const auto& e : m.images) {
    const auto& pred = *by_id.at(e.image.id);
    const auto match = match_image(e.image, pred, m.class_set, tau);
    ImageScore s;
    s.image_id = e.image.id;
    s.scenario = e.provenance.scenario;
    s.classes.resize(m.class_set.size());
    auto class_of = [&](const std::string& cls) {
      return static_cast<std::size_t>(
          std::find(m.class_set.begin(), m.class_set.end(), cls) - m.class_set.begin());
    };
    for (const auto& d : match.detections) {
      const auto& det = pred.detections[d.index];
      auto& cs = s.classes[class_of(det.cls)];
      cs.detections.push_back({det.confidence, d.matched});
      if (d.matched)
        ++cs.true_positives;
      else
        ++s.false_positives;
    }
    for (const auto& g : match.ground_truths) {
      if (!g.counted) continue;
      ++s.classes[class_of(e.image.annotations[g.index].cls)].gt_count;
      if (!g.matched) ++s.misses;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct ClassResult {
  std::string cls;
  std::size_t gt_count = 0;
  std::size_t detections = 0;
  std::size_t true_positives = 0;
  std::optional<double> ap;
  std::optional<double> precision;  // undefined without detections
  std::optional<double> recall;     // undefined without ground truth
  std::vector<PrPoint> pr_points;
};

struct GroupResult {
  std::string name;
  std::size_t images = 0;
  std::vector<ClassResult> classes;
  std::optional<double> map;
  std::optional<double> precision;
  std::optional<double> recall;

  const ClassResult* find_class(std::string_view cls) const {
    for (const auto& c : classes)
      if (c.cls == cls) return &c;
    return nullptr;
  }
};

struct FailingCase {
  std::string image_id;
  std::string scenario;
  std::size_t false_positives = 0;
  std::size_t misses = 0;
};

struct ScenarioReport {
  std::string model_id;
  std::string dataset_digest;
  std::vector<std::string> class_set;
  double iou_threshold = 0.5;
  std::vector<GroupResult> groups;  // one per scenario
  GroupResult overall;              // all images; its classes are the per-class view
  std::vector<FailingCase> failing;

  const GroupResult* find_group(std::string_view name) const {
    if (name == kOverallGroup) return &overall;
    for (const auto& g : groups)
      if (g.name == name) return &g;
    return nullptr;
  }
};

// Mean of the defined values, or nullopt if there are none.
inline std::optional<double> mean_defined(const std::vector<std::optional<double>>& xs) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& x : xs)
    if (x) {
      sum += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline GroupResult score_group(std::string name, const std::vector<const ImageScore*>& images,
                               const std::vector<std::string>& class_set) {
  GroupResult g;
  g.name = std::move(name);
  g.images = images.size();
  std::size_t dets_total = 0, tp_total = 0, gt_total = 0;
  std::vector<std::optional<double>> aps;
  for (std::size_t c = 0; c < class_set.size(); ++c) {
    ClassResult cr;
    cr.cls = class_set[c];
    std::vector<ScoredDetection> dets;
    for (const auto* img : images) {
      const auto& cs = img->classes[c];
      dets.insert(dets.end(), cs.detections.begin(), cs.detections.end());
      cr.gt_count += cs.gt_count;
      cr.true_positives += cs.true_positives;
    }
    cr.detections = dets.size();
    auto ap = average_precision(std::move(dets), cr.gt_count);
    cr.ap = ap.ap;
    cr.pr_points = std::move(ap.pr_points);
    if (cr.detections) cr.precision = static_cast<double>(cr.true_positives) / cr.detections;
    if (cr.gt_count) cr.recall = static_cast<double>(cr.true_positives) / cr.gt_count;
    dets_total += cr.detections;
    tp_total += cr.true_positives;
    gt_total += cr.gt_count;
    aps.push_back(cr.ap);
    g.classes.push_back(std::move(cr));
  }
  g.map = mean_defined(aps);
  if (dets_total) g.precision = static_cast<double>(tp_total) / dets_total;
  if (gt_total) g.recall = static_cast<double>(tp_total) / gt_total;
  return g;
}

// "original" first, then by chain length and registry order.
inline bool scenario_less(const std::string& a, const std::string& b) {
  auto key = [](const std::string& s) {
    std::vector<std::size_t> k;
    if (s == kOriginalScenario) return k;
    for (const auto& part : split(s, '+'))
      k.push_back(operator_index(part).value_or(operator_registry().size()));
    return k;
  };
  const auto ka = key(a), kb = key(b);
  if (ka.size() != kb.size()) return ka.size() < kb.size();
  if (ka != kb) return ka < kb;
  return a < b;
}

inline ScenarioReport build_report(const std::vector<ImageScore>& scores,
                                   const std::vector<std::string>& class_set,
                                   std::string model_id, std::string digest, double tau) {
  ScenarioReport r;
  r.model_id = std::move(model_id);
  r.dataset_digest = std::move(digest);
  r.class_set = class_set;
  r.iou_threshold = tau;
  std::map<std::string, std::vector<const ImageScore*>> by_scenario;
  std::vector<const ImageScore*> all;
  for (const auto& s : scores) {
    by_scenario[s.scenario].push_back(&s);
    all.push_back(&s);
    if (s.failing()) r.failing.push_back({s.image_id, s.scenario, s.false_positives, s.misses});
  }
  std::vector<std::string> names;
  for (const auto& [name, _] : by_scenario) names.push_back(name);
  std::sort(names.begin(), names.end(), scenario_less);
  for (const auto& name : names) r.groups.push_back(score_group(name, by_scenario[name], class_set));
  r.overall = score_group(kOverallGroup, all, class_set);
  // Worst first.
  std::stable_sort(r.failing.begin(), r.failing.end(), [](const auto& a, const auto& b) {
    return a.false_positives + a.misses > b.false_positives + b.misses;
  });
  return r;
}

inline void check_run_digest(const ModelRunManifest& run, const DatasetManifest& m) {
  if (!run.dataset_digest.empty() && run.dataset_digest != manifest_digest(m))
    throw Error("run \"" + run.model_id + "\" was produced for a different dataset manifest");
}

// With a triage file, annotations it marks unrecognizable stop counting.
// The report stays bound to the unfiltered manifest's digest.
inline ScenarioReport evaluate_report(const ModelRunManifest& run, const DatasetManifest& m,
                                      const DiagnosisConfig& cfg,
                                      const TriageFile* triage = nullptr) {
  if (!(cfg.iou_threshold > 0 && cfg.iou_threshold < 1))
    throw Error("IoU threshold must be in (0, 1)");
  check_run_digest(run, m);
  const auto scored = triage ? apply_recognizability_filter(m, *triage) : m;
  return build_report(score_images(run, scored, cfg.iou_threshold), m.class_set, run.model_id,
                      manifest_digest(m), cfg.iou_threshold);
}

// ---------------------------------------------------------------------------
// Bootstrap

// What a bootstrap interval is computed for: the mAP of a scenario group or
// of all images, or one class's AP over all images.
struct Target {
  enum class Kind { kGroup, kClass };
  Kind kind = Kind::kGroup;
  std::string name;  // scenario name, "overall", or class name

  std::string label() const { return kind == Kind::kClass ? "class:" + name : name; }
};

// "class:<name>" or a scenario / "overall", matched case-insensitively
// against what exists in the scores.
inline Target resolve_target(std::string_view text, const std::vector<ImageScore>& scores,
                             const std::vector<std::string>& class_set) {
  const std::string lower = to_lower(text);
  if (starts_with(lower, "class:")) {
    const auto want = lower.substr(6);
    for (const auto& c : class_set)
      if (to_lower(c) == want) return {Target::Kind::kClass, c};
    throw Error("no class named \"" + std::string(text.substr(6)) + "\"");
  }
  const std::string want = starts_with(lower, "scenario:") ? lower.substr(9) : lower;
  if (want == kOverallGroup) return {Target::Kind::kGroup, kOverallGroup};
  for (const auto& s : scores)
    if (to_lower(s.scenario) == want) return {Target::Kind::kGroup, s.scenario};
  throw Error("no scenario group named \"" + std::string(text) + "\"");
}

inline std::vector<const ImageScore*> select_images(const std::vector<ImageScore>& scores,
                                                    const Target& t) {
  std::vector<const ImageScore*> out;
  for (const auto& s : scores)
    if (t.kind == Target::Kind::kClass || t.name == kOverallGroup || s.scenario == t.name)
      out.push_back(&s);
  return out;
}

// Scores a resample, given as per-image multiplicities, without building it.
// Detections are ranked once up front; each resample is a weighted walk.
class ResampleScorer {
 public:
  ResampleScorer(std::vector<const ImageScore*> images, const std::vector<std::size_t>& classes)
      : image_count_(images.size()) {
    for (std::size_t c : classes) {
      PerClass pc;
      std::vector<std::pair<ScoredDetection, std::size_t>> tagged;
      for (std::size_t i = 0; i < images.size(); ++i) {
        for (const auto& d : images[i]->classes[c].detections) tagged.push_back({d, i});
        pc.gt.push_back(images[i]->classes[c].gt_count);
      }
      std::stable_sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) {
        return a.first.confidence > b.first.confidence;
      });
      for (const auto& [d, i] : tagged) {
        pc.dets.push_back(d);
        pc.owner.push_back(i);
      }
      classes_.push_back(std::move(pc));
    }
  }

  std::size_t image_count() const { return image_count_; }

  // Mean AP over the classes with ground truth in the resample; nullopt when
  // there is none.
  std::optional<double> score(const std::vector<std::uint32_t>& counts) const {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& pc : classes_) {
      double gt = 0;
      for (std::size_t i = 0; i < pc.gt.size(); ++i)
        gt += static_cast<double>(pc.gt[i]) * counts[i];
      const auto ap = detail::envelope_ap(
          std::span<const ScoredDetection>(pc.dets), gt,
          [&](std::size_t k) { return static_cast<double>(counts[pc.owner[k]]); }, nullptr);
      if (ap) {
        sum += *ap;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }

 private:
  struct PerClass {
    std::vector<ScoredDetection> dets;
    std::vector<std::size_t> owner;
    std::vector<std::size_t> gt;
  };

  std::size_t image_count_;
  std::vector<PerClass> classes_;
};

inline ResampleScorer make_scorer(const std::vector<ImageScore>& scores, const Target& t,
                                  const std::vector<std::string>& class_set) {
  std::vector<std::size_t> classes;
  for (std::size_t c = 0; c < class_set.size(); ++c)
    if (t.kind == Target::Kind::kGroup || class_set[c] == t.name) classes.push_back(c);
  return ResampleScorer(select_images(scores, t), classes);
}

struct ConfidenceInterval {
  std::optional<double> point;
  double low = 0;
  double high = 0;
  int replicates = 0;  // replicates with a defined value
};

// Type-7 (linear interpolation) sample quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Multiplicities of one resample drawn with replacement.
inline std::vector<std::uint32_t> resample_counts(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint32_t> counts(n, 0);
  for (std::size_t i = 0; i < n; ++i) ++counts[rng.below(n)];
  return counts;
}

inline std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate) {
  return hash_combine(stream_seed(seed, "bootstrap"), replicate);
}

// Percentile bootstrap over images; values are ratios in [0, 1].
inline ConfidenceInterval bootstrap_ci(const std::vector<ImageScore>& scores, const Target& target,
                                       const std::vector<std::string>& class_set,
                                       const DiagnosisConfig& cfg) {
  validate_config(cfg);
  auto scorer = make_scorer(scores, target, class_set);
  const std::size_t n = scorer.image_count();
  if (n < 2) throw Error("group \"" + target.label() + "\" is too small to bootstrap (needs >= 2 images)");
  ConfidenceInterval ci;
  ci.point = scorer.score(std::vector<std::uint32_t>(n, 1));

  const auto b = static_cast<std::size_t>(cfg.bootstrap);
  std::vector<std::optional<double>> values(b);
  parallel_for(b, cfg.jobs, [&](std::size_t r) {
    values[r] = scorer.score(resample_counts(n, replicate_seed(cfg.seed, r)));
  });
  std::vector<double> defined;
  for (const auto& v : values)
    if (v) defined.push_back(*v);
  if (defined.empty()) throw Error("group \"" + target.label() + "\" has no ground truth");
  std::sort(defined.begin(), defined.end());
  const double alpha = 1.0 - cfg.confidence;
  ci.low = quantile_sorted(defined, alpha / 2);
  ci.high = quantile_sorted(defined, 1.0 - alpha / 2);
  ci.replicates = static_cast<int>(defined.size());
  return ci;
}

inline ConfidenceInterval bootstrap_ci(const ModelRunManifest& run, const DatasetManifest& m,
                                       std::string_view group, const DiagnosisConfig& cfg) {
  const auto scores = score_images(run, m, cfg.iou_threshold);
  return bootstrap_ci(scores, resolve_target(group, scores, m.class_set), m.class_set, cfg);
}

// ---------------------------------------------------------------------------
// Diagnosis

struct SuspectVerdict {
  std::string suspect;
  std::optional<double> point_percent;
  double low_percent = 0;
  double high_percent = 0;
  bool confirmed = false;
};

struct DiagnosisReport {
  std::string model_id;
  double reference_percent = 0;
  std::string reference_kind;  // "overall" or "target"
  double delta_points = 0;
  int bootstrap = 0;
  double confidence = 0;
  std::uint64_t seed = 0;
  std::vector<SuspectVerdict> verdicts;
};

// A suspect is confirmed when its whole interval lies more than delta
// points below the reference.
inline DiagnosisReport diagnose(const ModelRunManifest& run, const DatasetManifest& m,
                                const std::vector<std::string>& suspects,
                                const DiagnosisConfig& cfg) {
  validate_config(cfg);
  if (suspects.empty()) throw Error("no suspects to diagnose");
  const auto scores = score_images(run, m, cfg.iou_threshold);
  std::vector<Target> targets;
  for (const auto& s : suspects) targets.push_back(resolve_target(s, scores, m.class_set));

  DiagnosisReport rep;
  rep.model_id = run.model_id;
  rep.delta_points = cfg.delta_points;
  rep.bootstrap = cfg.bootstrap;
  rep.confidence = cfg.confidence;
  rep.seed = cfg.seed;
  if (cfg.target_percent) {
    rep.reference_percent = *cfg.target_percent;
    rep.reference_kind = "target";
  } else {
    const auto overall = build_report(scores, m.class_set, run.model_id, "", cfg.iou_threshold).overall;
    if (!overall.map) throw Error("the run has no ground truth to compare against");
    rep.reference_percent = *overall.map * 100.0;
    rep.reference_kind = kOverallGroup;
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto ci = bootstrap_ci(scores, targets[i], m.class_set, cfg);
    SuspectVerdict v;
    v.suspect = targets[i].label();
    if (ci.point) v.point_percent = *ci.point * 100.0;
    v.low_percent = ci.low * 100.0;
    v.high_percent = ci.high * 100.0;
    v.confirmed = v.high_percent < rep.reference_percent - cfg.delta_points;
    rep.verdicts.push_back(v);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Comparison

struct DeltaEntry {
  std::string name;
  std::optional<double> a_percent;
  std::optional<double> b_percent;
  std::optional<double> delta_points;  // b - a when both are defined
};

struct ComparisonReport {
  std::string model_a;
  std::string model_b;
  std::vector<std::string> treated;
  double epsilon_points = 1.0;
  std::vector<DeltaEntry> groups;                                     // per scenario (mAP)
  std::vector<DeltaEntry> classes;                                    // per class, all images (AP)
  std::map<std::string, std::vector<DeltaEntry>> group_classes;       // per scenario, per class
  DeltaEntry overall;
  std::vector<std::string> forgetting;  // untreated scenarios that regressed beyond epsilon
};

inline DeltaEntry make_delta(std::string name, std::optional<double> a, std::optional<double> b) {
  DeltaEntry d{std::move(name), {}, {}, {}};
  if (a) d.a_percent = *a * 100.0;
  if (b) d.b_percent = *b * 100.0;
  if (a && b) d.delta_points = (*b - *a) * 100.0;
  return d;
}

inline ComparisonReport compare(const ScenarioReport& a, const ScenarioReport& b,
                                const std::vector<std::string>& treated, double epsilon_points) {
  if (a.dataset_digest != b.dataset_digest)
    throw Error("reports were computed on different dataset manifests");
  if (a.class_set != b.class_set) throw Error("reports have different class sets");
  if (!(epsilon_points >= 0)) throw Error("epsilon must be >= 0");
  ComparisonReport c;
  c.model_a = a.model_id;
  c.model_b = b.model_id;
  c.treated = treated;
  c.epsilon_points = epsilon_points;
  std::set<std::string> treated_lower;
  for (const auto& t : treated) {
    auto lower = to_lower(t);
    if (starts_with(lower, "scenario:")) lower = lower.substr(9);
    treated_lower.insert(lower);
  }

  std::vector<std::string> names;
  for (const auto& g : a.groups) names.push_back(g.name);
  for (const auto& g : b.groups)
    if (!a.find_group(g.name)) names.push_back(g.name);
  std::sort(names.begin(), names.end(), scenario_less);

  for (const auto& name : names) {
    const auto* ga = a.find_group(name);
    const auto* gb = b.find_group(name);
    auto d = make_delta(name, ga ? ga->map : std::nullopt, gb ? gb->map : std::nullopt);
    if (d.delta_points && *d.delta_points < -epsilon_points && !treated_lower.count(to_lower(name)))
      c.forgetting.push_back(name);
    c.groups.push_back(d);
    auto& per_class = c.group_classes[name];
    for (const auto& cls : a.class_set) {
      const auto* ca = ga ? ga->find_class(cls) : nullptr;
      const auto* cb = gb ? gb->find_class(cls) : nullptr;
      per_class.push_back(make_delta(cls, ca ? ca->ap : std::nullopt, cb ? cb->ap : std::nullopt));
    }
  }
  for (const auto& cls : a.class_set) {
    const auto* ca = a.overall.find_class(cls);
    const auto* cb = b.overall.find_class(cls);
    c.classes.push_back(make_delta(cls, ca ? ca->ap : std::nullopt, cb ? cb->ap : std::nullopt));
  }
  c.overall = make_delta(kOverallGroup, a.overall.map, b.overall.map);
  return c;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(); }

inline std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

inline json group_to_json(const GroupResult& g) {
  json classes = json::array();
  for (const auto& c : g.classes) {
    json pr = json::array();
    for (const auto& p : c.pr_points) pr.push_back({p.recall, p.precision});
    classes.push_back({{"class", c.cls},
                       {"gt_count", c.gt_count},
                       {"detections", c.detections},
                       {"true_positives", c.true_positives},
                       {"ap", opt(c.ap)},
                       {"precision", opt(c.precision)},
                       {"recall", opt(c.recall)},
                       {"pr_points", std::move(pr)}});
  }
  return {{"name", g.name},         {"images", g.images},
          {"map", opt(g.map)},      {"precision", opt(g.precision)},
          {"recall", opt(g.recall)}, {"classes", std::move(classes)}};
}

inline GroupResult group_from_json(const json& j) {
  GroupResult g;
  g.name = j.at("name").get<std::string>();
  g.images = j.at("images").get<std::size_t>();
  g.map = opt_from(j, "map");
  g.precision = opt_from(j, "precision");
  g.recall = opt_from(j, "recall");
  for (const auto& jc : j.at("classes")) {
    ClassResult c;
    c.cls = jc.at("class").get<std::string>();
    c.gt_count = jc.at("gt_count").get<std::size_t>();
    c.detections = jc.at("detections").get<std::size_t>();
    c.true_positives = jc.at("true_positives").get<std::size_t>();
    c.ap = opt_from(jc, "ap");
    c.precision = opt_from(jc, "precision");
    c.recall = opt_from(jc, "recall");
    for (const auto& p : jc.at("pr_points")) c.pr_points.push_back({p[0].get<double>(), p[1].get<double>()});
    g.classes.push_back(std::move(c));
  }
  return g;
}

inline json delta_to_json(const DeltaEntry& d) {
  return {{"name", d.name}, {"a", opt(d.a_percent)}, {"b", opt(d.b_percent)}, {"delta", opt(d.delta_points)}};
}

inline DeltaEntry delta_from_json(const json& j) {
  return {j.at("name").get<std::string>(), opt_from(j, "a"), opt_from(j, "b"), opt_from(j, "delta")};
}

}  // namespace detail

inline constexpr const char* kReportVersion = "1";

inline json report_to_json(const ScenarioReport& r) {
  json groups = json::array();
  for (const auto& g : r.groups) groups.push_back(detail::group_to_json(g));
  json failing = json::array();
  for (const auto& f : r.failing)
    failing.push_back({{"image_id", f.image_id},
                       {"scenario", f.scenario},
                       {"false_positives", f.false_positives},
                       {"misses", f.misses}});
  return {{"version", kReportVersion},
          {"kind", "scenario"},
          {"model_id", r.model_id},
          {"dataset_digest", r.dataset_digest},
          {"class_set", r.class_set},
          {"iou_threshold", r.iou_threshold},
          {"groups", std::move(groups)},
          {"overall", detail::group_to_json(r.overall)},
          {"failing_cases", std::move(failing)}};
}

inline ScenarioReport report_from_json(const json& j) {
  try {
    if (j.value("kind", "") != "scenario") throw ParseError("not a scenario report");
    ScenarioReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.dataset_digest = j.at("dataset_digest").get<std::string>();
    r.class_set = j.at("class_set").get<std::vector<std::string>>();
    r.iou_threshold = j.at("iou_threshold").get<double>();
    for (const auto& jg : j.at("groups")) r.groups.push_back(detail::group_from_json(jg));
    r.overall = detail::group_from_json(j.at("overall"));
    for (const auto& jf : j.at("failing_cases"))
      r.failing.push_back({jf.at("image_id").get<std::string>(), jf.at("scenario").get<std::string>(),
                           jf.at("false_positives").get<std::size_t>(),
                           jf.at("misses").get<std::size_t>()});
    return r;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed report: ") + ex.what());
  }
}

inline json comparison_to_json(const ComparisonReport& c) {
  json groups = json::array(), classes = json::array(), per = json::object();
  for (const auto& d : c.groups) groups.push_back(detail::delta_to_json(d));
  for (const auto& d : c.classes) classes.push_back(detail::delta_to_json(d));
  for (const auto& [name, entries] : c.group_classes) {
    json arr = json::array();
    for (const auto& d : entries) arr.push_back(detail::delta_to_json(d));
    per[name] = std::move(arr);
  }
  return {{"version", kReportVersion},
          {"kind", "comparison"},
          {"model_a", c.model_a},
          {"model_b", c.model_b},
          {"treated", c.treated},
          {"epsilon", c.epsilon_points},
          {"groups", std::move(groups)},
          {"classes", std::move(classes)},
          {"group_classes", std::move(per)},
          {"overall", detail::delta_to_json(c.overall)},
          {"forgetting", c.forgetting}};
}

inline ComparisonReport comparison_from_json(const json& j) {
  try {
    if (j.value("kind", "") != "comparison") throw ParseError("not a comparison report");
    ComparisonReport c;
    c.model_a = j.at("model_a").get<std::string>();
    c.model_b = j.at("model_b").get<std::string>();
    c.treated = j.at("treated").get<std::vector<std::string>>();
    c.epsilon_points = j.at("epsilon").get<double>();
    for (const auto& d : j.at("groups")) c.groups.push_back(detail::delta_from_json(d));
    for (const auto& d : j.at("classes")) c.classes.push_back(detail::delta_from_json(d));
    for (const auto& [name, arr] : j.at("group_classes").items())
      for (const auto& d : arr) c.group_classes[name].push_back(detail::delta_from_json(d));
    c.overall = detail::delta_from_json(j.at("overall"));
    c.forgetting = j.at("forgetting").get<std::vector<std::string>>();
    return c;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed comparison report: ") + ex.what());
  }
}

inline json diagnosis_to_json(const DiagnosisReport& d) {
  json verdicts = json::array();
  for (const auto& v : d.verdicts)
    verdicts.push_back({{"suspect", v.suspect},
                        {"point", detail::opt(v.point_percent)},
                        {"ci", {v.low_percent, v.high_percent}},
                        {"verdict", v.confirmed ? "confirmed" : "not-confirmed"}});
  return {{"version", kReportVersion},
          {"kind", "diagnosis"},
          {"model_id", d.model_id},
          {"reference", d.reference_percent},
          {"reference_kind", d.reference_kind},
          {"delta", d.delta_points},
          {"bootstrap", d.bootstrap},
          {"confidence", d.confidence},
          {"seed", d.seed},
          {"suspects", std::move(verdicts)}};
}

}  // namespace morphcheck
