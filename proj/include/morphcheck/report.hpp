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

// Report documents as JSON or static, self-contained HTML. Output depends
// only on the report value, so re-emitting gives identical bytes.

#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "morphcheck/evaluate.hpp"

namespace morphcheck {

enum class ReportFormat { kJson, kHtml };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "json") return ReportFormat::kJson;
  if (s == "html") return ReportFormat::kHtml;
  throw Error("unknown report format \"" + std::string(s) + "\"");
}

// From the output file extension; JSON unless it ends in .html/.htm.
inline ReportFormat format_for_path(const fs::path& p) {
  const auto ext = to_lower(p.extension().string());
  return ext == ".html" || ext == ".htm" ? ReportFormat::kHtml : ReportFormat::kJson;
}

namespace html {

inline std::string escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string pct(const std::optional<double>& ratio) {
  return ratio ? num(*ratio * 100.0) : std::string("n/a");
}

inline std::string pts(const std::optional<double>& points) {
  if (!points) return "n/a";
  return (*points >= 0 ? "+" : "") + num(*points);
}

inline const char* kStyle = R"(body{font-family:sans-serif;margin:2em;color:#222}
table{border-collapse:collapse;margin:1em 0}td,th{border:1px solid #ccc;padding:2px 8px;text-align:right}
th:first-child,td:first-child{text-align:left}.bar.scenario{fill:#4a78b5}.bar.class{fill:#6aa84f}
.bar.delta.pos{fill:#6aa84f}.bar.delta.neg{fill:#cc4125}#regressions{border:2px solid #cc4125;padding:0 1em}
svg text{font-size:11px})";

inline std::string open(const std::string& title) {
  return "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + escape(title) +
         "</title>\n<style>" + kStyle + "</style></head>\n<body>\n<h1>" + escape(title) + "</h1>\n";
}

inline std::string close() { return "</body></html>\n"; }

struct Bar {
  std::string label;
  std::optional<double> value;  // percent or points
};

// Horizontal bar chart, one rect per bar with a defined value. Values are
// percentages on [0, 100] unless signed, where the axis sits mid-chart.
inline std::string bar_chart(const std::vector<Bar>& bars, const std::string& css_class,
                             bool is_signed = false) {
  const int row = 18, label_w = 170, plot_w = 400;
  double scale = 100.0;
  if (is_signed) {
    scale = 1.0;
    for (const auto& b : bars)
      if (b.value) scale = std::max(scale, std::fabs(*b.value));
  }
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << label_w + plot_w + 70
    << "\" height=\"" << row * static_cast<int>(bars.size()) + 4 << "\">\n";
  const double origin = is_signed ? label_w + plot_w / 2.0 : label_w;
  const double span = is_signed ? plot_w / 2.0 : plot_w;
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const int y = static_cast<int>(i) * row;
    s << "<text x=\"0\" y=\"" << y + 13 << "\">" << escape(b.label) << "</text>";
    if (b.value) {
      const double len = std::fabs(*b.value) / scale * span;
      const double x = *b.value < 0 ? origin - len : origin;
      std::string cls = "bar " + css_class;
      if (is_signed) cls += *b.value < 0 ? " neg" : " pos";
      s << "<rect class=\"" << cls << "\" data-name=\"" << escape(b.label) << "\" x=\"" << num(x)
        << "\" y=\"" << y + 2 << "\" width=\"" << num(len) << "\" height=\"" << row - 4 << "\"/>";
      s << "<text x=\"" << num(x + len + 4) << "\" y=\"" << y + 13 << "\">"
        << (is_signed ? pts(b.value) : num(*b.value)) << "</text>";
    } else {
      s << "<text x=\"" << num(origin + 4) << "\" y=\"" << y + 13 << "\">n/a</text>";
    }
    s << "\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace html

inline std::string scenario_report_html(const ScenarioReport& r) {
  using namespace html;
  std::ostringstream s;
  s << open("Scenario report: " + r.model_id);
  s << "<p>IoU threshold " << num(r.iou_threshold) << "; dataset " << escape(r.dataset_digest)
    << "; overall mAP " << pct(r.overall.map) << "%, precision " << pct(r.overall.precision)
    << "%, recall " << pct(r.overall.recall) << "%.</p>\n";

  s << "<section id=\"scenarios\"><h2>mAP by scenario (%)</h2>\n";
  std::vector<Bar> bars;
  for (const auto& g : r.groups)
    bars.push_back({g.name, g.map ? std::optional<double>(*g.map * 100.0) : std::nullopt});
  s << bar_chart(bars, "scenario");
  s << "<table><tr><th>scenario</th><th>images</th><th>mAP</th><th>precision</th><th>recall</th>";
  for (const auto& c : r.class_set) s << "<th>AP " << escape(c) << "</th>";
  s << "</tr>\n";
  for (const auto* g : [&] {
         std::vector<const GroupResult*> v;
         for (const auto& g : r.groups) v.push_back(&g);
         v.push_back(&r.overall);
         return v;
       }()) {
    s << "<tr><td>" << escape(g->name) << "</td><td>" << g->images << "</td><td>" << pct(g->map)
      << "</td><td>" << pct(g->precision) << "</td><td>" << pct(g->recall) << "</td>";
    for (const auto& c : g->classes) s << "<td>" << pct(c.ap) << "</td>";
    s << "</tr>\n";
  }
  s << "</table></section>\n";

  s << "<section id=\"classes\"><h2>AP by class, all images (%)</h2>\n";
  bars.clear();
  for (const auto& c : r.overall.classes)
    bars.push_back({c.cls, c.ap ? std::optional<double>(*c.ap * 100.0) : std::nullopt});
  s << bar_chart(bars, "class");
  s << "<table><tr><th>class</th><th>ground truth</th><th>detections</th><th>AP</th>"
       "<th>precision</th><th>recall</th></tr>\n";
  for (const auto& c : r.overall.classes)
    s << "<tr><td>" << escape(c.cls) << "</td><td>" << c.gt_count << "</td><td>" << c.detections
      << "</td><td>" << pct(c.ap) << "</td><td>" << pct(c.precision) << "</td><td>"
      << pct(c.recall) << "</td></tr>\n";
  s << "</table></section>\n";

  s << "<section id=\"failing-cases\"><h2>Failing cases (" << r.failing.size() << ")</h2>\n"
    << "<table><tr><th>image</th><th>scenario</th><th>false positives</th><th>misses</th></tr>\n";
  for (const auto& f : r.failing)
    s << "<tr class=\"case\" data-image-id=\"" << escape(f.image_id) << "\"><td>"
      << escape(f.image_id) << "</td><td>" << escape(f.scenario) << "</td><td>"
      << f.false_positives << "</td><td>" << f.misses << "</td></tr>\n";
  s << "</table></section>\n";
  s << close();
  return s.str();
}

inline std::string comparison_report_html(const ComparisonReport& c) {
  using namespace html;
  std::ostringstream s;
  s << open("Comparison: " + c.model_b + " vs " + c.model_a);
  s << "<p>Deltas are " << escape(c.model_b) << " minus " << escape(c.model_a)
    << " in percentage points. Treated: " << escape(c.treated.empty() ? "none" : join(c.treated, ", "))
    << ". Forgetting margin " << num(c.epsilon_points) << " points. Overall mAP delta "
    << pts(c.overall.delta_points) << ".</p>\n";

  s << "<section id=\"regressions\"><h2>Regressions (" << c.forgetting.size() << ")</h2>\n";
  if (c.forgetting.empty()) {
    s << "<p>No untreated scenario lost more than " << num(c.epsilon_points) << " points.</p>\n";
  } else {
    s << "<ul>\n";
    for (const auto& name : c.forgetting) {
      const auto it = std::find_if(c.groups.begin(), c.groups.end(),
                                   [&](const DeltaEntry& d) { return d.name == name; });
      s << "<li class=\"regression\" data-name=\"" << escape(name) << "\">" << escape(name) << ": "
        << (it != c.groups.end() ? pts(it->delta_points) : std::string("n/a")) << "</li>\n";
    }
    s << "</ul>\n";
  }
  s << "</section>\n";

  auto table = [&](const std::vector<DeltaEntry>& entries, const char* head) {
    s << "<table><tr><th>" << head << "</th><th>" << escape(c.model_a) << "</th><th>"
      << escape(c.model_b) << "</th><th>delta</th></tr>\n";
    for (const auto& d : entries)
      s << "<tr><td>" << escape(d.name) << "</td><td>" << (d.a_percent ? num(*d.a_percent) : "n/a")
        << "</td><td>" << (d.b_percent ? num(*d.b_percent) : "n/a") << "</td><td>"
        << pts(d.delta_points) << "</td></tr>\n";
    s << "</table>\n";
  };
  std::vector<Bar> bars;
  for (const auto& d : c.groups) bars.push_back({d.name, d.delta_points});
  s << "<section id=\"scenarios\"><h2>mAP delta by scenario</h2>\n"
    << bar_chart(bars, "delta scenario", true);
  table(c.groups, "scenario");
  s << "</section>\n";
  bars.clear();
  for (const auto& d : c.classes) bars.push_back({d.name, d.delta_points});
  s << "<section id=\"classes\"><h2>AP delta by class</h2>\n" << bar_chart(bars, "delta class", true);
  table(c.classes, "class");
  s << "</section>\n";
  s << close();
  return s.str();
}

inline std::string diagnosis_report_html(const DiagnosisReport& d) {
  using namespace html;
  std::ostringstream s;
  s << open("Diagnosis: " + d.model_id);
  s << "<p>Reference " << num(d.reference_percent) << "% (" << escape(d.reference_kind)
    << "); margin " << num(d.delta_points) << " points; " << d.bootstrap << " bootstrap replicates at "
    << num(d.confidence * 100.0, 1) << "% confidence; seed " << d.seed << ".</p>\n";
  s << "<table><tr><th>suspect</th><th>point</th><th>low</th><th>high</th><th>verdict</th></tr>\n";
  for (const auto& v : d.verdicts)
    s << "<tr class=\"" << (v.confirmed ? "confirmed" : "not-confirmed") << "\"><td>"
      << escape(v.suspect) << "</td><td>" << (v.point_percent ? num(*v.point_percent) : "n/a")
      << "</td><td>" << num(v.low_percent) << "</td><td>" << num(v.high_percent) << "</td><td>"
      << (v.confirmed ? "confirmed" : "not-confirmed") << "</td></tr>\n";
  s << "</table>\n" << close();
  return s.str();
}

// Renders any report document by its "kind".
inline std::string render_document(const json& doc, ReportFormat format) {
  if (format == ReportFormat::kJson) return doc.dump(2) + "\n";
  const auto kind = doc.value("kind", "");
  if (kind == "scenario") return scenario_report_html(report_from_json(doc));
  if (kind == "comparison") return comparison_report_html(comparison_from_json(doc));
  if (kind == "diagnosis") {
    DiagnosisReport d;
    d.model_id = doc.at("model_id").get<std::string>();
    d.reference_percent = doc.at("reference").get<double>();
    d.reference_kind = doc.at("reference_kind").get<std::string>();
    d.delta_points = doc.at("delta").get<double>();
    d.bootstrap = doc.at("bootstrap").get<int>();
    d.confidence = doc.at("confidence").get<double>();
    d.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& v : doc.at("suspects")) {
      SuspectVerdict sv;
      sv.suspect = v.at("suspect").get<std::string>();
      if (!v.at("point").is_null()) sv.point_percent = v["point"].get<double>();
      sv.low_percent = v.at("ci")[0].get<double>();
      sv.high_percent = v.at("ci")[1].get<double>();
      sv.confirmed = v.at("verdict") == "confirmed";
      d.verdicts.push_back(sv);
    }
    return diagnosis_report_html(d);
  }
  throw ParseError("unknown report kind \"" + kind + "\"");
}

inline void emit_report(const json& doc, ReportFormat format, const fs::path& out) {
  write_text_atomic(out, render_document(doc, format));
}

inline void emit_report(const ScenarioReport& r, ReportFormat format, const fs::path& out) {
  emit_report(report_to_json(r), format, out);
}

inline void emit_report(const ComparisonReport& c, ReportFormat format, const fs::path& out) {
  emit_report(comparison_to_json(c), format, out);
}

inline void emit_report(const DiagnosisReport& d, ReportFormat format, const fs::path& out) {
  emit_report(diagnosis_to_json(d), format, out);
}

}  // namespace morphcheck
