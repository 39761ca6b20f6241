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

// Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage
// error (with the synopsis on stderr). Commands that consume randomness
// print "seed: <n>" first.

#pragma once

#include <CLI11.hpp>

#include <csignal>
#include <iomanip>
#include <iostream>
#include <thread>

#include "morphcheck/coverage.hpp"
#include "morphcheck/evaluate.hpp"
#include "morphcheck/modelrun.hpp"
#include "morphcheck/report.hpp"
#include "morphcheck/server.hpp"
#include "morphcheck/toy.hpp"
#include "morphcheck/treatment.hpp"
#include "morphcheck/workspace.hpp"

namespace morphcheck {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

namespace cli {

// Re-labels errors in user-supplied syntax as usage errors.
template <typename Fn>
auto as_usage(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

inline std::vector<std::string> comma_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : split(s, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

inline std::string fmt_pct(const std::optional<double>& ratio) {
  if (!ratio) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *ratio * 100.0;
  return os.str();
}

inline std::string fmt_pts(const std::optional<double>& points) {
  if (!points) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << std::showpos << *points;
  return os.str();
}

inline void print_report_summary(const ScenarioReport& r, std::ostream& out) {
  out << "model " << r.model_id << ", IoU " << r.iou_threshold << "\n";
  out << std::left << std::setw(24) << "scenario" << std::right << std::setw(8) << "images"
      << std::setw(9) << "mAP" << std::setw(11) << "precision" << std::setw(9) << "recall";
  for (const auto& c : r.class_set) out << std::setw(10) << ("AP:" + c);
  out << "\n";
  auto row = [&](const GroupResult& g) {
    out << std::left << std::setw(24) << g.name << std::right << std::setw(8) << g.images
        << std::setw(9) << fmt_pct(g.map) << std::setw(11) << fmt_pct(g.precision) << std::setw(9)
        << fmt_pct(g.recall);
    for (const auto& c : g.classes) out << std::setw(10) << fmt_pct(c.ap);
    out << "\n";
  };
  for (const auto& g : r.groups) row(g);
  row(r.overall);
  out << "failing cases: " << r.failing.size() << "\n";
}

inline void print_diagnosis(const DiagnosisReport& d, std::ostream& out) {
  out << "reference " << std::fixed << std::setprecision(2) << d.reference_percent << "% ("
      << d.reference_kind << "), delta " << d.delta_points << " points, B=" << d.bootstrap << "\n";
  for (const auto& v : d.verdicts)
    out << v.suspect << ": point " << (v.point_percent ? fmt_pts(*v.point_percent).substr(1) : "n/a")
        << ", CI [" << v.low_percent << ", " << v.high_percent << "] -> "
        << (v.confirmed ? "confirmed" : "not-confirmed") << "\n";
  out << std::defaultfloat;
}

inline void print_comparison(const ComparisonReport& c, std::ostream& out) {
  out << c.model_b << " vs " << c.model_a << " (points, b - a)\n";
  for (const auto& d : c.groups) out << "  " << std::left << std::setw(22) << d.name << fmt_pts(d.delta_points) << "\n";
  for (const auto& d : c.classes)
    out << "  " << std::left << std::setw(22) << ("class:" + d.name) << fmt_pts(d.delta_points) << "\n";
  out << "  " << std::left << std::setw(22) << "overall" << fmt_pts(c.overall.delta_points) << "\n";
  out << "forgetting flags: " << c.forgetting.size();
  for (const auto& f : c.forgetting) out << " " << f;
  out << "\n" << std::right;
}

inline std::vector<DatamorphismSpec> operator_specs(const std::vector<std::string>& texts,
                                                    const WorkspaceConfig& cfg) {
  std::vector<DatamorphismSpec> out;
  for (const auto& t : texts) out.push_back(with_overrides(parse_operator(t), cfg.overrides));
  return out;
}

inline void write_report_file(const json& doc, const fs::path& out, const std::string& format) {
  emit_report(doc, format.empty() ? format_for_path(out) : parse_report_format(format), out);
}

inline std::atomic<Server*>& active_server() {
  static std::atomic<Server*> s{nullptr};
  return s;
}

}  // namespace cli

inline int command_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                            std::ostream& err = std::cerr) {
  CLI::App app{"Scenario-based testing of object detectors", "morphcheck"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> params;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--config", config_path, "Workspace config (JSON)");
  app.add_option("--param", params, "Operator parameter override op.key=value (repeatable)");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  // Options shared by several commands; bound per command below.
  std::string in, out_path, criterion = "first", operators, run_dir, model_id, format;
  std::optional<std::uint64_t> seed;
  std::optional<double> iou;

  auto* mutate = app.add_subcommand("mutate", "Generate a mutant test set meeting a coverage criterion");
  mutate->add_option("--in", in, "Seed manifest")->required();
  mutate->add_option("--out", out_path, "Output directory")->required();
  mutate->add_option("--criterion", criterion, "first | kth:K | combo:J");
  mutate->add_option("--operators", operators, "Comma list of datamorphisms (default: weather set)");
  mutate->add_option("--seed", seed, "Master seed");

  auto* coverage = app.add_subcommand("coverage", "Measure datamorphism coverage of a test set");
  coverage->add_option("--in", in, "Test set manifest")->required();
  coverage->add_option("--criterion", criterion, "first | kth:K | combo:J");
  coverage->add_option("--operators", operators, "Comma list of datamorphisms (default: weather set)");

  std::string cmd;
  double timeout = 60;
  bool batch = false;
  auto* run = app.add_subcommand("run", "Run a model command over every image");
  run->add_option("--model-id", model_id, "Model identifier")->required();
  run->add_option("--cmd", cmd, "Command template with {image} and {out}")->required();
  run->add_option("--in", in, "Dataset manifest")->required();
  run->add_option("--out", run_dir, "Run directory (default <root>/runs/<model-id>)");
  run->add_option("--timeout", timeout, "Per-invocation timeout in seconds");
  run->add_flag("--batch", batch, "Invoke once with a list file as {image}");
  run->add_option("--jobs", jobs, "Parallel invocations")->check(CLI::PositiveNumber);

  std::string pred;
  auto* ingest = app.add_subcommand("ingest", "Ingest existing prediction files as a run");
  ingest->add_option("--model-id", model_id, "Model identifier")->required();
  ingest->add_option("--pred", pred, "Prediction directory or JSON file")->required();
  ingest->add_option("--in", in, "Dataset manifest")->required();
  ingest->add_option("--out", run_dir, "Run directory (default <root>/runs/<model-id>)");

  std::string triage_path;
  auto* eval = app.add_subcommand("eval", "Per-scenario and per-class evaluation report");
  eval->add_option("--run", run_dir, "Run directory or run.json")->required();
  eval->add_option("--in", in, "Dataset manifest")->required();
  eval->add_option("--iou", iou, "IoU matching threshold");
  eval->add_option("--out", out_path, "Report file (.json or .html)");
  eval->add_option("--format", format, "json | html (default: from extension)");
  eval->add_option("--triage", triage_path, "Triage file whose unrecognizable marks apply");

  std::string suspects;
  std::optional<double> delta, confidence, target;
  std::optional<int> bootstrap;
  auto* diag = app.add_subcommand("diagnose", "Confirm suspected weak scenarios or classes");
  diag->add_option("--run", run_dir, "Run directory or run.json")->required();
  diag->add_option("--in", in, "Dataset manifest")->required();
  diag->add_option("--suspects", suspects, "Comma list (scenario or class:<name>) or from-triage")
      ->required();
  diag->add_option("--triage", triage_path, "Triage file (default <root>/triage/triage.json)");
  diag->add_option("--iou", iou, "IoU matching threshold");
  diag->add_option("--delta", delta, "Weakness margin in points");
  diag->add_option("--bootstrap", bootstrap, "Bootstrap replicates");
  diag->add_option("--confidence", confidence, "Confidence level");
  diag->add_option("--target", target, "Fixed reference mAP in percent");
  diag->add_option("--seed", seed, "Bootstrap seed");
  diag->add_option("--out", out_path, "Diagnosis document (.json or .html)");

  std::string train, targets, base = "base", p_text;
  double p = 0, r = 0.1;
  bool disjoint = false;
  auto* plan = app.add_subcommand("plan", "Compose a retraining dataset (synthetic + rehearsal)");
  plan->add_option("--train", train, "Training manifest");
  plan->add_option("--target", targets, "Comma list of treatment datamorphisms");
  plan->add_option("--p", p, "Synthetic fraction");
  plan->add_option("--r", r, "Rehearsal fraction");
  plan->add_option("--base", base, "Base model identifier");
  plan->add_option("--seed", seed, "Master seed");
  plan->add_option("--out", out_path, "Output directory");
  plan->add_flag("--disjoint", disjoint, "Keep rehearsal images out of the synthetic sources");
  auto* sweep_cmd = plan->add_subcommand("sweep", "One plan per synthetic fraction");
  sweep_cmd->add_option("--train", train, "Training manifest")->required();
  sweep_cmd->add_option("--target", targets, "Comma list of treatment datamorphisms")->required();
  sweep_cmd->add_option("--p", p_text, "start:stop:step or comma list (default 0.10:0.50:0.10)");
  sweep_cmd->add_option("--r", r, "Rehearsal fraction");
  sweep_cmd->add_option("--base", base, "Base model identifier");
  sweep_cmd->add_option("--seed", seed, "Master seed");
  sweep_cmd->add_option("--out", out_path, "Output directory")->required();
  sweep_cmd->add_flag("--disjoint", disjoint, "Keep rehearsal images out of the synthetic sources");

  std::string report_a, report_b, treated;
  std::optional<double> epsilon;
  auto* cmp = app.add_subcommand("compare", "Compare two scenario reports");
  cmp->add_option("--a", report_a, "Report of the base model")->required();
  cmp->add_option("--b", report_b, "Report of the treated model")->required();
  cmp->add_option("--treated", treated, "Comma list of treated scenarios or class:<name>");
  cmp->add_option("--epsilon", epsilon, "Forgetting margin in points");
  cmp->add_option("--out", out_path, "Comparison document (.json or .html)");
  cmp->add_option("--format", format, "json | html (default: from extension)");

  std::string workspace, host = "127.0.0.1", ui_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the triage HTTP API over a workspace");
  serve->add_option("--workspace", workspace, "Workspace root (default: config root)");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--ui", ui_dir, "Static UI assets to serve at /");

  auto* report = app.add_subcommand("report", "Render a report document as JSON or HTML");
  report->add_option("--in", in, "Report document (JSON)")->required();
  report->add_option("--out", out_path, "Output file")->required();
  report->add_option("--format", format, "json | html (default: from extension)");

  auto* morph = app.add_subcommand("morph", "Inspect or apply single datamorphisms");
  morph->require_subcommand(1);
  morph->add_subcommand("list", "List operators and their parameters");
  std::string op_text;
  auto* morph_apply = morph->add_subcommand("apply", "Apply one datamorphism to an image");
  morph_apply->add_option("--op", op_text, "name or name:key=value,...")->required();
  morph_apply->add_option("--in", in, "Input image")->required();
  morph_apply->add_option("--out", out_path, "Output PNG")->required();
  morph_apply->add_option("--seed", seed, "Seed");

  int toy_count = 60;
  auto* toy_cmd = app.add_subcommand("toy", "Generate the synthetic cone corpus");
  toy_cmd->add_option("--out", out_path, "Output directory")->required();
  toy_cmd->add_option("--count", toy_count, "Number of images")->check(CLI::PositiveNumber);
  toy_cmd->add_option("--seed", seed, "Seed");

  auto synopsis = [&]() -> std::string {
    for (auto* sub : app.get_subcommands()) {
      for (auto* subsub : sub->get_subcommands()) return subsub->help();
      return sub->help();
    }
    return app.help();
  };

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << synopsis();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << synopsis();
    return kExitUsage;
  }

  auto echo_seed = [&](std::uint64_t s) { out << "seed: " << s << "\n"; };

  try {
    WorkspaceConfig cfg;
    if (!config_path.empty()) cfg = load_workspace_config(config_path);
    for (const auto& kv : params) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--param expects op.key=value, got \"" + kv + "\"");
      try {
        cfg.overrides[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
      } catch (const std::exception&) {
        throw UsageError("--param expects a number in \"" + kv + "\"");
      }
    }
    cli::as_usage([&] {
      validate_workspace_config(cfg);
      return 0;
    });
    const std::uint64_t effective_seed = seed.value_or(cfg.seed);
    const auto op_names = [&] {
      return operators.empty() ? weather_operator_names() : cli::comma_list(operators);
    };
    const auto default_run_dir = [&] { return cfg.root / "runs" / model_id; };
    DiagnosisConfig dcfg;
    dcfg.iou_threshold = iou.value_or(cfg.iou);
    dcfg.delta_points = delta.value_or(cfg.delta);
    dcfg.bootstrap = bootstrap.value_or(cfg.bootstrap);
    dcfg.confidence = confidence.value_or(cfg.confidence);
    dcfg.seed = effective_seed;
    dcfg.target_percent = target;
    dcfg.jobs = jobs;

    if (*mutate) {
      echo_seed(effective_seed);
      const auto crit = cli::as_usage([&] { return parse_criterion(criterion); });
      const auto specs = cli::as_usage([&] { return cli::operator_specs(op_names(), cfg); });
      const auto seeds = load_manifest(in);
      const auto mplan = plan_mutants(seeds, specs, crit);
      const auto result = materialize_plan(mplan, seeds, effective_seed, out_path, jobs);
      out << "wrote " << result.size() << " images (" << crit.to_string() << ") to " << out_path << "\n";
      return kExitOk;
    }
    if (*coverage) {
      const auto crit = cli::as_usage([&] { return parse_criterion(criterion); });
      const auto names = op_names();
      const auto rep = measure_coverage(load_manifest(in), names, crit);
      out << coverage_report_to_json(rep, crit).dump(2) << "\n";
      return rep.satisfied ? kExitOk : kExitDomain;
    }
    if (*run) {
      const auto m = load_manifest(in);
      RunnerConfig rc{cmd, timeout, batch, jobs};
      cli::as_usage([&] {
        validate_runner_config(rc);
        return 0;
      });
      const fs::path dir = run_dir.empty() ? default_run_dir() : fs::path(run_dir);
      auto result = run_model(rc, m, model_id, dir);
      result.dataset_path = fs::absolute(in).string();
      save_run(result, dir);
      for (const auto& w : result.warnings) err << "warning: " << w << "\n";
      out << "ran " << model_id << " on " << result.predictions.size() << " images -> " << dir.string() << "\n";
      return kExitOk;
    }
    if (*ingest) {
      const auto m = load_manifest(in);
      auto result = ingest_predictions(pred, m, model_id);
      result.dataset_path = fs::absolute(in).string();
      result.meta = {{"ingested_from", fs::absolute(pred).string()}, {"ingested", utc_timestamp()}};
      const fs::path dir = run_dir.empty() ? default_run_dir() : fs::path(run_dir);
      save_run(result, dir);
      for (const auto& w : result.warnings) err << "warning: " << w << "\n";
      out << "ingested " << result.predictions.size() << " prediction records -> " << dir.string() << "\n";
      return kExitOk;
    }
    if (*eval) {
      const auto m = load_manifest(in);
      const auto run_manifest = load_run(run_dir);
      std::optional<TriageFile> triage;
      if (!triage_path.empty()) triage = load_triage(triage_path);
      const auto rep = evaluate_report(run_manifest, m, dcfg, triage ? &*triage : nullptr);
      cli::print_report_summary(rep, out);
      if (!out_path.empty()) {
        cli::write_report_file(report_to_json(rep), out_path, format);
        out << "report written to " << out_path << "\n";
      }
      return kExitOk;
    }
    if (*diag) {
      echo_seed(effective_seed);
      const auto m = load_manifest(in);
      const auto run_manifest = load_run(run_dir);
      check_run_digest(run_manifest, m);
      const fs::path tpath = triage_path.empty() ? Workspace{cfg.root}.triage_path() : fs::path(triage_path);
      const auto triage = load_triage(tpath);
      std::vector<std::string> list;
      if (suspects == "from-triage") {
        list = triage.suspects();
        if (list.empty()) throw Error("no suspect tags in " + tpath.string());
      } else {
        list = cli::comma_list(suspects);
      }
      cli::as_usage([&] {
        validate_config(dcfg);
        return 0;
      });
      const auto d = diagnose(run_manifest, apply_recognizability_filter(m, triage), list, dcfg);
      cli::print_diagnosis(d, out);
      if (!out_path.empty()) cli::write_report_file(diagnosis_to_json(d), out_path, format);
      return kExitOk;
    }
    if (*sweep_cmd) {
      echo_seed(effective_seed);
      SweepSpec ss;
      if (!p_text.empty()) ss.synthetic_fractions = cli::as_usage([&] { return parse_fraction_list(p_text); });
      ss.rehearsal_fraction = r;
      ss.target = cli::as_usage([&] { return cli::operator_specs(cli::comma_list(targets), cfg); });
      ss.master_seed = effective_seed;
      ss.disjoint = disjoint;
      const auto tm = load_manifest(train);
      auto plans = sweep(tm, ss, base);
      json summary = json::array();
      for (auto& pl : plans) {
        materialize_treatment(pl, tm, fs::path(out_path) / pl.label, jobs);
        summary.push_back(plan_to_json(pl));
        out << pl.label << ": " << pl.counts.synthetic << " synthetic + " << pl.counts.rehearsal
            << " rehearsal -> " << pl.manifest_path << "\n";
      }
      write_json_file(fs::path(out_path) / "sweep.json", {{"version", "1"}, {"plans", summary}});
      return kExitOk;
    }
    if (*plan) {
      if (train.empty() || targets.empty() || out_path.empty() || p <= 0)
        throw UsageError("plan needs --train, --target, --p and --out");
      echo_seed(effective_seed);
      MixtureSpec ms;
      ms.synthetic_fraction = p;
      ms.rehearsal_fraction = r;
      ms.target = cli::as_usage([&] { return cli::operator_specs(cli::comma_list(targets), cfg); });
      ms.master_seed = effective_seed;
      ms.disjoint = disjoint;
      const auto tm = load_manifest(train);
      auto pl = plan_treatment(tm, ms, base);
      pl.label = "treatment";
      materialize_treatment(pl, tm, out_path, jobs);
      out << pl.counts.synthetic << " synthetic + " << pl.counts.rehearsal << " rehearsal = "
          << pl.counts.total() << " images -> " << pl.manifest_path << "\n";
      return kExitOk;
    }
    if (*cmp) {
      const auto a = report_from_json(read_json_file(report_a));
      const auto b = report_from_json(read_json_file(report_b));
      const auto c = compare(a, b, cli::comma_list(treated), epsilon.value_or(cfg.epsilon));
      cli::print_comparison(c, out);
      if (!out_path.empty()) cli::write_report_file(comparison_to_json(c), out_path, format);
      return kExitOk;
    }
    if (*serve) {
      ServerOptions so;
      so.config = cfg;
      if (!workspace.empty()) so.config.root = workspace;
      if (!ui_dir.empty()) so.ui_dir = ui_dir;
      Server server(so);
      const int bound = server.bind(host, port);
      out << "serving " << so.config.root.string() << " on http://" << host << ":" << bound << "\n" << std::flush;
      cli::active_server() = &server;
      auto on_signal = [](int) {
        if (auto* s = cli::active_server().load()) s->stop();
      };
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen_after_bind();
      cli::active_server() = nullptr;
      return kExitOk;
    }
    if (*report) {
      const fs::path dest = out_path;
      cli::write_report_file(read_json_file(in), dest, format);
      out << "wrote " << dest.string() << "\n";
      return kExitOk;
    }
    if (*morph) {
      if (*morph_apply) {
        echo_seed(effective_seed);
        const auto spec = cli::as_usage([&] { return with_overrides(parse_operator(op_text), cfg.overrides); });
        const auto img = read_image(in);
        write_png(apply_datamorphism(spec, img, {}, effective_seed).image, out_path);
        out << "wrote " << out_path << "\n";
        return kExitOk;
      }
      for (const auto& info : operator_registry()) {
        out << info.name << (info.stochastic ? " (seeded)" : "") << ": " << info.description << "\n";
        for (const auto& pi : info.params)
          out << "    " << pi.name << " = " << pi.default_value << " in [" << pi.min << ", " << pi.max << "]\n";
      }
      return kExitOk;
    }
    if (*toy_cmd) {
      echo_seed(effective_seed);
      toy::ToyCorpusOptions opt;
      opt.count = toy_count;
      opt.seed = effective_seed;
      const auto m = toy::make_corpus(out_path, opt);
      out << "wrote " << m.size() << " images to " << out_path << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << synopsis();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  err << synopsis();
  return kExitUsage;
}

}  // namespace morphcheck
