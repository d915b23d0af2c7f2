// irkit command-line entry point. Exit codes: 0 ok, 1 runtime failure,
// 2 usage error (bad flags, missing files).

#include <atomic>
#include <csignal>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "irkit/errors.hpp"
#include "irkit/explain.hpp"
#include "irkit/harness/experiment.hpp"
#include "irkit/indices.hpp"
#include "irkit/interface/http.hpp"
#include "irkit/interface/service.hpp"
#include "irkit/synthetic.hpp"
#include "irkit/version.hpp"

namespace fs = std::filesystem;
using namespace irkit;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::map<std::string, Source> kSources = {{"nhanes", Source::Nhanes}, {"charls", Source::Charls}};

std::map<std::string, Task> task_map() {
  std::map<std::string, Task> m;
  for (Task t : kAllTasks) m[std::string(to_string(t))] = t;
  return m;
}

std::map<std::string, harness::ModelKind> model_map() {
  std::map<std::string, harness::ModelKind> m;
  for (auto k : harness::kAllModels) m[std::string(harness::to_string(k))] = k;
  return m;
}

void print_metrics_table(std::span<const harness::ExperimentResult> results) {
  std::printf("%-12s %-15s %-9s %6s %8s %8s %8s %8s %8s\n", "task", "model", "split", "n", "auc", "f1",
              "rmse", "r2", "status");
  for (const auto& r : results) {
    for (const auto& s : r.splits) {
      auto num = [](bool has, double v) {
        char b[16];
        if (has) {
          std::snprintf(b, sizeof b, "%.4f", v);
        } else {
          std::snprintf(b, sizeof b, "-");
        }
        return std::string(b);
      };
      std::printf("%-12s %-15s %-9s %6zu %8s %8s %8s %8s %s\n", std::string(to_string(r.task)).c_str(),
                  std::string(harness::to_string(r.model)).c_str(), std::string(to_string(s.split)).c_str(),
                  s.n, num(s.cls.has_value(), s.cls ? s.cls->auc : 0).c_str(),
                  num(s.cls.has_value(), s.cls ? s.cls->f1 : 0).c_str(),
                  num(s.reg.has_value(), s.reg ? s.reg->rmse : 0).c_str(),
                  num(s.reg.has_value(), s.reg ? s.reg->r2 : 0).c_str(), s.status.c_str());
    }
  }
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  fs::path input, out;
  std::string source = "nhanes";
};

int cmd_ingest(const IngestArgs& a) {
  const auto parsed = parse_csv(a.input, kSources.at(a.source));
  const auto& rep = parsed.report;
  std::printf("rows read %zu, kept %zu, flagged rows %zu, flagged cells %zu\n", rep.rows_read, rep.rows_kept,
              rep.rows_flagged, rep.cells_flagged);
  for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (Task t : kAllTasks) {
    const auto ex = apply_exclusions(parsed.records, t);
    std::printf("%s: eligible %zu of %zu", std::string(to_string(t)).c_str(), ex.report.kept, ex.report.input);
    for (const auto& [reason, n] : ex.report.excluded) std::printf(", %s %zu", reason.c_str(), n);
    std::printf("\n");
  }
  if (!a.out.empty()) {
    write_csv(a.out, parsed.records);
    std::printf("wrote %s\n", a.out.string().c_str());
  }
  return 0;
}

struct SplitArgs {
  fs::path input, out;
  std::string source = "nhanes";
  std::string task = "MetsClass";
  std::uint64_t seed = 2024;
  bool stratify = false;
};

int cmd_split(const SplitArgs& a) {
  const Task task = parse_task(a.task);
  const auto parsed = parse_csv(a.input, kSources.at(a.source));
  const auto kept = apply_exclusions(parsed.records, task).kept;
  std::vector<double> labels;
  if (a.stratify) {
    if (!is_classification(task)) throw UsageError("--stratify needs a classification task");
    for (const auto& r : kept) labels.push_back(derive_target(r, task));
  }
  const auto sa = a.stratify ? split(kept, a.seed, {}, std::span<const double>(labels)) : split(kept, a.seed);
  write_text(a.out, sa.manifest_csv());
  std::printf("train %zu, val %zu, test %zu, external %zu -> %s\n", sa.count(Split::Train), sa.count(Split::Val),
              sa.count(Split::Test), sa.count(Split::External), a.out.string().c_str());
  return 0;
}

struct TrainArgs {
  fs::path config, out;
  std::string task, model;
};

harness::ExperimentConfig load_config(const fs::path& p) {
  return p.empty() ? harness::ExperimentConfig{} : harness::load_experiment_config(p);
}

int cmd_train(const TrainArgs& a) {
  auto config = load_config(a.config);
  const Task task = a.task.empty() ? config.tasks.front() : parse_task(a.task);
  const auto kind = a.model.empty() ? config.models.front() : harness::parse_model(a.model);
  const auto data = harness::load_datasets(config);
  for (const auto& w : data.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto ts = harness::prepare_task(config, data, task);
  const auto cfg = config.cell(task, kind);
  const auto tr = harness::prepare(ts.train, task, ts.encoder, cfg.target);
  const auto va = harness::prepare(ts.val, task, ts.encoder, cfg.target);
  auto res = harness::train(cfg, ts.encoder, tr, va);
  res.model.fingerprint = harness::fingerprint(cfg, ts.data_manifest);
  for (const auto& w : res.history.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  res.model.save(a.out);
  harness::save_background(a.out, harness::sample_rows(tr.x, 512, cfg.seed));
  const auto te = harness::prepare(ts.test, task, ts.encoder, cfg.target);
  const auto m = harness::evaluate_model(res.model, te, Split::Test, cfg.threshold, cfg.averaging);
  std::printf("task %s model %s epochs %zu best %zu\n", std::string(to_string(task)).c_str(),
              std::string(harness::to_string(kind)).c_str(), res.history.epochs, res.history.best_epoch);
  if (m.cls) std::printf("test auc %.4f acc %.4f f1 %.4f\n", m.cls->auc, m.cls->acc, m.cls->f1);
  if (m.reg) std::printf("test rmse %.4f mae %.4f r2 %.4f\n", m.reg->rmse, m.reg->mae, m.reg->r2);
  if (m.status != "ok") std::printf("test %s\n", m.status.c_str());
  std::printf("fingerprint %s\nartifact %s\n", res.model.fingerprint.c_str(),
              harness::bundle_hash(a.out).c_str());
  return 0;
}

struct DataArgs {
  fs::path model, data;
  std::string source = "nhanes";
  fs::path out = ".";
};

harness::TaskData load_task_data(const harness::Model& model, const fs::path& data, const std::string& source,
                                 std::vector<ParticipantRecord>* kept_out = nullptr) {
  const auto parsed = parse_csv(data, kSources.at(source));
  const auto ex = apply_exclusions(parsed.records, model.task, model.mask());
  if (kept_out) *kept_out = ex.kept;
  std::fprintf(stderr, "%zu of %zu records eligible for %s\n", ex.report.kept, ex.report.input,
               std::string(to_string(model.task)).c_str());
  return harness::prepare(ex.kept, model.task, model.encoder);
}

int cmd_eval(const DataArgs& a, double threshold) {
  const auto model = harness::Model::load(a.model);
  const auto d = load_task_data(model, a.data, a.source);
  harness::ExperimentResult r;
  r.task = model.task;
  r.model = model.kind;
  r.fingerprint = model.fingerprint;
  r.splits.push_back(harness::evaluate_model(model, d, Split::Test, threshold));
  const harness::ExperimentResult results[] = {r};
  write_text(a.out / "metrics.csv", harness::metrics_csv(results));
  print_metrics_table(results);
  std::printf("wrote %s\n", (a.out / "metrics.csv").string().c_str());
  return 0;
}

struct ExplainArgs {
  DataArgs data;
  std::string importance;  // gain | permutation | shap; empty picks gain for trees
  std::size_t permutations = 256;
  std::size_t instances = 200;
  std::size_t repeats = 5;
  std::uint64_t seed = 2024;
  std::vector<std::string> features;
  std::string units = "probability";
};

int cmd_explain(const ExplainArgs& a) {
  const auto model = harness::Model::load(a.data.model);
  const auto d = load_task_data(model, a.data.data, a.data.source);
  if (d.size() == 0) throw std::runtime_error("no eligible records to explain");
  const std::string name(harness::to_string(model.kind));
  const auto units = a.units == "logit" ? explain::Units::Logit : explain::Units::Probability;
  const auto f = explain::model_function(model, units);

  auto background = harness::load_background(a.data.model);
  if (background.empty()) background = explain::sample_background(d.x, 512, a.seed);
  const std::size_t n = std::min(a.instances, d.size());
  const std::span<const FeatureVector> inst(d.x.data(), n);
  explain::ShapleyOptions so;
  so.n_permutations = a.permutations;
  so.seed = a.seed;
  auto ats = explain::shapley_many(f, background, inst, std::span(d.ids).first(n), model.mask(), so);
  for (auto& at : ats) at.units = units;
  write_text(a.data.out / ("shap_" + name + ".csv"), explain::shap_csv(ats));

  std::string method = a.importance;
  if (method.empty()) method = harness::is_tree(model.kind) ? "gain" : "permutation";
  explain::ImportanceReport rep;
  if (method == "gain") {
    rep = explain::gain_importance(model);
  } else if (method == "permutation") {
    explain::PermutationOptions po;
    po.repeats = a.repeats;
    po.seed = a.seed;
    rep = explain::permutation_importance(model, d, explain::default_metric(model.task), po);
  } else {
    rep = explain::shap_importance(ats);
  }
  write_text(a.data.out / ("importance_" + name + ".csv"), explain::importance_csv(rep));
  std::printf("%s importance (%s):\n", std::string(explain::to_string(rep.method)).c_str(), name.c_str());
  for (const auto& fs : rep.ranked()) std::printf("  %zu. %-10s %.4f\n", fs.rank, fs.feature.c_str(), fs.score);

  std::vector<std::string> feats = a.features;
  if (feats.empty() && model.mask()[slot(Feature::Waist)]) feats.push_back("waist");
  for (const auto& feat : feats) {
    const auto pts = explain::dependence_export(ats, inst, feat);
    write_text(a.data.out / ("dependence_" + feat + ".csv"), explain::dependence_csv(pts));
  }
  std::printf("wrote shap_%s.csv, importance_%s.csv and %zu dependence file(s) to %s\n", name.c_str(),
              name.c_str(), feats.size(), a.data.out.string().c_str());
  return 0;
}

int cmd_predict(const fs::path& models, std::string json_text, bool explain_req) {
  if (!json_text.empty() && json_text.front() == '@') json_text = read_text(json_text.substr(1));
  const service::Service svc(service::load_registry(models));
  const auto reply = explain_req ? svc.explain(json_text) : svc.predict(json_text);
  std::printf("%s\n", reply.body.dump(2).c_str());
  return reply.status == 200 ? 0 : 1;
}

int cmd_report(const fs::path& config_path, bool no_cache) {
  auto config = load_config(config_path);
  if (no_cache) config.use_cache = false;
  const auto data = harness::load_datasets(config);
  for (const auto& w : data.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto run = harness::run_experiment(config, data);
  print_metrics_table(run.results);
  for (const auto& r : run.results) {
    if (!r.error.empty()) {
      std::fprintf(stderr, "cell %s/%s failed: %s\n", std::string(to_string(r.task)).c_str(),
                   std::string(harness::to_string(r.model)).c_str(), r.error.c_str());
    }
  }
  std::printf("wrote %s\n", (config.out_dir / "report.md").string().c_str());
  return 0;
}

int cmd_serve(const fs::path& models, const std::string& host, int port, double threshold) {
  service::ServiceOptions opt;
  opt.threshold = threshold;
  const service::Service svc(service::load_registry(models), opt);
  service::HttpServer server(svc);
  const int bound = server.bind(host, port);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&server] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  std::printf("serving %zu model set(s) on http://%s:%d\n", svc.registry().sets.size(), host.c_str(), bound);
  std::fflush(stdout);
  server.listen_after_bind();
  g_stop = true;
  watcher.join();
  return 0;
}

struct IndexArgs {
  std::optional<double> fpg, insulin, tg, hdl, bmi, weight, height;
  double mg_per_mmol = kGlucoseMgPerMmol;
};

int cmd_indices(const IndexArgs& a) {
  std::optional<double> b = a.bmi;
  if (!b && a.weight && a.height) b = irkit::bmi(*a.weight, *a.height);
  auto show = [](const IndexValue& v) {
    std::printf("%-8s %.6f  %s (cutoff %g)\n", std::string(to_string(v.kind)).c_str(), v.value,
                classify(v).positive ? "IR" : "not IR", threshold(v.kind));
  };
  int shown = 0;
  if (a.insulin) {
    show(homa_ir(glucose_mgdl_to_mmol(*a.fpg, a.mg_per_mmol), *a.insulin));
    ++shown;
  }
  if (a.tg) {
    show(tyg(*a.tg, *a.fpg));
    ++shown;
  }
  if (a.tg && a.hdl && b) {
    show(mets_ir(*a.fpg, *a.tg, *b, *a.hdl));
    ++shown;
  }
  if (shown == 0) throw UsageError("nothing to compute: give --insulin, --tg, or --tg --hdl --bmi");
  return 0;
}

struct SynthArgs {
  std::size_t n = 5000;
  std::uint64_t seed = 2024;
  std::string source = "nhanes";
  double ineligible = 0.0, missing = 0.0;
  fs::path out;
};

int cmd_synth(const SynthArgs& a) {
  synth::CohortOptions o;
  o.n = a.n;
  o.seed = a.seed;
  o.source = kSources.at(a.source);
  o.ineligible_fraction = a.ineligible;
  o.missing_lab_fraction = a.missing;
  const auto recs = synth::generate_cohort(o);
  write_csv(a.out, recs);
  std::printf("wrote %zu %s rows to %s\n", recs.size(), a.source.c_str(), a.out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"irkit: insulin-resistance surrogate index toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  const auto sources = CLI::IsMember(kSources);
  const auto tasks = CLI::IsMember(task_map());
  const auto models = CLI::IsMember(model_map());

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Parse a CSV extract and report exclusions per task");
  c_ingest->add_option("csv", ingest.input, "Input CSV")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--source", ingest.source, "Column schema")->check(sources);
  c_ingest->add_option("--out", ingest.out, "Write the parsed records as canonical CSV");

  SplitArgs sp;
  auto* c_split = app.add_subcommand("split", "Assign eligible records to train/val/test");
  c_split->add_option("csv", sp.input, "Input CSV")->required()->check(CLI::ExistingFile);
  c_split->add_option("--source", sp.source, "Column schema")->check(sources);
  c_split->add_option("--task", sp.task, "Task whose exclusions apply")->check(tasks);
  c_split->add_option("--seed", sp.seed, "Split seed");
  c_split->add_flag("--stratify", sp.stratify, "Stratify by label");
  c_split->add_option("--out", sp.out, "Assignment CSV")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train one task/model cell and save its bundle");
  c_train->add_option("--config", tr.config, "Experiment config")->check(CLI::ExistingFile);
  c_train->add_option("--task", tr.task, "Task (default: first in config)")->check(tasks);
  c_train->add_option("--model", tr.model, "Model (default: first in config)")->check(models);
  c_train->add_option("--out", tr.out, "Bundle directory")->required();

  DataArgs ev;
  double ev_threshold = 0.5;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a saved bundle on a CSV");
  c_eval->add_option("--model", ev.model, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--data", ev.data, "Test CSV")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--source", ev.source, "Column schema")->check(sources);
  c_eval->add_option("--threshold", ev_threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));
  c_eval->add_option("--out", ev.out, "Output directory for metrics.csv");

  ExplainArgs ex;
  auto* c_explain = app.add_subcommand("explain", "Importance, Shapley values and dependence curves");
  c_explain->add_option("--model", ex.data.model, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  c_explain->add_option("--data", ex.data.data, "CSV of instances")->required()->check(CLI::ExistingFile);
  c_explain->add_option("--source", ex.data.source, "Column schema")->check(sources);
  c_explain->add_option("--out", ex.data.out, "Output directory");
  c_explain->add_option("--importance", ex.importance, "gain, permutation or shap")
      ->check(CLI::IsMember({"gain", "permutation", "shap"}));
  c_explain->add_option("--permutations", ex.permutations, "Shapley permutations")->check(CLI::PositiveNumber);
  c_explain->add_option("--instances", ex.instances, "Instances to attribute")->check(CLI::PositiveNumber);
  c_explain->add_option("--repeats", ex.repeats, "Permutation importance repeats")->check(CLI::PositiveNumber);
  c_explain->add_option("--seed", ex.seed, "Seed");
  c_explain->add_option("--feature", ex.features, "Dependence feature(s); default waist");
  c_explain->add_option("--units", ex.units, "probability or logit")->check(CLI::IsMember({"probability", "logit"}));

  fs::path pr_models;
  std::string pr_json;
  bool pr_explain = false;
  auto* c_predict = app.add_subcommand("predict", "Answer one PredictRequest (or ExplainRequest) JSON");
  c_predict->add_option("--models", pr_models, "Bundle root")->required()->check(CLI::ExistingDirectory);
  c_predict->add_option("--json", pr_json, "Request body, or @file")->required();
  c_predict->add_flag("--explain", pr_explain, "Treat the body as an explain request");

  fs::path rp_config;
  bool rp_no_cache = false;
  auto* c_report = app.add_subcommand("report", "Run the experiment matrix and write the report");
  c_report->add_option("--config", rp_config, "Experiment config")->check(CLI::ExistingFile);
  c_report->add_flag("--no-cache", rp_no_cache, "Ignore cached cells");

  fs::path sv_models;
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  double sv_threshold = 0.5;
  auto* c_serve = app.add_subcommand("serve", "Serve /health, /models, /predict, /whatif, /explain");
  c_serve->add_option("--models", sv_models, "Bundle root")->required()->check(CLI::ExistingDirectory);
  c_serve->add_option("--host", sv_host, "Bind address");
  c_serve->add_option("--port", sv_port, "Port (0 picks one)")->check(CLI::Range(0, 65535));
  c_serve->add_option("--threshold", sv_threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));

  IndexArgs ix;
  auto* c_indices = app.add_subcommand("indices", "Compute HOMA-IR, TyG and METS-IR from lab values");
  c_indices->add_option("--fpg", ix.fpg, "Fasting glucose, mg/dL")->required();
  c_indices->add_option("--insulin", ix.insulin, "Fasting insulin, uU/mL");
  c_indices->add_option("--tg", ix.tg, "Triglycerides, mg/dL");
  c_indices->add_option("--hdl", ix.hdl, "HDL cholesterol, mg/dL");
  c_indices->add_option("--bmi", ix.bmi, "BMI, kg/m2");
  c_indices->add_option("--weight", ix.weight, "Weight, kg");
  c_indices->add_option("--height", ix.height, "Height, cm");
  c_indices->add_option("--glucose-mg-per-mmol", ix.mg_per_mmol, "Glucose conversion factor");

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic cohort CSV");
  c_synth->add_option("--n", sy.n, "Participants")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", sy.seed, "Seed");
  c_synth->add_option("--source", sy.source, "Cohort flavour")->check(sources);
  c_synth->add_option("--ineligible", sy.ineligible, "Fraction violating exclusions")->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--missing", sy.missing, "Fraction with a blank lab")->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--out", sy.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "usage error: %s\nrun 'irkit --help' for usage\n", e.what());
    return 2;
  }

  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_split) return cmd_split(sp);
    if (*c_train) return cmd_train(tr);
    if (*c_eval) return cmd_eval(ev, ev_threshold);
    if (*c_explain) return cmd_explain(ex);
    if (*c_predict) return cmd_predict(pr_models, pr_json, pr_explain);
    if (*c_report) return cmd_report(rp_config, rp_no_cache);
    if (*c_serve) return cmd_serve(sv_models, sv_host, sv_port, sv_threshold);
    if (*c_indices) return cmd_indices(ix);
    if (*c_synth) return cmd_synth(sy);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error[config]: %s\n", e.what());
    return 1;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "error[schema]: %s\n", e.what());
    return 1;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "error[domain]: %s\n", e.what());
    return 1;
  } catch (const NumericFault& e) {
    std::fprintf(stderr, "error[numeric]: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
