#pragma once

// Command-line front end. `run_cli` returns the process exit code: 0 on success,
// 2 on usage errors, 1 when the pipeline fails.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "provwatch/service.hpp"

namespace provwatch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitPipeline = 1;
inline constexpr int kExitUsage = 2;

struct ModelFlags {
  tgn::ModelConfig model;
  tgn::TrainConfig train;
};

struct DetectFlags {
  double tw_minutes = 15;
  double k_sigma = 1.5;
  double k_alpha = 1.0;
  double idle_hours = 24;

  detect::DetectConfig config() const {
    detect::DetectConfig c;
    c.window_ns = static_cast<Timestamp>(tw_minutes * double(detect::kNanosPerMinute));
    c.k_sigma = k_sigma;
    c.k_alpha = k_alpha;
    c.queue_idle_ns = static_cast<Timestamp>(idle_hours * 60.0 * double(detect::kNanosPerMinute));
    return c;
  }
};

inline AllowList allowlist_from(const std::string& path) { return path.empty() ? AllowList{} : AllowList::load(path); }

inline std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

inline void copy_into(const fs::path& from, const fs::path& to) {
  if (fs::exists(to) && fs::equivalent(from, to)) return;
  fs::create_directories(to.parent_path());
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_train(const std::string& input, const std::string& out, const std::string& allow, const ModelFlags& f,
                     std::ostream& os) {
  const EventLog log = load_event_log(input, allowlist_from(allow));
  tgn::TrainReport rep;
  auto p = pipeline::train_model<float>(log, f.model, f.train, &rep);
  tgn::save_model(out, p);
  service::write_file_atomic(service::sidecar_path(out),
                             service::train_sidecar(f.model, f.train, rep, absolute(input), log.events.size()).dump(1) + "\n");
  os << "trained on " << log.events.size() << " events in " << rep.seconds << " s";
  if (!rep.epoch_loss.empty()) os << ", final mean RE " << rep.epoch_loss.back();
  os << "\n";
  return 0;
}

inline int cmd_calibrate(const std::string& model, const std::string& validation, const std::string& train,
                         const std::string& out, const std::string& allow, const DetectFlags& d, std::ostream& os) {
  const auto p = tgn::load_model<float>(model);
  const AllowList al = allowlist_from(allow);
  const auto cfg = d.config();
  std::optional<EventLog> tr;
  if (!train.empty()) tr = load_event_log(train, al);
  const EventLog val = load_event_log(validation, al);
  const auto scored = pipeline::score_log(p, val);
  const auto th = detect::calibrate_thresholds(scored, val.catalog, pipeline::history_of(tr ? &*tr : nullptr, cfg), cfg);
  service::save_thresholds(out, th);
  os << "alpha " << th.alpha << " beta " << th.beta << " over " << th.idf.windows() << " windows\n";
  return 0;
}

inline int cmd_detect(const std::string& model, const std::string& thresholds, const std::string& input,
                      const std::string& out, const std::string& labels, const std::string& allow, bool investigate_flagged,
                      std::uint64_t louvain_seed, std::ostream& os) {
  const service::RunPaths rp{out};
  fs::create_directories(rp.dir);
  const auto p = tgn::load_model<float>(model);
  const auto th = service::load_thresholds(thresholds);
  const EventLog log = load_event_log(input, allowlist_from(allow));
  const auto scored = pipeline::score_log(p, log);
  investigate::InvestigateConfig icfg;
  icfg.seed = louvain_seed;
  const auto run = pipeline::detect_scored(scored, th, log.catalog, {}, icfg, investigate_flagged);
  copy_into(model, rp.model());
  if (fs::exists(service::sidecar_path(model))) copy_into(service::sidecar_path(model), rp.model_sidecar());
  copy_into(thresholds, rp.thresholds());
  service::RunInfo info;
  info.input = absolute(input);
  info.labels = absolute(labels);
  info.allowlist = absolute(allow);
  service::write_detection(rp, run, th, info);
  os << run.detector->windows().size() << " windows, " << run.detector->queues().queues().size() << " queues, "
     << run.detector->flagged().size() << " flagged\n";
  return 0;
}

inline int cmd_investigate(const std::string& run_dir, const std::vector<std::size_t>& queues, std::uint64_t seed,
                           std::ostream& os) {
  const service::RunPaths rp{run_dir};
  const auto info = service::read_run_info(rp);
  const auto p = tgn::load_model<float>(rp.model().string());
  const auto th = service::load_thresholds(rp.thresholds());
  const EventLog log = load_event_log(info.input, allowlist_from(info.allowlist));
  const auto scored = pipeline::score_log(p, log);
  auto run = pipeline::detect_scored(scored, th, log.catalog, {}, {}, false);
  const auto& det = *run.detector;
  std::vector<std::size_t> ids = queues;
  if (ids.empty())
    for (const auto* q : det.flagged()) ids.push_back(q->id);
  investigate::InvestigateConfig icfg;
  icfg.seed = seed;
  for (std::size_t id : ids) {
    if (id >= det.queues().queues().size()) throw PipelineError("unknown queue " + std::to_string(id));
    const auto inv = investigate::investigate_queue(det.queues()[id], det.windows(), log.catalog, icfg);
    for (const auto& sg : inv.summaries) service::write_file_atomic(rp.dot(id, sg.rank), investigate::emit_dot(sg, log.catalog));
    service::write_file_atomic(rp.manifest(id), investigate::manifest_json(inv, log.catalog).dump(1) + "\n");
    os << "queue " << id << ": " << inv.queue_edges << " edges -> " << inv.summary_edges() << " in "
       << inv.summaries.size() << " summaries\n";
  }
  return 0;
}

/// Per-window flags and scores recorded in a run's queues.json.
inline evaluate::DetectionView view_from_run(const service::RunPaths& rp) {
  evaluate::DetectionView v;
  std::ifstream in(rp.windows());
  if (!in) throw PipelineError("cannot read '" + rp.windows().string() + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json w = json::parse(line);
    v.windows.push_back({w.at("index").get<std::size_t>(), w.at("start_ts").get<Timestamp>(), w.at("end_ts").get<Timestamp>()});
  }
  v.anomalous.assign(v.windows.size(), false);
  v.scores.assign(v.windows.size(), 0.0);
  const json q = service::read_json(rp.queues());
  for (const auto& item : q.at("queues")) {
    const double score = item.at("score").get<double>();
    const bool flagged = item.at("flagged").get<bool>();
    for (const auto& w : item.at("window_indices")) {
      const std::size_t i = w.get<std::size_t>();
      if (i >= v.windows.size()) throw PipelineError("queues.json references missing window " + std::to_string(i));
      v.scores[i] = std::max(v.scores[i], score);
      if (flagged) v.anomalous[i] = true;
    }
  }
  return v;
}

inline int cmd_evaluate(const std::string& run_dir, std::string labels, const std::string& out, const std::string& csv,
                        const evaluate::LabelOptions& lo, std::ostream& os) {
  const service::RunPaths rp{run_dir};
  if (labels.empty()) labels = service::read_run_info(rp).labels;
  if (labels.empty()) throw PipelineError("no ground-truth labels given and none recorded in the run");
  const auto truth = evaluate::load_truth(labels);
  const auto view = view_from_run(rp);
  const auto wl = evaluate::label_windows(view.windows, view.anomalous, truth, lo);
  const auto m = evaluate::compute_metrics(wl, view.scores);
  json report = evaluate::metrics_json(m);
  report["windows"] = evaluate::labels_json(wl);
  service::write_file_atomic(out.empty() ? rp.dir / "metrics.json" : fs::path(out), report.dump(1) + "\n");
  service::write_file_atomic(csv.empty() ? rp.dir / "confusion.csv" : fs::path(csv), evaluate::confusion_csv(m));
  os << evaluate::metrics_json(m).dump() << "\n";
  return 0;
}

inline int cmd_retrain_fp(const std::string& model, const std::string& thresholds, const std::string& input,
                          const std::string& labels, const std::string& out, const std::string& report_path,
                          std::size_t split, const tgn::TrainConfig& tc, std::ostream& os) {
  auto p = tgn::load_model<float>(model);
  const auto th = service::load_thresholds(thresholds);
  const EventLog log = load_event_log(input);
  const auto truth = evaluate::load_truth(labels);
  pipeline::FpLoopConfig fc;
  fc.split_window = split;
  fc.retrain = tc;
  const auto r = pipeline::run_fp_loop(p, th, log, truth, {}, fc);
  tgn::save_model(out, p);
  json rep = {{"v", 1},
              {"fp_windows", r.fp_windows},
              {"retrain_events", r.retrain_events},
              {"remainder_from_window", split},
              {"before", evaluate::metrics_json(r.before)},
              {"after", evaluate::metrics_json(r.after)}};
  if (!report_path.empty()) service::write_file_atomic(report_path, rep.dump(1) + "\n");
  os << rep.dump() << "\n";
  return 0;
}

inline int cmd_generate(const evaluate::ScenarioSpec& spec, const std::string& out, std::ostream& os) {
  const auto sc = evaluate::generate_scenario(spec);
  evaluate::write_scenario(sc, out);
  os << "train " << sc.train.size() << ", validation " << sc.validation.size() << ", test " << sc.test.size()
     << " events (" << sc.attack_events << " attack)\n";
  return 0;
}

inline std::atomic<httplib::Server*> g_server{nullptr};

inline void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

struct ServeFlags {
  std::string run;
  std::string listen = "127.0.0.1:8642";
  std::string ui;
  bool live = false;
  std::string model, thresholds, input, labels;
  std::size_t retrain_epochs = 3;
};

inline int cmd_serve(const ServeFlags& f, std::ostream& os) {
  const auto colon = f.listen.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--listen", "expected host:port");
  const std::string host = f.listen.substr(0, colon);
  const int port = std::stoi(f.listen.substr(colon + 1));
  const service::RunPaths rp{f.run};

  service::ServiceOptions opts;
  opts.retrain.epochs = f.retrain_epochs;
  std::thread live;
  std::optional<EventLog> log;
  std::optional<tgn::ModelParams<float>> params;
  detect::Thresholds th;
  service::RunInfo info;
  if (f.live) {
    if (f.model.empty() || f.thresholds.empty() || f.input.empty())
      throw CLI::ValidationError("--live", "needs --model, --thresholds and --input");
    fs::create_directories(rp.dir);
    copy_into(f.model, rp.model());
    copy_into(f.thresholds, rp.thresholds());
    params = tgn::load_model<float>(f.model);
    th = service::load_thresholds(f.thresholds);
    log = load_event_log(f.input);
    info.input = absolute(f.input);
    info.labels = absolute(f.labels);
    pipeline::DetectionRun empty;
    empty.detector = std::make_unique<detect::Detector>(detect::DetectConfig{}, th, log->catalog);
    service::write_detection(rp, empty, th, info);
  }
  service::Service svc(rp.dir, opts);
  if (f.live)
    live = std::thread([&] {
      try {
        service::run_live(svc, *params, th, *log, info, opts);
      } catch (const std::exception& e) {
        std::cerr << "live detection failed: " << e.what() << "\n";
      }
    });

  httplib::Server srv;
  service::mount(srv, svc, f.ui);
  g_server = &srv;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  os << "serving " << rp.dir.string() << " on http://" << host << ":" << port << "\n" << std::flush;
  const bool ok = srv.listen(host, port);
  g_server = nullptr;
  if (live.joinable()) live.join();
  if (!ok) throw PipelineError("cannot listen on " + f.listen);
  return 0;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"provwatch: provenance-graph intrusion detection", "provwatch"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::function<int()> action;

  // train
  auto* train = app.add_subcommand("train", "train a model on a benign event log");
  std::string t_input, t_out, t_allow;
  ModelFlags mf;
  train->add_option("--input", t_input, "benign event log (JSON lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", t_out, "model file to write")->required();
  train->add_option("--allowlist", t_allow, "allow-list file")->check(CLI::ExistingFile);
  train->add_option("--epochs", mf.train.epochs)->capture_default_str();
  train->add_option("--batch-size", mf.train.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", mf.train.learning_rate)->capture_default_str();
  train->add_option("--clip", mf.train.clip_norm)->capture_default_str();
  train->add_option("--train-seed", mf.train.seed)->capture_default_str();
  train->add_option("--feature-dim", mf.model.feature_dim)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--state-dim", mf.model.state_dim)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--neighbors", mf.model.neighbors)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--embed-dim", mf.model.embed_dim)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--time-dim", mf.model.time_dim)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--heads", mf.model.heads)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--seed", mf.model.seed, "parameter initialisation seed")->capture_default_str();
  train->add_option("--hash-seed", mf.model.hash_seed)->capture_default_str();
  train->callback([&] { action = [&] { return cmd_train(t_input, t_out, t_allow, mf, out); }; });

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "derive alpha and beta from a benign validation log");
  std::string c_model, c_val, c_train, c_out, c_allow;
  DetectFlags df;
  cal->add_option("--model", c_model)->required()->check(CLI::ExistingFile);
  cal->add_option("--validation", c_val)->required()->check(CLI::ExistingFile);
  cal->add_option("--train", c_train, "training log, seeds the entity history")->check(CLI::ExistingFile);
  cal->add_option("--out", c_out, "thresholds JSON to write")->required();
  cal->add_option("--allowlist", c_allow)->check(CLI::ExistingFile);
  cal->add_option("--tw-minutes", df.tw_minutes)->capture_default_str()->check(CLI::PositiveNumber);
  cal->add_option("--k-sigma", df.k_sigma)->capture_default_str();
  cal->add_option("--k-alpha", df.k_alpha)->capture_default_str();
  cal->add_option("--queue-idle-hours", df.idle_hours)->capture_default_str()->check(CLI::PositiveNumber);
  cal->callback([&] { action = [&] { return cmd_calibrate(c_model, c_val, c_train, c_out, c_allow, df, out); }; });

  // detect
  auto* det = app.add_subcommand("detect", "score a log, build queues and write a run directory");
  std::string d_model, d_th, d_input, d_out, d_labels, d_allow;
  bool d_no_inv = false;
  std::uint64_t d_seed = 0;
  det->add_option("--model", d_model)->required()->check(CLI::ExistingFile);
  det->add_option("--thresholds", d_th)->required()->check(CLI::ExistingFile);
  det->add_option("--input", d_input)->required()->check(CLI::ExistingFile);
  det->add_option("--out", d_out, "run directory")->required();
  det->add_option("--labels", d_labels, "ground truth recorded with the run")->check(CLI::ExistingFile);
  det->add_option("--allowlist", d_allow)->check(CLI::ExistingFile);
  det->add_flag("--no-investigate", d_no_inv, "skip summary graphs");
  det->add_option("--louvain-seed", d_seed)->capture_default_str();
  det->callback([&] {
    action = [&] { return cmd_detect(d_model, d_th, d_input, d_out, d_labels, d_allow, !d_no_inv, d_seed, out); };
  });

  // investigate
  auto* inv = app.add_subcommand("investigate", "(re)build summary graphs for queues of a run");
  std::string i_run;
  std::vector<std::size_t> i_queues;
  std::uint64_t i_seed = 0;
  inv->add_option("--run", i_run)->required()->check(CLI::ExistingDirectory);
  inv->add_option("--queue", i_queues, "queue id (repeatable); default every flagged queue");
  inv->add_option("--louvain-seed", i_seed)->capture_default_str();
  inv->callback([&] { action = [&] { return cmd_investigate(i_run, i_queues, i_seed, out); }; });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "window-level metrics of a run against ground truth");
  std::string e_run, e_labels, e_out, e_csv;
  evaluate::LabelOptions lo;
  bool strict_gaps = false;
  ev->add_option("--run", e_run)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--labels", e_labels, "ground truth; default the one recorded with the run")->check(CLI::ExistingFile);
  ev->add_option("--out", e_out, "metrics JSON (default run/metrics.json)");
  ev->add_option("--csv", e_csv, "confusion table (default run/confusion.csv)");
  ev->add_flag("--adjusted", lo.adjusted, "count flagged compromised-entity-active windows as TP");
  ev->add_flag("--strict-gaps", strict_gaps, "fail on windows without ground truth");
  ev->callback([&] {
    action = [&] {
      lo.gaps_are_benign = !strict_gaps;
      return cmd_evaluate(e_run, e_labels, e_out, e_csv, lo, out);
    };
  });

  // generate-scenario
  auto* gen = app.add_subcommand("generate-scenario", "write a seeded synthetic train/validation/test scenario");
  std::string g_out;
  evaluate::ScenarioSpec spec;
  bool no_attack = false;
  double g_tw = 15;
  gen->add_option("--out", g_out)->required();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--train-windows", spec.train_windows)->capture_default_str();
  gen->add_option("--validation-windows", spec.validation_windows)->capture_default_str();
  gen->add_option("--test-windows", spec.test_windows)->capture_default_str();
  gen->add_option("--events-per-window", spec.events_per_window)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--tw-minutes", g_tw)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--attack-window", spec.attack_window)->capture_default_str();
  gen->add_flag("--no-attack", no_attack);
  gen->add_option("--novel-app", spec.novel_app_windows, "test windows with the unseen backup daemon");
  gen->callback([&] {
    action = [&] {
      spec.attack = !no_attack;
      spec.window_ns = static_cast<Timestamp>(g_tw * double(detect::kNanosPerMinute));
      if (spec.attack && spec.attack_window + spec.attack_span > spec.test_windows)
        throw CLI::ValidationError("--attack-window", "attack does not fit in the test period");
      return cmd_generate(spec, g_out, out);
    };
  });

  // retrain-fp
  auto* rfp = app.add_subcommand("retrain-fp", "retrain on false-positive windows and replay the remainder");
  std::string r_model, r_th, r_input, r_labels, r_out, r_report;
  std::size_t r_split = 25;
  tgn::TrainConfig r_tc;
  r_tc.epochs = 3;
  rfp->add_option("--model", r_model)->required()->check(CLI::ExistingFile);
  rfp->add_option("--thresholds", r_th)->required()->check(CLI::ExistingFile);
  rfp->add_option("--input", r_input)->required()->check(CLI::ExistingFile);
  rfp->add_option("--labels", r_labels)->required()->check(CLI::ExistingFile);
  rfp->add_option("--out", r_out, "retrained model")->required();
  rfp->add_option("--report", r_report, "before/after metrics JSON");
  rfp->add_option("--split-window", r_split, "first window of the replayed remainder")->capture_default_str();
  rfp->add_option("--epochs", r_tc.epochs)->capture_default_str();
  rfp->callback([&] {
    action = [&] { return cmd_retrain_fp(r_model, r_th, r_input, r_labels, r_out, r_report, r_split, r_tc, out); };
  });

  // serve
  auto* srv = app.add_subcommand("serve", "serve the triage API for a run");
  ServeFlags sf;
  srv->add_option("--run", sf.run)->required();
  srv->add_option("--listen", sf.listen)->capture_default_str();
  srv->add_option("--ui", sf.ui, "static UI bundle served at /")->check(CLI::ExistingDirectory);
  srv->add_flag("--live", sf.live, "detect --input while serving, publishing after every window");
  srv->add_option("--model", sf.model)->check(CLI::ExistingFile);
  srv->add_option("--thresholds", sf.thresholds)->check(CLI::ExistingFile);
  srv->add_option("--input", sf.input)->check(CLI::ExistingFile);
  srv->add_option("--labels", sf.labels)->check(CLI::ExistingFile);
  srv->add_option("--retrain-epochs", sf.retrain_epochs)->capture_default_str();
  srv->callback([&] { action = [&] { return cmd_serve(sf, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : kExitUsage;
  }

  try {
    return action();
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitPipeline;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
}

}  // namespace provwatch::cli
