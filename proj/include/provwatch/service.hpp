#pragma once

// Run store (on-disk layout of one detection run) and the triage service behind the
// HTTP API: queue listing, summaries, analyst verdicts and retraining on false positives.
//
//   run/
//     run.json            generation, inputs, counts, thresholds in force
//     model.bin/.json     model and training sidecar
//     thresholds.json
//     alerts.jsonl        one alert per flagged queue, in flagging order
//     queues.json         every queue with score, flag and window range
//     windows.jsonl       per-window σ, score and suspicious nodes
//     summaries/          {queue}_{rank}.dot and {queue}.json manifests
//     verdicts.jsonl      append-only analyst labels
//     history/gen-N/      artefacts replaced by a retrain

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "provwatch/pipeline.hpp"

// after Eigen: <resolv.h>, pulled in here, defines a `_res` macro that clashes with Eigen
#include <httplib.h>

namespace provwatch::service {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PipelineError("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file_atomic(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PipelineError("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw PipelineError("cannot write '" + p.string() + "'");
  }
  fs::rename(tmp, p);
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw PipelineError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

struct RunPaths {
  fs::path dir;

  fs::path run() const { return dir / "run.json"; }
  fs::path model() const { return dir / "model.bin"; }
  fs::path model_sidecar() const { return dir / "model.json"; }
  fs::path thresholds() const { return dir / "thresholds.json"; }
  fs::path alerts() const { return dir / "alerts.jsonl"; }
  fs::path queues() const { return dir / "queues.json"; }
  fs::path windows() const { return dir / "windows.jsonl"; }
  fs::path summaries() const { return dir / "summaries"; }
  fs::path manifest(std::size_t q) const { return summaries() / (std::to_string(q) + ".json"); }
  fs::path dot(std::size_t q, std::size_t rank) const { return summaries() / investigate::summary_file_name(q, rank); }
  fs::path verdicts() const { return dir / "verdicts.jsonl"; }
  fs::path history(std::size_t generation) const { return dir / "history" / ("gen-" + std::to_string(generation)); }
};

/// Sidecar path for a model file: m.bin -> m.json.
inline fs::path sidecar_path(const fs::path& model) {
  fs::path p = model;
  p.replace_extension(".json");
  return p;
}

inline json model_config_json(const tgn::ModelConfig& c) {
  return {{"feature_dim", c.feature_dim}, {"state_dim", c.state_dim}, {"neighbors", c.neighbors},
          {"embed_dim", c.embed_dim},     {"time_dim", c.time_dim},   {"heads", c.heads},
          {"seed", c.seed},               {"hash_seed", c.hash_seed}};
}

inline json train_sidecar(const tgn::ModelConfig& mc, const tgn::TrainConfig& tc, const tgn::TrainReport& rep,
                          const std::string& input, std::size_t events) {
  return {{"v", 1},
          {"config", model_config_json(mc)},
          {"train", {{"epochs", tc.epochs}, {"batch_size", tc.batch_size}, {"learning_rate", tc.learning_rate},
                     {"clip_norm", tc.clip_norm}, {"seed", tc.seed}}},
          {"input", input},
          {"events", events},
          {"epoch_loss", rep.epoch_loss},
          {"steps", rep.steps},
          {"seconds", rep.seconds}};
}

// ---------------------------------------------------------------------------
// Writing a run

inline json suspicious_json(const std::vector<std::pair<NodeId, double>>& nodes, const EntityCatalog& catalog) {
  json out = json::array();
  for (const auto& [v, idf] : nodes) out.push_back({{"id", catalog[v].id}, {"attr", catalog[v].attribute}, {"idf", idf}});
  return out;
}

inline json queue_json(const detect::WindowQueue& q, const detect::Detector& det) {
  const auto& ws = det.windows();
  json j = {{"id", q.id},
            {"score", q.score},
            {"flagged", q.flagged},
            {"window_indices", q.windows},
            {"start_ts", ws[q.windows.front()].start},
            {"end_ts", ws[q.windows.back()].end},
            {"suspicious_nodes", suspicious_json(det.queue_nodes(q), det.catalog())}};
  j["flagged_at_ts"] = q.flagged ? json(q.flagged_at) : json(nullptr);
  return j;
}

inline json window_json(const detect::TimeWindow& w, const EntityCatalog& catalog) {
  json susp = json::array();
  for (const auto& s : w.suspicious) susp.push_back({{"id", catalog[s.node].id}, {"idf", s.idf}});
  return {{"index", w.index},
          {"start_ts", w.start},
          {"end_ts", w.end},
          {"events", w.events.size()},
          {"sigma", w.sigma ? json(*w.sigma) : json(nullptr)},
          {"score", w.score},
          {"suspicious", std::move(susp)}};
}

struct RunInfo {
  std::size_t generation = 0;
  std::string input;   // event log the run was detected on
  std::string labels;  // ground truth, optional
  std::string allowlist;
};

/// Writes every artefact of a finished (or in-progress) detection except the model,
/// thresholds and verdict log.
inline void write_detection(const RunPaths& rp, const pipeline::DetectionRun& run, const detect::Thresholds& th,
                            const RunInfo& info) {
  const detect::Detector& det = *run.detector;
  const EntityCatalog& catalog = det.catalog();
  fs::create_directories(rp.dir);

  std::string alerts;
  for (const auto& a : det.alerts()) alerts += detect::alert_to_json(a, catalog).dump() + "\n";
  write_file_atomic(rp.alerts(), alerts);

  json queues = json::array();
  for (const auto& q : det.queues().queues()) queues.push_back(queue_json(q, det));
  write_file_atomic(rp.queues(), json{{"v", 1}, {"beta", th.beta}, {"queues", std::move(queues)}}.dump(1) + "\n");

  std::string windows;
  for (const auto& w : det.windows()) windows += window_json(w, catalog).dump() + "\n";
  write_file_atomic(rp.windows(), windows);

  fs::create_directories(rp.summaries());
  for (const auto& inv : run.investigations) {
    for (const auto& sg : inv.summaries) write_file_atomic(rp.dot(inv.queue_id, sg.rank), investigate::emit_dot(sg, catalog));
    write_file_atomic(rp.manifest(inv.queue_id), investigate::manifest_json(inv, catalog).dump(1) + "\n");
  }

  std::size_t events = 0;
  for (const auto& w : det.windows()) events += w.events.size();
  json meta = {{"v", 1},
               {"generation", info.generation},
               {"input", info.input},
               {"labels", info.labels.empty() ? json(nullptr) : json(info.labels)},
               {"allowlist", info.allowlist.empty() ? json(nullptr) : json(info.allowlist)},
               {"windows", det.windows().size()},
               {"events", events},
               {"queues", det.queues().queues().size()},
               {"flagged", det.flagged().size()},
               {"alpha", th.alpha},
               {"beta", std::isinf(th.beta) ? json(nullptr) : json(th.beta)},
               {"window_ns", th.window_ns}};
  write_file_atomic(rp.run(), meta.dump(1) + "\n");
}

inline RunInfo read_run_info(const RunPaths& rp) {
  const json j = read_json(rp.run());
  RunInfo info;
  info.generation = j.value("generation", std::size_t{0});
  info.input = j.value("input", std::string());
  if (j.contains("labels") && j["labels"].is_string()) info.labels = j["labels"].get<std::string>();
  if (j.contains("allowlist") && j["allowlist"].is_string()) info.allowlist = j["allowlist"].get<std::string>();
  return info;
}

inline detect::Thresholds load_thresholds(const fs::path& p) {
  try {
    return detect::Thresholds::from_json(read_json(p));
  } catch (const json::exception& e) {
    throw PipelineError("bad thresholds file '" + p.string() + "': " + e.what());
  }
}

inline void save_thresholds(const fs::path& p, const detect::Thresholds& th) {
  write_file_atomic(p, th.to_json().dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// Triage service

class NotFound : public PipelineError {
 public:
  using PipelineError::PipelineError;
};
class BadRequest : public PipelineError {
 public:
  using PipelineError::PipelineError;
};
class Busy : public PipelineError {
 public:
  using PipelineError::PipelineError;
};

enum class Verdict { FalsePositive, TruePositive };

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "fp") return Verdict::FalsePositive;
  if (s == "tp") return Verdict::TruePositive;
  return std::nullopt;
}

inline std::string_view to_string(Verdict v) { return v == Verdict::FalsePositive ? "fp" : "tp"; }

struct ServiceOptions {
  tgn::TrainConfig retrain = [] {
    tgn::TrainConfig c;
    c.epochs = 3;
    return c;
  }();
  tgn::ScoreOptions score;
  investigate::InvestigateConfig investigate;
  /// Called once a retrain has claimed the service, before any work.
  std::function<void()> on_retrain_start;
  std::function<std::int64_t()> clock = [] {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
};

/// Immutable view of a run served to readers.
struct Snapshot {
  std::size_t generation = 0;
  bool complete = true;
  json queues = json::array();
  std::map<std::size_t, std::size_t> by_id;  // queue id -> position in `queues`
};

class Service {
 public:
  explicit Service(fs::path run_dir, ServiceOptions opts = {}) : paths_{std::move(run_dir)}, opts_(std::move(opts)) {
    if (!fs::exists(paths_.run())) throw PipelineError("'" + paths_.dir.string() + "' is not a run directory");
    load_verdicts();
    reload();
  }

  const RunPaths& paths() const { return paths_; }

  /// Re-reads the queue list from disk and publishes it.
  void reload(bool complete = true) {
    auto s = std::make_shared<Snapshot>();
    s->generation = read_run_info(paths_).generation;
    s->complete = complete;
    const json q = read_json(paths_.queues());
    s->queues = q.at("queues");
    for (std::size_t i = 0; i < s->queues.size(); ++i) s->by_id[s->queues[i].at("id").get<std::size_t>()] = i;
    std::lock_guard lock(snapshot_mu_);
    snapshot_ = std::move(s);
  }

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snapshot_mu_);
    return snapshot_;
  }

  json health() const {
    auto s = snapshot();
    return {{"v", 1},
            {"status", "ok"},
            {"generation", s->generation},
            {"complete", s->complete},
            {"retraining", retraining_.load()}};
  }

  json queues() const {
    auto s = snapshot();
    json out = json::array();
    std::lock_guard lock(verdict_mu_);
    for (const auto& q : s->queues) {
      json item = q;
      auto it = verdicts_.find({s->generation, q.at("id").get<std::size_t>()});
      item["verdict"] = it == verdicts_.end() ? json(nullptr) : json(std::string(to_string(it->second)));
      out.push_back(std::move(item));
    }
    return {{"v", 1}, {"generation", s->generation}, {"queues", std::move(out)}};
  }

  json summary(std::size_t id) const {
    auto s = snapshot();
    if (!s->by_id.count(id)) throw NotFound("unknown queue " + std::to_string(id));
    json out = {{"v", 1}, {"queue_id", id}};
    const fs::path mf = paths_.manifest(id);
    if (!fs::exists(mf)) {
      out["manifest"] = nullptr;
      out["summaries"] = json::array();
      return out;
    }
    json manifest = read_json(mf);
    json graphs = json::array();
    for (const auto& c : manifest.at("communities")) {
      const std::string file = c.at("file").get<std::string>();
      graphs.push_back({{"rank", c.at("rank")}, {"file", file}, {"dot", read_file(paths_.summaries() / file)}});
    }
    out["manifest"] = std::move(manifest);
    out["summaries"] = std::move(graphs);
    return out;
  }

  /// Raw DOT text of one summary graph.
  std::string summary_dot(std::size_t id, std::size_t rank) const {
    auto s = snapshot();
    if (!s->by_id.count(id)) throw NotFound("unknown queue " + std::to_string(id));
    const fs::path p = paths_.dot(id, rank);
    if (!fs::exists(p)) throw NotFound("queue " + std::to_string(id) + " has no summary " + std::to_string(rank));
    return read_file(p);
  }

  /// Records a verdict. Repeating the current verdict of a queue writes nothing.
  json verdict(std::size_t id, const json& body) {
    if (!body.is_object() || !body.contains("verdict") || !body["verdict"].is_string())
      throw BadRequest("body must be an object with \"verdict\": \"fp\" | \"tp\"");
    const auto v = parse_verdict(body["verdict"].get<std::string>());
    if (!v) throw BadRequest("verdict must be \"fp\" or \"tp\"");
    std::string analyst;
    if (body.contains("analyst")) {
      if (!body["analyst"].is_string()) throw BadRequest("analyst must be a string");
      analyst = body["analyst"].get<std::string>();
    }
    if (retraining_) throw Busy("retrain in progress");
    std::lock_guard writer(writer_mu_);
    auto s = snapshot();
    if (!s->by_id.count(id)) throw NotFound("unknown queue " + std::to_string(id));
    std::lock_guard lock(verdict_mu_);
    const auto key = std::make_pair(s->generation, id);
    auto it = verdicts_.find(key);
    const bool changed = it == verdicts_.end() || it->second != *v;
    if (changed) {
      json rec = {{"queue_id", id},
                  {"verdict", std::string(to_string(*v))},
                  {"analyst", analyst},
                  {"ts", opts_.clock()},
                  {"generation", s->generation}};
      std::ofstream out(paths_.verdicts(), std::ios::app | std::ios::binary);
      if (!out) throw PipelineError("cannot append to verdict log");
      out << rec.dump() << '\n';
      verdicts_[key] = *v;
    }
    return {{"v", 1}, {"queue_id", id}, {"verdict", std::string(to_string(*v))}, {"recorded", changed}};
  }

  /// Retrains on the windows of every queue marked fp in the current generation,
  /// re-detects the run's input with unchanged thresholds and publishes the result.
  json retrain() {
    bool expected = false;
    if (!retraining_.compare_exchange_strong(expected, true)) throw Busy("retrain already in progress");
    struct Reset {
      std::atomic<bool>& f;
      ~Reset() { f = false; }
    } reset{retraining_};
    if (opts_.on_retrain_start) opts_.on_retrain_start();
    std::lock_guard writer(writer_mu_);
    return retrain_locked();
  }

  bool retraining() const { return retraining_; }

 private:
  using Key = std::pair<std::size_t, std::size_t>;

  void load_verdicts() {
    if (!fs::exists(paths_.verdicts())) return;
    std::ifstream in(paths_.verdicts());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      auto v = parse_verdict(j.at("verdict").get<std::string>());
      if (!v) continue;
      verdicts_[{j.value("generation", std::size_t{0}), j.at("queue_id").get<std::size_t>()}] = *v;
    }
  }

  static json side_json(const detect::Detector& det, const std::vector<evaluate::TruthInterval>* truth,
                        std::size_t split, bool have_truth) {
    auto view = evaluate::view_of(det);
    std::size_t flagged = 0;
    for (std::size_t i = split; i < view.anomalous.size(); ++i) flagged += view.anomalous[i];
    json j = {{"flagged_windows", flagged}, {"flagged_queues", det.flagged().size()}};
    if (have_truth) {
      auto m = pipeline::remainder_metrics(det, *truth, split, {});
      j["fp"] = m.fp;
      j["metrics"] = evaluate::metrics_json(m);
    } else {
      j["fp"] = nullptr;
      j["metrics"] = nullptr;
    }
    return j;
  }

  json retrain_locked() {
    const RunInfo info = read_run_info(paths_);
    std::set<std::size_t> fp_queues;
    {
      std::lock_guard lock(verdict_mu_);
      for (const auto& [key, v] : verdicts_)
        if (key.first == info.generation && v == Verdict::FalsePositive) fp_queues.insert(key.second);
    }
    if (info.input.empty()) throw PipelineError("run has no recorded input");

    auto params = tgn::load_model<float>(paths_.model().string());
    const auto th = load_thresholds(paths_.thresholds());
    AllowList allow;
    if (!info.allowlist.empty()) allow = AllowList::load(info.allowlist);
    const EventLog log = load_event_log(info.input, allow);
    std::vector<evaluate::TruthInterval> truth;
    const bool have_truth = !info.labels.empty();
    if (have_truth) truth = evaluate::load_truth(info.labels);

    detect::DetectConfig dc;
    auto scored = pipeline::score_log(params, log, opts_.score);
    auto first = pipeline::detect_scored(scored, th, log.catalog, dc, opts_.investigate, false);

    std::set<std::size_t> fp_windows;
    for (std::size_t q : fp_queues)
      if (q < first.detector->queues().queues().size())
        for (std::size_t w : first.detector->queues()[q].windows) fp_windows.insert(w);
    const std::size_t split = fp_windows.empty() ? 0 : *fp_windows.rbegin() + 1;

    json out = {{"v", 1},
                {"retrained", !fp_windows.empty()},
                {"fp_queues", fp_queues},
                {"fp_windows", fp_windows},
                {"remainder_from_window", split},
                {"before", side_json(*first.detector, &truth, split, have_truth)}};
    if (fp_windows.empty()) {
      out["retrain_events"] = 0;
      out["generation"] = info.generation;
      out["after"] = out["before"];
      return out;
    }

    std::vector<Event> events;
    for (std::size_t w : fp_windows)
      for (const auto& r : first.detector->windows()[w].events) events.push_back(r.ev);
    auto fc = pipeline::features_for(params, log.catalog);
    auto report = tgn::retrain(params, std::span<const Event>(events), fc, opts_.retrain);
    scored = pipeline::score_log(params, log, opts_.score);
    auto second = pipeline::detect_scored(scored, th, log.catalog, dc, opts_.investigate, true);
    out["retrain_events"] = events.size();
    out["retrain_seconds"] = report.seconds;
    out["after"] = side_json(*second.detector, &truth, split, have_truth);

    // archive the current generation, then publish the new one
    const fs::path hist = paths_.history(info.generation);
    fs::create_directories(hist);
    for (const fs::path& p : {paths_.model(), paths_.model_sidecar(), paths_.alerts(), paths_.queues(),
                              paths_.windows(), paths_.run()})
      if (fs::exists(p)) fs::copy_file(p, hist / p.filename(), fs::copy_options::overwrite_existing);
    if (fs::exists(paths_.summaries()))
      fs::copy(paths_.summaries(), hist / "summaries",
               fs::copy_options::recursive | fs::copy_options::overwrite_existing);

    {
      std::ostringstream os(std::ios::binary);
      tgn::save_model(os, params);
      write_file_atomic(paths_.model(), os.str());
    }
    json sidecar = fs::exists(paths_.model_sidecar()) ? read_json(paths_.model_sidecar()) : json{{"v", 1}};
    sidecar["retrain"].push_back({{"generation", info.generation + 1},
                                  {"events", events.size()},
                                  {"epochs", opts_.retrain.epochs},
                                  {"epoch_loss", report.epoch_loss}});
    write_file_atomic(paths_.model_sidecar(), sidecar.dump(1) + "\n");
    fs::remove_all(paths_.summaries());
    RunInfo next = info;
    next.generation = info.generation + 1;
    write_detection(paths_, second, th, next);
    out["generation"] = next.generation;
    reload();
    return out;
  }

  RunPaths paths_;
  ServiceOptions opts_;
  mutable std::mutex snapshot_mu_;
  std::shared_ptr<const Snapshot> snapshot_;
  mutable std::mutex verdict_mu_;
  std::map<Key, Verdict> verdicts_;
  std::mutex writer_mu_;
  std::atomic<bool> retraining_{false};
};

/// Runs detection over a log while publishing boundary-consistent snapshots to the
/// service after every closed window.
template <class T>
void run_live(Service& svc, const tgn::ModelParams<T>& params, const detect::Thresholds& th, const EventLog& log,
              const RunInfo& info, const ServiceOptions& opts = {}) {
  detect::DetectConfig dc;
  dc.window_ns = th.window_ns;
  dc.k_sigma = th.k_sigma;
  dc.k_alpha = th.k_alpha;
  pipeline::DetectionRun run;
  run.detector = std::make_unique<detect::Detector>(dc, th, log.catalog);
  auto publish = [&](bool complete) {
    run.investigations.clear();
    for (const auto* q : run.detector->flagged())
      run.investigations.push_back(investigate::investigate_queue(*q, run.detector->windows(), log.catalog, opts.investigate));
    write_detection(svc.paths(), run, th, info);
    svc.reload(complete);
  };
  std::size_t published = 0;
  auto fc = pipeline::features_for(params, log.catalog);
  tgn::score_stream(
      params, std::span<const Event>(log.events), fc,
      [&](const tgn::ScoredEvent<T>& s) {
        run.detector->push(*s.event, static_cast<float>(s.re));
        if (run.detector->windows().size() != published) {
          published = run.detector->windows().size();
          publish(false);
        }
      },
      opts.score);
  run.detector->finish();
  publish(true);
}

// ---------------------------------------------------------------------------
// HTTP

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, status, {{"v", 1}, {"error", msg}});
}

inline std::optional<std::size_t> parse_id(const std::string& s) {
  if (s.empty() || s.size() > 18) return std::nullopt;
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFound& e) {
    send_error(res, 404, e.what());
  } catch (const BadRequest& e) {
    send_error(res, 400, e.what());
  } catch (const Busy& e) {
    send_error(res, 409, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

/// Registers the API routes. `ui_dir`, when given, is served at /.
inline void mount(httplib::Server& srv, Service& svc, const std::string& ui_dir = {}) {
  srv.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.health()); });
  });
  srv.Get("/queues", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.queues()); });
  });
  srv.Get(R"(/queues/([^/]+)/summary)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto id = parse_id(req.matches[1]);
      if (!id) throw NotFound("unknown queue " + std::string(req.matches[1]));
      send_json(res, 200, svc.summary(*id));
    });
  });
  srv.Get(R"(/queues/([^/]+)/summary/([^/]+)\.dot)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto id = parse_id(req.matches[1]);
      auto rank = parse_id(req.matches[2]);
      if (!id || !rank) throw NotFound("no such summary");
      res.status = 200;
      res.set_content(svc.summary_dot(*id, *rank), "text/vnd.graphviz");
    });
  });
  srv.Post(R"(/queues/([^/]+)/verdict)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto id = parse_id(req.matches[1]);
      if (!id) throw NotFound("unknown queue " + std::string(req.matches[1]));
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        throw BadRequest("body is not JSON");
      }
      send_json(res, 200, svc.verdict(*id, body));
    });
  });
  srv.Post("/retrain", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.retrain()); });
  });
  if (!ui_dir.empty()) srv.set_mount_point("/", ui_dir);
}

}  // namespace provwatch::service
