#pragma once

// Window-level evaluation (labels, confusion counts, AUC) and a seeded synthetic
// scenario generator producing train/validation/test logs with an injected attack.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "provwatch/detect.hpp"
#include "provwatch/ingest.hpp"
#include "provwatch/types.hpp"

namespace provwatch::evaluate {

// ---------------------------------------------------------------------------
// Ground truth and labels

enum class Truth { Benign, Attack, Compromised };

struct TruthInterval {
  Timestamp start = 0;
  Timestamp end = 0;
  Truth label = Truth::Benign;
};

inline std::string_view to_string(Truth t) {
  switch (t) {
    case Truth::Benign: return "benign";
    case Truth::Attack: return "attack";
    case Truth::Compromised: return "compromised-entity-active";
  }
  return "benign";
}

inline std::vector<TruthInterval> parse_truth(std::istream& in) {
  std::vector<TruthInterval> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      TruthInterval t;
      t.start = j.at("window_start_ts").get<Timestamp>();
      t.end = j.at("window_end_ts").get<Timestamp>();
      const auto label = j.at("label").get<std::string>();
      if (label == "attack")
        t.label = Truth::Attack;
      else if (label == "benign")
        t.label = Truth::Benign;
      else if (label == "compromised-entity-active")
        t.label = Truth::Compromised;
      else
        throw PipelineError("unknown label '" + label + "'");
      out.push_back(t);
    } catch (const nlohmann::json::exception& e) {
      throw PipelineError("label file line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<TruthInterval> load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open label file '" + path + "'");
  return parse_truth(in);
}

inline std::string format_truth(const TruthInterval& t) {
  nlohmann::ordered_json j;
  j["window_start_ts"] = t.start;
  j["window_end_ts"] = t.end;
  j["label"] = std::string(to_string(t.label));
  return j.dump();
}

enum class Outcome { TP, FP, TN, FN };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::TP: return "TP";
    case Outcome::FP: return "FP";
    case Outcome::TN: return "TN";
    case Outcome::FN: return "FN";
  }
  return "TN";
}

struct WindowLabel {
  std::size_t window = 0;
  Timestamp start = 0;
  Timestamp end = 0;
  bool attack = false;
  bool compromised = false;
  bool anomalous = false;
  Outcome outcome = Outcome::TN;
};

class UncoveredWindow : public PipelineError {
 public:
  explicit UncoveredWindow(std::size_t w) : PipelineError("window " + std::to_string(w) + " has no ground truth") {}
};

struct LabelOptions {
  bool gaps_are_benign = true;
  /// Count flagged "compromised-entity-active" windows as true positives.
  bool adjusted = false;
};

struct WindowSpan {
  std::size_t index = 0;
  Timestamp start = 0;
  Timestamp end = 0;
};

/// Classifies each window. A window is an attack window iff it overlaps an attack
/// interval, and predicted anomalous iff it belongs to a flagged queue.
inline std::vector<WindowLabel> label_windows(const std::vector<WindowSpan>& windows,
                                              const std::vector<bool>& anomalous,
                                              const std::vector<TruthInterval>& truth, const LabelOptions& opts = {}) {
  std::vector<WindowLabel> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const WindowSpan& w = windows[i];
    WindowLabel l;
    l.window = w.index;
    l.start = w.start;
    l.end = w.end;
    l.anomalous = i < anomalous.size() && anomalous[i];
    bool covered = false;
    for (const auto& t : truth) {
      if (t.start < w.end && w.start < t.end) {
        covered = true;
        if (t.label == Truth::Attack) l.attack = true;
        if (t.label == Truth::Compromised) l.compromised = true;
      }
    }
    if (!covered && !opts.gaps_are_benign) throw UncoveredWindow(w.index);
    if (l.attack)
      l.outcome = l.anomalous ? Outcome::TP : Outcome::FN;
    else if (l.compromised && opts.adjusted)
      l.outcome = l.anomalous ? Outcome::TP : Outcome::TN;
    else
      l.outcome = l.anomalous ? Outcome::FP : Outcome::TN;
    out.push_back(l);
  }
  return out;
}

/// Windows, flags and per-window AUC scores taken from a finished detector.
struct DetectionView {
  std::vector<WindowSpan> windows;
  std::vector<bool> anomalous;
  std::vector<double> scores;  // max score over the queues holding the window
};

inline DetectionView view_of(const detect::Detector& det) {
  DetectionView v;
  const auto& ws = det.windows();
  v.anomalous.assign(ws.size(), false);
  v.scores.assign(ws.size(), 0.0);
  for (const auto& w : ws) v.windows.push_back({w.index, w.start, w.end});
  for (const auto& q : det.queues().queues())
    for (std::size_t w : q.windows) {
      v.scores[w] = std::max(v.scores[w], q.score);
      if (q.flagged) v.anomalous[w] = true;
    }
  return v;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  double precision = 0;
  double recall = 0;
  double accuracy = 0;
  std::optional<double> auc;

  std::size_t total() const { return tp + tn + fp + fn; }
};

inline MetricsReport metrics_from_counts(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn) {
  MetricsReport m;
  m.tp = tp;
  m.tn = tn;
  m.fp = fp;
  m.fn = fn;
  m.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  m.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  m.accuracy = m.total() ? double(tp + tn) / double(m.total()) : 0.0;
  return m;
}

/// Area under the ROC curve: the probability that a random positive outscores a random
/// negative, ties counting one half. Undefined when a class is missing.
inline std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::vector<std::pair<double, bool>> v;
  for (std::size_t i = 0; i < scores.size(); ++i) v.emplace_back(scores[i], positive[i]);
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].first == v[i].first) ++j;
    const double avg_rank = (double(i + 1) + double(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (v[k].second) rank_sum += avg_rank;
    i = j;
  }
  for (const auto& [s, p] : v) (p ? pos : neg) += 1;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

inline MetricsReport compute_metrics(const std::vector<WindowLabel>& labels, const std::vector<double>& scores) {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::vector<bool> positive;
  for (const auto& l : labels) {
    switch (l.outcome) {
      case Outcome::TP: ++tp; break;
      case Outcome::TN: ++tn; break;
      case Outcome::FP: ++fp; break;
      case Outcome::FN: ++fn; break;
    }
    positive.push_back(l.outcome == Outcome::TP || l.outcome == Outcome::FN);
  }
  MetricsReport m = metrics_from_counts(tp, tn, fp, fn);
  if (scores.size() == labels.size()) m.auc = roc_auc(scores, positive);
  return m;
}

inline nlohmann::json metrics_json(const MetricsReport& m) {
  return {{"v", 1},
          {"tp", m.tp},
          {"tn", m.tn},
          {"fp", m.fp},
          {"fn", m.fn},
          {"precision", m.precision},
          {"recall", m.recall},
          {"accuracy", m.accuracy},
          {"auc", m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr)}};
}

inline std::string confusion_csv(const MetricsReport& m) {
  std::ostringstream os;
  os << "truth,predicted_anomalous,predicted_normal\n";
  os << "attack," << m.tp << "," << m.fn << "\n";
  os << "benign," << m.fp << "," << m.tn << "\n";
  return os.str();
}

inline nlohmann::json labels_json(const std::vector<WindowLabel>& labels) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& l : labels)
    out.push_back({{"window", l.window},
                   {"start_ts", l.start},
                   {"end_ts", l.end},
                   {"truth", l.attack ? "attack" : (l.compromised ? "compromised-entity-active" : "benign")},
                   {"predicted", l.anomalous ? "anomalous" : "normal"},
                   {"class", std::string(to_string(l.outcome))}});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

struct ScenarioSpec {
  std::uint64_t seed = 7;
  Timestamp start_ts = 1'700'002'800'000'000'000;  // a whole number of hours
  Timestamp window_ns = 15 * detect::kNanosPerMinute;
  std::size_t train_windows = 20;
  std::size_t validation_windows = 90;
  std::size_t test_windows = 50;
  double events_per_window = 4000;
  bool attack = true;
  std::size_t attack_window = 33;  // first attack window (test index)
  std::size_t attack_span = 3;
  /// Test windows in which a backup daemon absent from training runs.
  std::vector<std::size_t> novel_app_windows;
};

struct Scenario {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::vector<TruthInterval> truth;
  std::vector<std::string> attack_entities;  // ids of entities created by the attack
  std::size_t attack_events = 0;
  Timestamp test_start = 0;
};

namespace gen {

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}
  std::uint64_t below(std::uint64_t n) { return eng() % n; }
  double unit() { return double(eng() >> 11) * 0x1.0p-53; }
  bool chance(double p) { return unit() < p; }
  double exponential(double mean) { return -mean * std::log1p(-unit()); }
};

struct Entity {
  std::string id;
  EntityKind kind;
  std::string attr;
};

struct GenEvent {
  Timestamp ts;
  std::size_t seq;
  Entity src;
  Entity dst;
  Relation rel;
};

struct FileGroup {
  std::vector<Entity> files;
  Relation rel;
  Relation alt;       // occasional other relation
  double alt_p = 0;
};

struct SocketGroup {
  std::vector<Entity> sockets;
  double send_p = 0.5;
};

struct App {
  Entity proc;
  double weight = 1;
  std::vector<FileGroup> files;
  std::vector<SocketGroup> sockets;
  double socket_share = 0;
};

inline Entity process(const std::string& name, const std::string& exe) { return {"proc:" + name, EntityKind::Process, exe}; }
inline Entity file(const std::string& path) { return {"file:" + path, EntityKind::File, path}; }
inline Entity socket(const std::string& local, const std::string& remote) {
  return {"sock:" + local + ">" + remote, EntityKind::Socket, local + "\xE2\x86\x92" + remote};
}

inline std::vector<Entity> files_in(const std::string& dir, const std::vector<std::string>& names) {
  std::vector<Entity> out;
  for (const auto& n : names) out.push_back(file(dir + "/" + n));
  return out;
}

inline std::vector<Entity> numbered(const std::string& dir, const std::string& stem, const std::string& ext, int n) {
  std::vector<Entity> out;
  for (int i = 0; i < n; ++i) out.push_back(file(dir + "/" + stem + std::to_string(i) + ext));
  return out;
}

inline std::vector<Entity> sockets_to(const std::string& local_ip, int first_port, const std::vector<std::string>& remotes) {
  std::vector<Entity> out;
  int port = first_port;
  for (const auto& r : remotes) out.push_back(socket(local_ip + ":" + std::to_string(port++), r));
  return out;
}

/// The benign host: long-running services with stable files and peers. Relations
/// follow the directory: configuration is read, logs are written, libraries opened,
/// binaries executed.
inline std::vector<App> benign_host() {
  std::vector<App> apps;
  const auto etc_common = files_in("/etc", {"hosts", "resolv.conf", "nsswitch.conf", "localtime", "ld.so.cache"});
  const auto libc = files_in("/usr/lib/x86_64-linux-gnu", {"libc.so.6", "libpthread.so.0", "libssl.so.3", "libcrypto.so.3", "libz.so.1"});

  App firefox{process("firefox", "/usr/bin/firefox"), 6};
  firefox.files.push_back({numbered("/home/admin/Documents", "report", ".pdf", 12), Relation::Read, Relation::Open, 0.02});
  firefox.files.push_back({numbered("/home/admin/.mozilla/profile", "cache", ".db", 10), Relation::Write, Relation::Read, 0.05});
  firefox.files.push_back({numbered("/usr/lib/firefox", "lib", ".so", 8), Relation::Open, Relation::Read, 0.01});
  firefox.files.push_back({etc_common, Relation::Read, Relation::Read, 0});
  firefox.sockets.push_back({sockets_to("10.0.0.5", 40100, {"142.250.74.36:443", "151.101.1.69:443", "104.16.132.229:443", "93.184.216.34:443", "172.217.16.142:443", "185.199.108.153:443"}), 0.1});
  firefox.socket_share = 0.35;
  apps.push_back(firefox);

  App sshd{process("sshd", "/usr/sbin/sshd"), 2};
  sshd.files.push_back({files_in("/etc/ssh", {"sshd_config", "ssh_host_rsa_key", "ssh_host_ed25519_key", "moduli"}), Relation::Read, Relation::Read, 0});
  sshd.files.push_back({files_in("/etc", {"passwd", "shadow", "group"}), Relation::Read, Relation::Read, 0});
  sshd.files.push_back({files_in("/var/log", {"auth.log", "btmp", "wtmp"}), Relation::Write, Relation::Write, 0});
  sshd.sockets.push_back({sockets_to("10.0.0.5", 22, {"10.0.0.31:52011", "10.0.0.32:52977"}), 0.5});
  sshd.socket_share = 0.3;
  apps.push_back(sshd);

  App rsyslog{process("rsyslogd", "/usr/sbin/rsyslogd"), 4};
  rsyslog.files.push_back({files_in("/var/log", {"syslog", "kern.log", "messages", "daemon.log", "user.log", "debug"}), Relation::Write, Relation::Write, 0});
  rsyslog.files.push_back({files_in("/etc", {"rsyslog.conf"}), Relation::Read, Relation::Read, 0});
  apps.push_back(rsyslog);

  App nginx{process("nginx", "/usr/sbin/nginx"), 6};
  nginx.files.push_back({numbered("/var/www/html", "page", ".html", 20), Relation::Read, Relation::Open, 0.03});
  nginx.files.push_back({files_in("/var/log/nginx", {"access.log", "error.log"}), Relation::Write, Relation::Write, 0});
  nginx.files.push_back({files_in("/etc/nginx", {"nginx.conf", "mime.types", "sites-enabled/default"}), Relation::Read, Relation::Read, 0});
  nginx.files.push_back({libc, Relation::Open, Relation::Open, 0});
  nginx.sockets.push_back({sockets_to("10.0.0.5", 443, {"192.168.1.20:50110", "192.168.1.21:50222", "192.168.1.22:50333", "192.168.1.23:50444", "192.168.1.24:50555", "192.168.1.25:50666", "192.168.1.26:50777", "192.168.1.27:50888"}), 0.5});
  nginx.socket_share = 0.4;
  apps.push_back(nginx);

  App postgres{process("postgres", "/usr/lib/postgresql/14/bin/postgres"), 5};
  postgres.files.push_back({numbered("/var/lib/postgresql/14/main/base", "1640", "", 24), Relation::Read, Relation::Write, 0.3});
  postgres.files.push_back({numbered("/var/lib/postgresql/14/main/pg_wal", "00000001000000", "", 4), Relation::Write, Relation::Write, 0});
  postgres.files.push_back({files_in("/etc/postgresql/14/main", {"postgresql.conf", "pg_hba.conf"}), Relation::Read, Relation::Read, 0});
  postgres.sockets.push_back({sockets_to("10.0.0.5", 5432, {"10.0.0.40:41000", "10.0.0.41:41001"}), 0.5});
  postgres.socket_share = 0.25;
  apps.push_back(postgres);

  App worker{process("worker", "/usr/bin/python3"), 4};
  worker.files.push_back({numbered("/srv/app", "module", ".py", 15), Relation::Read, Relation::Read, 0});
  worker.files.push_back({numbered("/srv/app/cache", "entry", ".bin", 10), Relation::Write, Relation::Read, 0.2});
  worker.files.push_back({numbered("/usr/lib/python3.10", "mod", ".py", 12), Relation::Open, Relation::Read, 0.05});
  worker.sockets.push_back({sockets_to("10.0.0.5", 46000, {"10.0.0.20:6379", "10.0.0.21:5672"}), 0.6});
  worker.socket_share = 0.3;
  apps.push_back(worker);

  App cron{process("cron", "/usr/sbin/cron"), 1};
  cron.files.push_back({files_in("/etc", {"crontab", "cron.d/anacron", "cron.d/sysstat", "cron.daily/logrotate"}), Relation::Read, Relation::Read, 0});
  apps.push_back(cron);

  App systemd{process("systemd", "/lib/systemd/systemd"), 1};
  systemd.files.push_back({files_in("/etc/systemd/system", {"multi-user.target.wants", "sockets.target.wants", "timers.target.wants"}), Relation::Read, Relation::Open, 0.1});
  systemd.files.push_back({files_in("/run/systemd", {"units", "journal/socket", "notify"}), Relation::Write, Relation::Write, 0});
  apps.push_back(systemd);

  App ntpd{process("ntpd", "/usr/sbin/ntpd"), 1};
  ntpd.files.push_back({files_in("/var/lib/ntp", {"ntp.drift"}), Relation::Write, Relation::Write, 0});
  ntpd.files.push_back({files_in("/etc", {"ntp.conf"}), Relation::Read, Relation::Read, 0});
  ntpd.sockets.push_back({sockets_to("10.0.0.5", 123, {"91.189.89.198:123", "91.189.94.4:123"}), 0.2});
  ntpd.socket_share = 0.6;
  apps.push_back(ntpd);

  App gnome{process("gnome-shell", "/usr/bin/gnome-shell"), 3};
  gnome.files.push_back({numbered("/home/admin/.config/gnome", "setting", ".ini", 8), Relation::Read, Relation::Write, 0.1});
  gnome.files.push_back({numbered("/usr/share/icons/Adwaita", "icon", ".png", 14), Relation::Open, Relation::Open, 0});
  gnome.files.push_back({libc, Relation::Open, Relation::Open, 0});
  apps.push_back(gnome);

  App dockerd{process("dockerd", "/usr/bin/dockerd"), 2};
  dockerd.files.push_back({numbered("/var/lib/docker/overlay2", "layer", "", 10), Relation::Read, Relation::Write, 0.15});
  dockerd.files.push_back({files_in("/etc/docker", {"daemon.json"}), Relation::Read, Relation::Read, 0});
  dockerd.sockets.push_back({sockets_to("10.0.0.5", 47000, {"10.0.0.60:2376"}), 0.5});
  dockerd.socket_share = 0.2;
  apps.push_back(dockerd);

  App journald{process("journald", "/lib/systemd/systemd-journald"), 3};
  journald.files.push_back({numbered("/var/log/journal", "system@", ".journal", 6), Relation::Write, Relation::Write, 0});
  journald.files.push_back({files_in("/etc/systemd", {"journald.conf"}), Relation::Read, Relation::Read, 0});
  apps.push_back(journald);
  return apps;
}

class Builder {
 public:
  Builder(Rng& rng, std::vector<GenEvent>& out) : rng_(rng), out_(out) {}

  void add(Timestamp ts, const Entity& s, const Entity& d, Relation r) { out_.push_back({ts, out_.size(), s, d, r}); }

  void background(const std::vector<App>& apps, Timestamp start, Timestamp end, double count) {
    double total_w = 0;
    for (const auto& a : apps) total_w += a.weight;
    const double mean_gap = double(end - start) / count;
    double t = double(start) + rng_.exponential(mean_gap);
    while (t < double(end)) {
      double pick = rng_.unit() * total_w;
      const App* app = &apps.back();
      for (const auto& a : apps) {
        if (pick < a.weight) {
          app = &a;
          break;
        }
        pick -= a.weight;
      }
      const Timestamp ts = static_cast<Timestamp>(t);
      if (!app->sockets.empty() && rng_.chance(app->socket_share)) {
        const auto& g = app->sockets[rng_.below(app->sockets.size())];
        const auto& s = g.sockets[rng_.below(g.sockets.size())];
        add(ts, app->proc, s, rng_.chance(g.send_p) ? Relation::Send : Relation::Receive);
      } else {
        const auto& g = app->files[rng_.below(app->files.size())];
        const auto& f = g.files[rng_.below(g.files.size())];
        add(ts, app->proc, f, rng_.chance(g.alt_p) ? g.alt : g.rel);
      }
      t += rng_.exponential(mean_gap);
    }
  }

  /// cron starts a short-lived shell job: clone, exec, a few reads, one report, close.
  void cron_job(Timestamp ts, std::size_t serial) {
    const Entity cron = process("cron", "/usr/sbin/cron");
    const Entity sh = process("cron-job-" + std::to_string(serial), "/bin/sh");
    const Timestamp s = 1'000'000;
    add(ts, cron, sh, Relation::Clone);
    add(ts + s, sh, file("/usr/bin/run-parts"), Relation::Exec);
    for (int i = 0; i < 4; ++i) add(ts + (2 + i) * s, sh, file("/etc/cron.daily/logrotate"), Relation::Read);
    add(ts + 7 * s, sh, file("/var/lib/logrotate/status"), Relation::Write);
    add(ts + 8 * s, cron, sh, Relation::Close);
  }

  /// A backup daemon unknown to the model: scans logs and config, writes an archive and
  /// ships it to the backup host.
  void backup_burst(Timestamp start, Timestamp end, std::size_t serial) {
    const Entity bd = process("backupd", "/opt/backupd/bin/backupd");
    const Entity archive = file("/var/backups/backupd/archive-" + std::to_string(serial) + ".tar");
    const Entity peer = socket("10.0.0.5:48730", "10.0.9.9:873");
    const std::vector<Entity> logs = files_in("/var/log", {"syslog", "kern.log", "messages", "daemon.log", "auth.log"});
    const std::vector<Entity> conf = files_in("/etc", {"hosts", "passwd", "group", "crontab", "rsyslog.conf"});
    const int n = 150;
    const Timestamp span = (end - start) / 2;
    const Timestamp t0 = start + static_cast<Timestamp>(rng_.below(static_cast<std::uint64_t>(span / 2)));
    add(t0, bd, file("/opt/backupd/etc/backupd.conf"), Relation::Read);
    for (int i = 1; i < n; ++i) {
      const Timestamp ts = t0 + span * i / n;
      switch (i % 6) {
        case 0:
        case 1: add(ts, bd, logs[rng_.below(logs.size())], Relation::Read); break;
        case 2: add(ts, bd, conf[rng_.below(conf.size())], Relation::Read); break;
        case 3:
        case 4: add(ts, bd, archive, Relation::Write); break;
        default: add(ts, bd, peer, Relation::Send);
      }
    }
  }

 private:
  Rng& rng_;
  std::vector<GenEvent>& out_;
};

/// The injected intrusion: a browser exploit drops and runs a payload that talks to
/// its controller, installs persistence, spawns a second stage and exfiltrates.
struct AttackScript {
  Entity firefox = process("firefox", "/usr/bin/firefox");
  Entity c2 = socket("10.0.0.5:48812", "161.116.88.72:443");
  Entity payload_file = file("/home/admin/clean");
  Entity payload = process("clean", "/home/admin/clean");
  Entity dropper = file("/tmp/.X11-cache");
  Entity persist = file("/etc/cron.d/clean");
  Entity stage2 = process("profile", "/home/admin/profile");
  Entity stage2_file = file("/home/admin/profile");
  Entity archive = file("/tmp/.dump.tgz");
  Entity exfil = socket("10.0.0.5:48813", "161.116.88.72:8080");

  std::vector<std::string> created() const {
    return {c2.id, payload_file.id, payload.id, dropper.id, persist.id, stage2.id, stage2_file.id, archive.id, exfil.id};
  }

  /// Events for attack stage `k` (0-based) placed in [start, end).
  std::size_t emit(Builder& b, Rng& rng, std::size_t k, Timestamp start, Timestamp end) const {
    std::vector<std::pair<std::pair<Entity, Entity>, Relation>> steps;
    auto step = [&](const Entity& s, const Entity& d, Relation r, int times = 1) {
      for (int i = 0; i < times; ++i) steps.push_back({{s, d}, r});
    };
    const auto shadow = file("/etc/shadow");
    const auto passwd = file("/etc/passwd");
    const auto authlog = file("/var/log/auth.log");
    if (k == 0) {
      step(firefox, c2, Relation::Receive, 4);
      step(firefox, payload_file, Relation::Write, 3);
      step(firefox, payload, Relation::Clone);
      step(payload, payload_file, Relation::Exec);
      step(payload, c2, Relation::Send, 8);
      step(payload, c2, Relation::Receive, 2);
      step(payload, passwd, Relation::Read, 2);
      step(payload, shadow, Relation::Read, 2);
      step(payload, authlog, Relation::Read, 4);
      step(payload, dropper, Relation::Write, 4);
      step(payload, dropper, Relation::Exec, 2);
      step(payload, c2, Relation::Send, 8);
      step(payload, c2, Relation::Receive, 2);
      step(payload, authlog, Relation::Read, 3);
    } else if (k == 1) {
      step(payload, c2, Relation::Receive, 2);
      step(payload, persist, Relation::Write, 4);
      step(payload, file("/etc/crontab"), Relation::Write, 2);
      step(payload, stage2_file, Relation::Write, 4);
      step(payload, stage2, Relation::Clone);
      step(stage2, stage2_file, Relation::Exec);
      step(stage2, dropper, Relation::Exec, 2);
      step(stage2, file("/home/admin/.ssh/id_rsa"), Relation::Read, 3);
      step(stage2, file("/var/log/syslog"), Relation::Read, 4);
      step(stage2, c2, Relation::Send, 8);
      step(stage2, c2, Relation::Receive, 2);
      step(payload, c2, Relation::Send, 8);
      step(payload, file("/var/log/wtmp"), Relation::Read, 3);
    } else {
      step(stage2, c2, Relation::Send, 4);
      for (int i = 0; i < 6; ++i)
        step(stage2, file("/home/admin/Documents/report" + std::to_string(i) + ".pdf"), Relation::Read);
      step(stage2, archive, Relation::Write, 6);
      step(stage2, archive, Relation::Exec, 2);
      step(stage2, exfil, Relation::Send, 14);
      step(payload, c2, Relation::Send, 6);
      step(payload, c2, Relation::Receive, 2);
      step(payload, archive, Relation::Read, 3);
      step(payload, persist, Relation::Read, 2);
      step(stage2, exfil, Relation::Receive, 2);
      step(payload, stage2, Relation::Close);
    }
    // the stage runs for a few minutes somewhere inside the window
    const Timestamp span = (end - start) / 3;
    const Timestamp t0 = start + static_cast<Timestamp>(rng.below(static_cast<std::uint64_t>(end - start - span)));
    for (std::size_t i = 0; i < steps.size(); ++i)
      b.add(t0 + span * static_cast<Timestamp>(i) / static_cast<Timestamp>(steps.size()), steps[i].first.first,
            steps[i].first.second, steps[i].second);
    return steps.size();
  }
};

inline std::vector<std::string> render(std::vector<GenEvent>& evs) {
  std::sort(evs.begin(), evs.end(), [](const GenEvent& a, const GenEvent& b) {
    return a.ts != b.ts ? a.ts < b.ts : a.seq < b.seq;
  });
  std::vector<std::string> lines;
  lines.reserve(evs.size());
  auto entity = [](const Entity& e) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["kind"] = std::string(to_string(e.kind));
    j["attr"] = e.attr;
    return j;
  };
  for (const auto& e : evs) {
    nlohmann::ordered_json j;
    j["ts"] = e.ts;
    j["src"] = entity(e.src);
    j["dst"] = entity(e.dst);
    j["rel"] = std::string(to_string(e.rel));
    lines.push_back(j.dump());
  }
  return lines;
}

}  // namespace gen

/// Deterministic given the spec. Validation follows training and the test period
/// follows validation on one timeline; each period is its own log.
inline Scenario generate_scenario(const ScenarioSpec& spec) {
  using namespace gen;
  Rng rng(spec.seed);
  const auto apps = benign_host();
  Scenario sc;
  std::size_t job = 0;
  std::size_t burst = 0;
  const AttackScript attack;

  auto period = [&](std::size_t first_window, std::size_t windows, bool is_test) {
    std::vector<GenEvent> evs;
    Builder b(rng, evs);
    for (std::size_t w = 0; w < windows; ++w) {
      const Timestamp start = spec.start_ts + static_cast<Timestamp>(first_window + w) * spec.window_ns;
      const Timestamp end = start + spec.window_ns;
      b.background(apps, start, end, spec.events_per_window);
      b.cron_job(start + static_cast<Timestamp>(rng.below(static_cast<std::uint64_t>(spec.window_ns * 9 / 10))), job++);
      bool attacked = false;
      if (is_test) {
        if (spec.attack && w >= spec.attack_window && w < spec.attack_window + spec.attack_span) {
          sc.attack_events += attack.emit(b, rng, w - spec.attack_window, start, end);
          attacked = true;
        }
        if (std::find(spec.novel_app_windows.begin(), spec.novel_app_windows.end(), w) != spec.novel_app_windows.end())
          b.backup_burst(start, end, burst++);
        sc.truth.push_back({start, end, attacked ? Truth::Attack : Truth::Benign});
      }
    }
    return render(evs);
  };

  sc.train = period(0, spec.train_windows, false);
  sc.validation = period(spec.train_windows, spec.validation_windows, false);
  sc.test_start = spec.start_ts + static_cast<Timestamp>(spec.train_windows + spec.validation_windows) * spec.window_ns;
  sc.test = period(spec.train_windows + spec.validation_windows, spec.test_windows, true);
  if (spec.attack) sc.attack_entities = attack.created();
  return sc;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write '" + path.string() + "'");
  for (const auto& l : lines) out << l << '\n';
}

/// Writes train.jsonl, validation.jsonl, test.jsonl, labels.jsonl and attack.json.
inline void write_scenario(const Scenario& sc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_lines(dir / "train.jsonl", sc.train);
  write_lines(dir / "validation.jsonl", sc.validation);
  write_lines(dir / "test.jsonl", sc.test);
  std::vector<std::string> truth;
  for (const auto& t : sc.truth) truth.push_back(format_truth(t));
  write_lines(dir / "labels.jsonl", truth);
  nlohmann::json meta = {{"v", 1},
                         {"attack_entities", sc.attack_entities},
                         {"attack_events", sc.attack_events},
                         {"test_events", sc.test.size()},
                         {"test_start_ts", sc.test_start}};
  std::ofstream(dir / "attack.json") << meta.dump(2) << '\n';
}

}  // namespace provwatch::evaluate
