#pragma once

// Windowed anomaly detection: per-window reconstruction thresholds, IDF rareness,
// suspicious-node queues and the queue alarm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "provwatch/ingest.hpp"
#include "provwatch/types.hpp"

namespace provwatch::detect {

inline constexpr Timestamp kNanosPerMinute = 60'000'000'000;

struct DetectConfig {
  Timestamp window_ns = 15 * kNanosPerMinute;
  double k_sigma = 1.5;
  double k_alpha = 1.0;
  /// Queues that have not grown for this long (stream time) stop accepting windows.
  Timestamp queue_idle_ns = 24 * 60 * kNanosPerMinute;
  /// When set, window boundaries are measured from here instead of the first event.
  std::optional<Timestamp> origin;
};

struct MeanSd {
  double mean = 0;
  double sd = 0;
};

/// Mean and population standard deviation.
inline MeanSd mean_sd(std::span<const double> xs) {
  MeanSd m;
  if (xs.empty()) return m;
  double sum = 0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.sd = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

/// σ_T = mean + k·SD; undefined for an empty window.
inline std::optional<double> reconstruction_threshold(std::span<const double> re, double k = 1.5) {
  if (re.empty()) return std::nullopt;
  auto m = mean_sd(re);
  return m.mean + k * m.sd;
}

/// Mean RE of the edges strictly above σ_T, or 0 when there are none.
inline double window_score(std::span<const double> re, std::optional<double> sigma) {
  if (!sigma) return 0;
  double sum = 0;
  std::size_t n = 0;
  for (double r : re)
    if (r > *sigma) {
      sum += r;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline Timestamp window_origin(Timestamp first_ts, Timestamp window_ns) {
  Timestamp q = first_ts / window_ns;
  if (first_ts % window_ns != 0 && first_ts < 0) --q;
  return q * window_ns;
}

// ---------------------------------------------------------------------------
// Rareness

/// Per-entity window counts. Entities are keyed by their id string so history carries
/// over between logs (training, validation, test) with separate catalogs.
class IdfTracker {
 public:
  std::size_t windows() const noexcept { return windows_; }
  std::size_t entities() const noexcept { return counts_.size(); }

  std::size_t count(const std::string& id) const {
    auto it = counts_.find(id);
    return it == counts_.end() ? 0 : it->second;
  }

  /// ln(N / (N_v + 1)). With no history yet every entity scores 0.
  double idf_for_count(std::size_t n_v) const {
    if (windows_ == 0) return 0.0;
    return std::log(static_cast<double>(windows_) / static_cast<double>(n_v + 1));
  }
  double idf(const std::string& id) const { return idf_for_count(count(id)); }

  /// Records one window holding the given distinct entities.
  template <class Range>
  void observe(const Range& ids) {
    ++windows_;
    for (const auto& id : ids) ++counts_[std::string(id)];
  }

  std::vector<double> all_idf() const {
    std::vector<double> out;
    out.reserve(counts_.size());
    for (const auto& [id, n] : counts_) out.push_back(idf_for_count(n));
    return out;
  }

  const std::unordered_map<std::string, std::size_t>& counts() const noexcept { return counts_; }

  nlohmann::json to_json() const {
    nlohmann::json counts = nlohmann::json::object();
    std::map<std::string, std::size_t> sorted(counts_.begin(), counts_.end());
    for (const auto& [id, n] : sorted) counts[id] = n;
    return {{"windows", windows_}, {"counts", std::move(counts)}};
  }

  static IdfTracker from_json(const nlohmann::json& j) {
    IdfTracker t;
    t.windows_ = j.at("windows").get<std::size_t>();
    for (const auto& [id, n] : j.at("counts").items()) t.counts_[id] = n.get<std::size_t>();
    return t;
  }

 private:
  std::size_t windows_ = 0;
  std::unordered_map<std::string, std::size_t> counts_;
};

/// α = mean + k·SD of every tracked entity's IDF.
inline double rareness_threshold(const IdfTracker& tracker, double k = 1.0) {
  auto v = tracker.all_idf();
  auto m = mean_sd(v);
  return m.mean + k * m.sd;
}

// ---------------------------------------------------------------------------
// Windows

struct ScoredRecord {
  Event ev;
  float re = 0;
};

struct SuspiciousNode {
  NodeId node = 0;
  double idf = 0;
};

struct TimeWindow {
  std::size_t index = 0;
  Timestamp start = 0;
  Timestamp end = 0;
  std::vector<ScoredRecord> events;
  std::optional<double> sigma;
  double score = 0;
  std::vector<NodeId> anomalous;           // endpoints of edges above σ_T, sorted
  std::vector<SuspiciousNode> suspicious;  // sorted by node

  bool has_suspicious(NodeId v) const {
    auto it = std::lower_bound(suspicious.begin(), suspicious.end(), v,
                               [](const SuspiciousNode& s, NodeId x) { return s.node < x; });
    return it != suspicious.end() && it->node == v;
  }
};

/// Distinct entity ids touched by a window's events.
inline std::vector<std::string> window_entity_ids(std::span<const Event> events, const EntityCatalog& catalog) {
  std::vector<NodeId> nodes;
  nodes.reserve(events.size() * 2);
  for (const Event& ev : events) {
    nodes.push_back(ev.src);
    nodes.push_back(ev.dst);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::vector<std::string> ids;
  ids.reserve(nodes.size());
  for (NodeId v : nodes) ids.push_back(catalog[v].id);
  return ids;
}

/// Fills σ_T, score, the anomalous and suspicious node sets, then adds the window's
/// entities to the tracker. Rareness is looked up before the update.
inline void analyze_window(TimeWindow& w, IdfTracker& tracker, double alpha, const EntityCatalog& catalog,
                           double k_sigma = 1.5) {
  std::vector<double> re;
  re.reserve(w.events.size());
  for (const auto& r : w.events) re.push_back(r.re);
  w.sigma = reconstruction_threshold(re, k_sigma);
  w.score = window_score(re, w.sigma);
  w.anomalous.clear();
  w.suspicious.clear();
  if (w.sigma) {
    for (const auto& r : w.events)
      if (static_cast<double>(r.re) > *w.sigma) {
        w.anomalous.push_back(r.ev.src);
        w.anomalous.push_back(r.ev.dst);
      }
    std::sort(w.anomalous.begin(), w.anomalous.end());
    w.anomalous.erase(std::unique(w.anomalous.begin(), w.anomalous.end()), w.anomalous.end());
    for (NodeId v : w.anomalous) {
      double idf = tracker.idf(catalog[v].id);
      if (idf > alpha) w.suspicious.push_back({v, idf});
    }
  }
  if (!w.events.empty()) {
    std::vector<Event> evs;
    evs.reserve(w.events.size());
    for (const auto& r : w.events) evs.push_back(r.ev);
    tracker.observe(window_entity_ids(evs, catalog));
  }
}

/// Splits a chronological stream into fixed-length windows. Gaps produce empty windows.
class WindowPartitioner {
 public:
  using Sink = std::function<void(TimeWindow&&)>;

  WindowPartitioner(Timestamp window_ns, Sink sink, std::optional<Timestamp> origin = std::nullopt)
      : window_ns_(window_ns), sink_(std::move(sink)), origin_(origin) {
    if (window_ns <= 0) throw PipelineError("window length must be positive");
  }

  void push(const Event& ev, float re) {
    if (!origin_) origin_ = window_origin(ev.ts, window_ns_);
    if (ev.ts < *origin_) throw PipelineError("event precedes the window origin");
    const std::size_t idx = static_cast<std::size_t>((ev.ts - *origin_) / window_ns_);
    if (!open_) open(0);
    if (idx < current_.index) throw PipelineError("events must be chronological");
    while (current_.index < idx) {
      const std::size_t next = current_.index + 1;
      sink_(std::move(current_));
      open(next);
    }
    current_.events.push_back({ev, re});
  }

  /// Emits the open window, if any.
  void finish() {
    if (!open_) return;
    sink_(std::move(current_));
    open_ = false;
  }

  std::optional<Timestamp> origin() const { return origin_; }

 private:
  void open(std::size_t index) {
    current_ = TimeWindow{};
    current_.index = index;
    current_.start = *origin_ + static_cast<Timestamp>(index) * window_ns_;
    current_.end = current_.start + window_ns_;
    open_ = true;
  }

  Timestamp window_ns_;
  Sink sink_;
  std::optional<Timestamp> origin_;
  TimeWindow current_;
  bool open_ = false;
};

// ---------------------------------------------------------------------------
// Queues

struct WindowQueue {
  std::size_t id = 0;
  std::vector<std::size_t> windows;  // window indices, in append order
  double score = 1.0;
  bool flagged = false;
  Timestamp flagged_at = 0;
  Timestamp last_update = 0;
  bool retired = false;
};

/// Live queues plus an index from suspicious node to the queues holding it.
class QueueBook {
 public:
  const std::vector<WindowQueue>& queues() const noexcept { return queues_; }
  const WindowQueue& operator[](std::size_t id) const { return queues_[id]; }

  /// Appends the window to every live queue sharing a suspicious node with one of its
  /// members, or opens a singleton queue. Returns the queue ids the window joined.
  std::vector<std::size_t> enqueue(const TimeWindow& w) {
    std::vector<std::size_t> joined;
    for (const auto& s : w.suspicious) {
      auto it = by_node_.find(s.node);
      if (it == by_node_.end()) continue;
      for (std::size_t q : it->second)
        if (!queues_[q].retired) joined.push_back(q);
    }
    std::sort(joined.begin(), joined.end());
    joined.erase(std::unique(joined.begin(), joined.end()), joined.end());
    if (joined.empty()) {
      WindowQueue q;
      q.id = queues_.size();
      q.score = 1.0;
      queues_.push_back(q);
      joined.push_back(q.id);
    }
    for (std::size_t qid : joined) {
      WindowQueue& q = queues_[qid];
      q.windows.push_back(w.index);
      q.score *= w.score;
      q.last_update = w.end;
      for (const auto& s : w.suspicious) {
        auto& list = by_node_[s.node];
        auto pos = std::lower_bound(list.begin(), list.end(), qid);
        if (pos == list.end() || *pos != qid) list.insert(pos, qid);
      }
    }
    return joined;
  }

  /// Retires queues idle since before `now - horizon`.
  void retire_idle(Timestamp now, Timestamp horizon) {
    bool any = false;
    for (auto& q : queues_)
      if (!q.retired && now - q.last_update > horizon) {
        q.retired = true;
        any = true;
      }
    if (!any) return;
    for (auto it = by_node_.begin(); it != by_node_.end();) {
      auto& list = it->second;
      list.erase(std::remove_if(list.begin(), list.end(), [&](std::size_t q) { return queues_[q].retired; }),
                 list.end());
      it = list.empty() ? by_node_.erase(it) : std::next(it);
    }
  }

  /// Flags queues whose score exceeds β. Returns the newly flagged ids.
  std::vector<std::size_t> flag(const std::vector<std::size_t>& updated, double beta, Timestamp at) {
    std::vector<std::size_t> fresh;
    for (std::size_t qid : updated) {
      WindowQueue& q = queues_[qid];
      if (!q.flagged && q.score > beta) {
        q.flagged = true;
        q.flagged_at = at;
        fresh.push_back(qid);
      }
    }
    return fresh;
  }

 private:
  std::vector<WindowQueue> queues_;
  std::unordered_map<NodeId, std::vector<std::size_t>> by_node_;
};

// ---------------------------------------------------------------------------
// Thresholds and the streaming detector

struct Thresholds {
  double alpha = 0;
  double beta = std::numeric_limits<double>::infinity();
  /// Entity history up to the end of calibration; detection continues from it.
  IdfTracker idf;
  Timestamp window_ns = 15 * kNanosPerMinute;
  double k_sigma = 1.5;
  double k_alpha = 1.0;

  nlohmann::json to_json() const {
    return {{"v", 1},           {"alpha", alpha},  {"beta", beta},       {"tw_ns", window_ns},
            {"k_sigma", k_sigma}, {"k_alpha", k_alpha}, {"idf", idf.to_json()}};
  }
  static Thresholds from_json(const nlohmann::json& j) {
    Thresholds t;
    t.alpha = j.at("alpha").get<double>();
    t.beta = j.at("beta").is_null() ? std::numeric_limits<double>::infinity() : j.at("beta").get<double>();
    t.window_ns = j.value("tw_ns", t.window_ns);
    t.k_sigma = j.value("k_sigma", t.k_sigma);
    t.k_alpha = j.value("k_alpha", t.k_alpha);
    if (j.contains("idf")) t.idf = IdfTracker::from_json(j.at("idf"));
    return t;
  }
};

struct Alert {
  std::size_t queue_id = 0;
  std::vector<std::size_t> window_indices;
  double score = 0;
  double beta = 0;
  std::vector<std::pair<NodeId, double>> suspicious_nodes;
  Timestamp flagged_at = 0;
};

inline nlohmann::json alert_to_json(const Alert& a, const EntityCatalog& catalog) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [v, idf] : a.suspicious_nodes)
    nodes.push_back({{"id", catalog[v].id}, {"attr", catalog[v].attribute}, {"idf", idf}});
  return {{"queue_id", a.queue_id},
          {"window_indices", a.window_indices},
          {"score", a.score},
          {"beta", a.beta},
          {"suspicious_nodes", std::move(nodes)},
          {"flagged_at_ts", a.flagged_at}};
}

/// Streaming detection over (event, RE) pairs: windows, rareness, queues and alerts.
/// Keeps every closed window so flagged queues can be investigated afterwards.
class Detector {
 public:
  Detector(const DetectConfig& cfg, double alpha, double beta, IdfTracker tracker, const EntityCatalog& catalog)
      : cfg_(cfg),
        alpha_(alpha),
        beta_(beta),
        tracker_(std::move(tracker)),
        catalog_(catalog),
        partition_(cfg.window_ns, [this](TimeWindow&& w) { close(std::move(w)); }, cfg.origin) {}

  Detector(const DetectConfig& cfg, const Thresholds& th, const EntityCatalog& catalog)
      : Detector(cfg, th.alpha, th.beta, th.idf, catalog) {}

  void push(const Event& ev, float re) { partition_.push(ev, re); }
  void finish() { partition_.finish(); }

  const std::vector<TimeWindow>& windows() const noexcept { return windows_; }
  const QueueBook& queues() const noexcept { return book_; }
  const std::vector<Alert>& alerts() const noexcept { return alerts_; }
  const IdfTracker& tracker() const noexcept { return tracker_; }
  const EntityCatalog& catalog() const noexcept { return catalog_; }
  double alpha() const noexcept { return alpha_; }
  double beta() const noexcept { return beta_; }
  std::optional<Timestamp> origin() const { return partition_.origin(); }

  /// Largest queue score seen so far.
  double max_queue_score() const {
    double m = 0;
    for (const auto& q : book_.queues()) m = std::max(m, q.score);
    return m;
  }

  std::vector<const WindowQueue*> flagged() const {
    std::vector<const WindowQueue*> out;
    for (const auto& q : book_.queues())
      if (q.flagged) out.push_back(&q);
    return out;
  }

  /// Queue ids each window belongs to, by window index.
  std::vector<std::vector<std::size_t>> memberships() const {
    std::vector<std::vector<std::size_t>> m(windows_.size());
    for (const auto& q : book_.queues())
      for (std::size_t w : q.windows) m[w].push_back(q.id);
    return m;
  }

  /// Suspicious nodes across the queue's windows with their highest IDF.
  std::vector<std::pair<NodeId, double>> queue_nodes(const WindowQueue& q) const {
    std::map<NodeId, double> nodes;
    for (std::size_t w : q.windows)
      for (const auto& s : windows_[w].suspicious) {
        auto [it, inserted] = nodes.try_emplace(s.node, s.idf);
        if (!inserted) it->second = std::max(it->second, s.idf);
      }
    return {nodes.begin(), nodes.end()};
  }

 private:
  void close(TimeWindow&& w) {
    analyze_window(w, tracker_, alpha_, catalog_, cfg_.k_sigma);
    book_.retire_idle(w.start, cfg_.queue_idle_ns);
    auto joined = book_.enqueue(w);
    const Timestamp at = w.events.empty() ? w.end : w.events.back().ev.ts;
    windows_.push_back(std::move(w));
    for (std::size_t qid : book_.flag(joined, beta_, at)) {
      const WindowQueue& q = book_[qid];
      Alert a;
      a.queue_id = qid;
      a.window_indices = q.windows;
      a.score = q.score;
      a.beta = beta_;
      a.suspicious_nodes = queue_nodes(q);
      a.flagged_at = at;
      alerts_.push_back(std::move(a));
    }
  }

  DetectConfig cfg_;
  double alpha_;
  double beta_;
  IdfTracker tracker_;
  const EntityCatalog& catalog_;
  WindowPartitioner partition_;
  std::vector<TimeWindow> windows_;
  QueueBook book_;
  std::vector<Alert> alerts_;
};

/// Adds every window of an unscored stream to the tracker (e.g. training history).
inline void observe_windows(IdfTracker& tracker, std::span<const Event> events, const EntityCatalog& catalog,
                            Timestamp window_ns, std::optional<Timestamp> origin = std::nullopt) {
  std::vector<Event> current;
  WindowPartitioner part(
      window_ns,
      [&](TimeWindow&& w) {
        if (w.events.empty()) return;
        current.clear();
        for (const auto& r : w.events) current.push_back(r.ev);
        tracker.observe(window_entity_ids(current, catalog));
      },
      origin);
  for (const Event& ev : events) part.push(ev, 0.0f);
  part.finish();
}

class EmptyValidation : public PipelineError {
 public:
  EmptyValidation() : PipelineError("validation stream is empty") {}
};

/// α from the entity history at the end of validation, then β as the largest queue
/// score of a full detection pass over the validation stream. `history` holds the
/// windows observed before validation (normally the training stream).
inline Thresholds calibrate_thresholds(std::span<const ScoredRecord> validation, const EntityCatalog& catalog,
                                       const IdfTracker& history, const DetectConfig& cfg) {
  if (validation.empty()) throw EmptyValidation();
  std::vector<Event> evs;
  evs.reserve(validation.size());
  for (const auto& r : validation) evs.push_back(r.ev);
  IdfTracker after = history;
  observe_windows(after, evs, catalog, cfg.window_ns, cfg.origin);

  Thresholds th;
  th.window_ns = cfg.window_ns;
  th.k_sigma = cfg.k_sigma;
  th.k_alpha = cfg.k_alpha;
  th.alpha = rareness_threshold(after, cfg.k_alpha);

  Detector det(cfg, th.alpha, std::numeric_limits<double>::infinity(), history, catalog);
  for (const auto& r : validation) det.push(r.ev, r.re);
  det.finish();
  th.beta = det.max_queue_score();
  th.idf = det.tracker();
  return th;
}

}  // namespace provwatch::detect
