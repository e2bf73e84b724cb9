#pragma once

// End-to-end steps shared by the CLI, the service and the acceptance run: score a log
// with a model, calibrate thresholds, detect, investigate and the false-positive loop.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "provwatch/detect.hpp"
#include "provwatch/evaluate.hpp"
#include "provwatch/featurize.hpp"
#include "provwatch/ingest.hpp"
#include "provwatch/investigate.hpp"
#include "provwatch/tgn/model.hpp"
#include "provwatch/tgn/params.hpp"

namespace provwatch::pipeline {

using detect::ScoredRecord;

template <class T>
FeatureCache features_for(const tgn::ModelParams<T>& p, const EntityCatalog& catalog) {
  FeatureCache fc(p.config.feature_dim, p.config.hash_seed);
  fc.sync(catalog);
  return fc;
}

template <class T>
tgn::ModelParams<T> train_model(const EventLog& log, const tgn::ModelConfig& mc, const tgn::TrainConfig& tc,
                                tgn::TrainReport* report = nullptr) {
  auto p = tgn::ModelParams<T>::initialize(mc);
  auto fc = features_for(p, log.catalog);
  auto r = tgn::train(p, log.events, fc, tc);
  if (report) *report = std::move(r);
  return p;
}

template <class T>
std::vector<ScoredRecord> score_log(const tgn::ModelParams<T>& p, const EventLog& log, tgn::ScoreOptions opts = {}) {
  auto fc = features_for(p, log.catalog);
  std::vector<ScoredRecord> out;
  out.reserve(log.events.size());
  tgn::score_stream(p, std::span<const Event>(log.events), fc,
                    [&](const tgn::ScoredEvent<T>& s) { out.push_back({*s.event, static_cast<float>(s.re)}); }, opts);
  return out;
}

/// Window counts of the training stream, the history validation builds on.
inline detect::IdfTracker history_of(const EventLog* train, const detect::DetectConfig& cfg) {
  detect::IdfTracker t;
  if (train) detect::observe_windows(t, train->events, train->catalog, cfg.window_ns, cfg.origin);
  return t;
}

struct DetectionRun {
  std::unique_ptr<detect::Detector> detector;
  std::vector<investigate::Investigation> investigations;  // one per flagged queue

  const investigate::Investigation* investigation(std::size_t queue_id) const {
    for (const auto& inv : investigations)
      if (inv.queue_id == queue_id) return &inv;
    return nullptr;
  }
};

inline DetectionRun detect_scored(std::span<const ScoredRecord> records, const detect::Thresholds& th,
                                  const EntityCatalog& catalog, detect::DetectConfig cfg,
                                  const investigate::InvestigateConfig& icfg = {}, bool investigate_flagged = true) {
  cfg.window_ns = th.window_ns;
  cfg.k_sigma = th.k_sigma;
  cfg.k_alpha = th.k_alpha;
  DetectionRun run;
  run.detector = std::make_unique<detect::Detector>(cfg, th, catalog);
  for (const auto& r : records) run.detector->push(r.ev, r.re);
  run.detector->finish();
  if (investigate_flagged)
    for (const auto* q : run.detector->flagged())
      run.investigations.push_back(investigate::investigate_queue(*q, run.detector->windows(), catalog, icfg));
  return run;
}

// ---------------------------------------------------------------------------
// False-positive loop

struct FpLoopConfig {
  /// Test windows before this index are the labelled period; the rest is replayed.
  std::size_t split_window = 25;
  tgn::TrainConfig retrain;
  tgn::ScoreOptions score;
  evaluate::LabelOptions labels;
};

struct FpLoopResult {
  std::vector<std::size_t> fp_windows;  // labelled period, flagged but benign
  std::size_t retrain_events = 0;
  evaluate::MetricsReport before;  // remainder, original model
  evaluate::MetricsReport after;   // remainder, retrained model
};

/// Restricts labels and scores to windows at or after `split`.
inline evaluate::MetricsReport remainder_metrics(const detect::Detector& det, const std::vector<evaluate::TruthInterval>& truth,
                                                 std::size_t split, const evaluate::LabelOptions& lo) {
  auto view = evaluate::view_of(det);
  auto labels = evaluate::label_windows(view.windows, view.anomalous, truth, lo);
  std::vector<evaluate::WindowLabel> rest;
  std::vector<double> scores;
  for (std::size_t i = split; i < labels.size(); ++i) {
    rest.push_back(labels[i]);
    scores.push_back(view.scores[i]);
  }
  return evaluate::compute_metrics(rest, scores);
}

/// Detects on the test stream, retrains on the events of benign windows that were
/// flagged before the split, then detects again on the whole stream with unchanged
/// thresholds. Metrics cover only the windows after the split.
template <class T>
FpLoopResult run_fp_loop(tgn::ModelParams<T>& p, const detect::Thresholds& th, const EventLog& test,
                         const std::vector<evaluate::TruthInterval>& truth, const detect::DetectConfig& cfg,
                         const FpLoopConfig& fcfg) {
  FpLoopResult res;
  auto scored = score_log(p, test, fcfg.score);
  auto first = detect_scored(scored, th, test.catalog, cfg, {}, false);
  auto view = evaluate::view_of(*first.detector);
  auto labels = evaluate::label_windows(view.windows, view.anomalous, truth, fcfg.labels);
  std::vector<Event> fp_events;
  for (std::size_t i = 0; i < labels.size() && i < fcfg.split_window; ++i)
    if (labels[i].outcome == evaluate::Outcome::FP) {
      res.fp_windows.push_back(i);
      for (const auto& r : first.detector->windows()[i].events) fp_events.push_back(r.ev);
    }
  res.before = remainder_metrics(*first.detector, truth, fcfg.split_window, fcfg.labels);
  res.retrain_events = fp_events.size();
  if (!fp_events.empty()) {
    auto fc = features_for(p, test.catalog);
    tgn::retrain(p, std::span<const Event>(fp_events), fc, fcfg.retrain);
    scored = score_log(p, test, fcfg.score);
  }
  auto second = detect_scored(scored, th, test.catalog, cfg, {}, false);
  res.after = remainder_metrics(*second.detector, truth, fcfg.split_window, fcfg.labels);
  return res;
}

}  // namespace provwatch::pipeline
