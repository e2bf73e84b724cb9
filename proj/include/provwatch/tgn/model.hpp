#pragma once

// Temporal graph encoder/decoder.
//
// For every event the encoder attends, for each endpoint, from the endpoint's memory
// over its most recent interactions; the two endpoint representations are projected
// to an edge embedding z, and an MLP decodes z into a distribution over the nine
// relation types. Node memories are updated by a GRU after the event has been scored,
// so an event never sees itself.
//
// Events are processed in chronological batches. Embeddings inside a batch use the
// memory as it was before the batch; the batch's own updates ("pending" messages) are
// applied when the next batch starts. With batch size 1 this is exactly per-event
// processing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "provwatch/featurize.hpp"
#include "provwatch/ingest.hpp"
#include "provwatch/nn/optim.hpp"
#include "provwatch/nn/tensor.hpp"
#include "provwatch/tgn/params.hpp"

namespace provwatch::tgn {

/// Seconds between two timestamps, as used by the time encoder.
inline double seconds_between(Timestamp later, Timestamp earlier) {
  return static_cast<double>(later - earlier) * 1e-9;
}

struct NeighborEntry {
  NodeId other = 0;
  NodeId src = 0;
  NodeId dst = 0;
  Relation rel = Relation::Read;
  Timestamp ts = 0;
};

/// Per-node ring of the most recent interactions.
class NeighborStore {
 public:
  explicit NeighborStore(std::size_t capacity = 20) : capacity_(capacity) {}

  std::size_t capacity() const noexcept { return capacity_; }

  void reserve_nodes(std::size_t n) {
    if (rings_.size() < n) rings_.resize(n);
  }

  void push(NodeId node, const NeighborEntry& e) {
    if (capacity_ == 0) return;
    reserve_nodes(std::size_t(node) + 1);
    Ring& r = rings_[node];
    if (r.buf.size() < capacity_) {
      r.buf.push_back(e);
    } else {
      r.buf[r.head] = e;
      r.head = (r.head + 1) % capacity_;
    }
  }

  std::size_t size(NodeId node) const { return node < rings_.size() ? rings_[node].buf.size() : 0; }

  /// Entries newest first.
  template <class F>
  void for_each_recent(NodeId node, F&& f) const {
    if (node >= rings_.size()) return;
    const Ring& r = rings_[node];
    const std::size_t n = r.buf.size();
    if (n < capacity_) {
      for (std::size_t i = n; i-- > 0;) f(r.buf[i]);
    } else {
      for (std::size_t k = 0; k < n; ++k) f(r.buf[(r.head + n - 1 - k) % n]);
    }
  }

  std::vector<NeighborEntry> recent(NodeId node) const {
    std::vector<NeighborEntry> out;
    for_each_recent(node, [&](const NeighborEntry& e) { out.push_back(e); });
    return out;
  }

  void clear() { rings_.clear(); }

 private:
  struct Ring {
    std::vector<NeighborEntry> buf;
    std::size_t head = 0;
  };
  std::size_t capacity_;
  std::vector<Ring> rings_;
};

/// Node memory: a value table plus, while a graph is being recorded, rows that live in
/// tensors produced by GRU steps.
template <class T>
class NodeStates {
 public:
  explicit NodeStates(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return last_update_.size(); }

  void reserve_nodes(std::size_t n) {
    if (n <= size()) return;
    table_.resize(n * dim_, T(0));
    last_update_.resize(n, 0);
    seen_.resize(n, 0);
  }

  bool seen(NodeId v) const { return v < seen_.size() && seen_[v]; }
  Timestamp last_update(NodeId v) const { return last_update_[v]; }
  void touch(NodeId v, Timestamp ts) {
    last_update_[v] = ts;
    seen_[v] = 1;
  }

  /// Current value of a node's state.
  std::span<const T> value(NodeId v) const {
    if (auto it = live_.find(v); it != live_.end())
      return {it->second.source.value().row(it->second.row).data(), dim_};
    return {table_.data() + std::size_t(v) * dim_, dim_};
  }

  /// Gathers current states of `nodes` into one matrix, linked to any live rows.
  nn::Tensor<T> gather(const std::vector<NodeId>& nodes) const {
    const nn::Index d = static_cast<nn::Index>(dim_);
    nn::Matrix<T> out(static_cast<nn::Index>(nodes.size()), d);
    std::vector<nn::Tensor<T>> parents;
    std::vector<std::pair<int, nn::Index>> where(nodes.size(), {-1, 0});
    std::unordered_map<const nn::Node<T>*, int> slot;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      auto it = live_.find(nodes[i]);
      if (it == live_.end()) {
        out.row(static_cast<nn::Index>(i)) =
            Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(table_.data() + std::size_t(nodes[i]) * dim_, d);
        continue;
      }
      const auto& ref = it->second;
      out.row(static_cast<nn::Index>(i)) = ref.source.value().row(ref.row);
      auto [s, inserted] = slot.try_emplace(ref.source.node().get(), static_cast<int>(parents.size()));
      if (inserted) parents.push_back(ref.source);
      where[i] = {s->second, ref.row};
    }
    if (parents.empty()) return nn::Tensor<T>::constant(std::move(out));
    return nn::make_result<T>(std::move(out), parents, [where = std::move(where)](nn::Node<T>& n) {
      for (std::size_t i = 0; i < where.size(); ++i) {
        if (where[i].first < 0) continue;
        auto& p = n.parents[static_cast<std::size_t>(where[i].first)];
        if (p->requires_grad) p->grad_buffer().row(where[i].second) += n.grad.row(static_cast<nn::Index>(i));
      }
    });
  }

  /// Records a new state row. Without graph recording the table is written directly.
  void set(NodeId v, const nn::Tensor<T>& source, nn::Index row) {
    if (source.requires_grad()) {
      live_[v] = nn::RowRef<T>{source, row};
    } else {
      live_.erase(v);
      std::copy_n(source.value().row(row).data(), dim_, table_.data() + std::size_t(v) * dim_);
    }
  }

  /// Folds live rows into the table, cutting the recorded history.
  void detach() {
    for (auto& [v, ref] : live_) std::copy_n(ref.source.value().row(ref.row).data(), dim_, table_.data() + std::size_t(v) * dim_);
    live_.clear();
  }

  void clear() {
    table_.clear();
    last_update_.clear();
    seen_.clear();
    live_.clear();
  }

 private:
  std::size_t dim_;
  std::vector<T> table_;
  std::vector<Timestamp> last_update_;
  std::vector<unsigned char> seen_;
  std::unordered_map<NodeId, nn::RowRef<T>> live_;
};

/// Everything the model remembers about one stream.
template <class T>
struct StreamMemory {
  NodeStates<T> states;
  NeighborStore neighbors;
  std::vector<Event> pending;

  explicit StreamMemory(const ModelConfig& c) : states(c.state_dim), neighbors(c.neighbors) {}

  void reserve_nodes(std::size_t n) {
    states.reserve_nodes(n);
    neighbors.reserve_nodes(n);
  }

  void reset() {
    states.clear();
    neighbors.clear();
    pending.clear();
  }
};

template <class T>
using Column = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// GRU step for a block of rows: h' = (1-u)∘n + u∘h.
template <class T>
nn::Tensor<T> gru_step(const ModelParams<T>& p, const nn::Tensor<T>& x, const nn::Tensor<T>& h) {
  using namespace nn;
  const Index S = static_cast<Index>(p.config.state_dim);
  auto gi = linear(x, p.gru_wi, p.gru_bi);
  auto gh = linear(h, p.gru_wh, p.gru_bh);
  auto r = sigmoid(add(slice_cols(gi, 0, S), slice_cols(gh, 0, S)));
  auto u = sigmoid(add(slice_cols(gi, S, S), slice_cols(gh, S, S)));
  auto n = tanh(add(slice_cols(gi, 2 * S, S), mul(r, slice_cols(gh, 2 * S, S))));
  return add(n, mul(u, sub(h, n)));
}

/// Applies the GRU updates and neighbor insertions for the events scored in the
/// previous batch, in event order. A node with several messages is updated once per
/// message, sequentially.
template <class T>
void apply_pending(const ModelParams<T>& p, StreamMemory<T>& mem, const FeatureCache& features) {
  using namespace nn;
  if (mem.pending.empty()) return;
  const ModelConfig& c = p.config;
  const Index E = static_cast<Index>(c.edge_dim());

  struct Message {
    NodeId node;
    std::size_t event;
  };
  std::vector<std::vector<Message>> rounds;
  std::unordered_map<NodeId, std::size_t> count;
  for (std::size_t i = 0; i < mem.pending.size(); ++i) {
    const Event& ev = mem.pending[i];
    for (NodeId v : {ev.src, ev.dst}) {
      std::size_t r = count[v]++;
      if (rounds.size() <= r) rounds.emplace_back();
      rounds[r].push_back({v, i});
      if (ev.src == ev.dst) break;
    }
  }

  for (const auto& round : rounds) {
    const Index R = static_cast<Index>(round.size());
    std::vector<NodeId> nodes;
    nodes.reserve(round.size());
    Matrix<T> enc(R, E);
    Column<T> dt(R);
    std::vector<float> buf(c.edge_dim());
    for (Index i = 0; i < R; ++i) {
      const Message& m = round[static_cast<std::size_t>(i)];
      const Event& ev = mem.pending[m.event];
      nodes.push_back(m.node);
      write_edge_encoding(features[ev.src], features[ev.dst], ev.rel, buf);
      for (Index j = 0; j < E; ++j) enc(i, j) = static_cast<T>(buf[static_cast<std::size_t>(j)]);
      dt(i) = mem.states.seen(m.node) ? static_cast<T>(seconds_between(ev.ts, mem.states.last_update(m.node))) : T(0);
    }
    auto h = mem.states.gather(nodes);
    auto x = concat_cols<T>({Tensor<T>::constant(std::move(enc)), time_encoding(dt, p.time_omega, p.time_phase)});
    auto h_new = gru_step(p, x, h);
    for (Index i = 0; i < R; ++i) {
      const Message& m = round[static_cast<std::size_t>(i)];
      mem.states.set(m.node, h_new, i);
      mem.states.touch(m.node, mem.pending[m.event].ts);
    }
  }

  for (const Event& ev : mem.pending) {
    mem.neighbors.push(ev.src, NeighborEntry{ev.dst, ev.src, ev.dst, ev.rel, ev.ts});
    if (ev.dst != ev.src) mem.neighbors.push(ev.dst, NeighborEntry{ev.src, ev.src, ev.dst, ev.rel, ev.ts});
  }
  mem.pending.clear();
}

template <class T>
struct BatchOutput {
  nn::Tensor<T> z;       // B x |z|
  nn::Tensor<T> logits;  // B x 9
};

/// Embeds every event of the batch from the current memory (endpoint states, their
/// neighbor rings) and decodes relation logits. Does not modify memory.
template <class T>
BatchOutput<T> embed_and_decode(const ModelParams<T>& p, const StreamMemory<T>& mem, const FeatureCache& features,
                                std::span<const Event> batch) {
  using namespace nn;
  const ModelConfig& c = p.config;
  const Index B = static_cast<Index>(batch.size());
  const Index M = 2 * B;
  const Index F = static_cast<Index>(c.feature_dim);
  const Index E = static_cast<Index>(c.edge_dim());
  const Index S = static_cast<Index>(c.state_dim);

  std::vector<NodeId> qnodes;
  qnodes.reserve(static_cast<std::size_t>(M));
  Matrix<T> qfeat(M, F);
  Column<T> qdt(M);
  std::vector<Index> offsets{0};
  offsets.reserve(static_cast<std::size_t>(M) + 1);
  std::vector<NodeId> knodes;
  std::vector<const NeighborEntry*> kentries;
  std::vector<T> kdt;

  std::vector<std::vector<NeighborEntry>> scratch(static_cast<std::size_t>(M));
  for (Index i = 0; i < B; ++i) {
    const Event& ev = batch[static_cast<std::size_t>(i)];
    for (int side = 0; side < 2; ++side) {
      const Index q = 2 * i + side;
      const NodeId v = side == 0 ? ev.src : ev.dst;
      qnodes.push_back(v);
      auto phi = features[v];
      for (Index j = 0; j < F; ++j) qfeat(q, j) = static_cast<T>(phi[static_cast<std::size_t>(j)]);
      qdt(q) = mem.states.seen(v) ? static_cast<T>(seconds_between(ev.ts, mem.states.last_update(v))) : T(0);
      auto& entries = scratch[static_cast<std::size_t>(q)];
      mem.neighbors.for_each_recent(v, [&](const NeighborEntry& e) { entries.push_back(e); });
      for (const auto& e : entries) {
        knodes.push_back(e.other);
        kentries.push_back(&e);
        kdt.push_back(static_cast<T>(seconds_between(ev.ts, e.ts)));
      }
      offsets.push_back(static_cast<Index>(knodes.size()));
    }
  }

  auto qin = concat_cols<T>({mem.states.gather(qnodes), Tensor<T>::constant(std::move(qfeat)),
                             time_encoding(qdt, p.time_omega, p.time_phase)});
  Tensor<T> attn;
  const Index K = static_cast<Index>(knodes.size());
  if (K > 0) {
    Matrix<T> kenc(K, E);
    std::vector<float> buf(c.edge_dim());
    for (Index r = 0; r < K; ++r) {
      const NeighborEntry& e = *kentries[static_cast<std::size_t>(r)];
      write_edge_encoding(features[e.src], features[e.dst], e.rel, buf);
      for (Index j = 0; j < E; ++j) kenc(r, j) = static_cast<T>(buf[static_cast<std::size_t>(j)]);
    }
    Column<T> kdtc = Eigen::Map<const Column<T>>(kdt.data(), K);
    auto kin = concat_cols<T>({mem.states.gather(knodes), Tensor<T>::constant(std::move(kenc)),
                               time_encoding(kdtc, p.time_omega, p.time_phase)});
    auto qp = linear(qin, p.attn_wq, p.attn_bq);
    auto kp = linear(kin, p.attn_wk, p.attn_bk);
    auto vp = linear(kin, p.attn_wv, p.attn_bv);
    attn = segment_attention(qp, kp, vp, offsets, static_cast<Index>(c.heads));
  } else {
    attn = Tensor<T>::constant(Matrix<T>::Zero(M, S));
  }
  auto mixed = add(linear(attn, p.attn_wo, p.attn_bo), linear(qin, p.attn_wr, p.attn_br));
  auto h = layer_norm(mixed, p.norm_gamma, p.norm_beta);
  auto pair = reshape(h, B, 2 * S);
  BatchOutput<T> out;
  out.z = linear(pair, p.proj_w, p.proj_b);
  auto a1 = relu(linear(out.z, p.dec_w1, p.dec_b1));
  auto a2 = relu(linear(a1, p.dec_w2, p.dec_b2));
  out.logits = linear(a2, p.dec_w3, p.dec_b3);
  return out;
}

/// One batch step of the stream: apply the previous batch's updates, embed and decode
/// this batch, then queue its updates.
template <class T>
BatchOutput<T> forward_batch(const ModelParams<T>& p, StreamMemory<T>& mem, const FeatureCache& features,
                             std::span<const Event> batch) {
  mem.reserve_nodes(features.size());
  apply_pending(p, mem, features);
  auto out = embed_and_decode(p, mem, features, batch);
  mem.pending.assign(batch.begin(), batch.end());
  return out;
}

inline std::vector<int> relation_labels(std::span<const Event> batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const Event& ev : batch) labels.push_back(static_cast<int>(relation_index(ev.rel)));
  return labels;
}

// ---------------------------------------------------------------------------
// Decoding helpers

/// Softmax probabilities for one logit row.
template <class T>
std::array<T, kNumRelations> decode(std::span<const T> logits) {
  std::array<T, kNumRelations> p{};
  T mx = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t i = 0; i < kNumRelations; ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

/// -log P[actual]; the cross-entropy against a one-hot label.
template <class T>
T reconstruction_error(const std::array<T, kNumRelations>& probs, Relation actual) {
  return -std::log(probs[relation_index(actual)]);
}

// ---------------------------------------------------------------------------
// Scoring

template <class T>
struct ScoredEvent {
  const Event* event = nullptr;
  std::span<const T> z;
  std::array<T, kNumRelations> probs{};
  T re = 0;
};

struct ScoreOptions {
  std::size_t batch_size = 256;
};

/// Scores a chronological stream with frozen parameters. The callback sees events in
/// order; the embedding span is only valid during the call.
template <class T, class F>
void score_stream(const ModelParams<T>& p, std::span<const Event> events, const FeatureCache& features,
                  StreamMemory<T>& mem, F&& on_event, ScoreOptions opts = {}) {
  nn::NoGradGuard no_grad;
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
  for (std::size_t start = 0; start < events.size(); start += bs) {
    auto batch = events.subspan(start, std::min(bs, events.size() - start));
    auto out = forward_batch(p, mem, features, batch);
    const auto& logits = out.logits.value();
    const auto& z = out.z.value();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const nn::Index r = static_cast<nn::Index>(i);
      // log-sum-exp for a stable RE; probabilities from the same shifted logits
      T mx = logits.row(r).maxCoeff();
      T sum = 0;
      ScoredEvent<T> s;
      for (std::size_t k = 0; k < kNumRelations; ++k) sum += (s.probs[k] = std::exp(logits(r, nn::Index(k)) - mx));
      for (auto& v : s.probs) v /= sum;
      s.event = &batch[i];
      s.z = std::span<const T>(z.row(r).data(), static_cast<std::size_t>(z.cols()));
      s.re = (mx + std::log(sum)) - logits(r, nn::Index(relation_index(batch[i].rel)));
      on_event(s);
    }
  }
  apply_pending(p, mem, features);
}

template <class T, class F>
void score_stream(const ModelParams<T>& p, std::span<const Event> events, const FeatureCache& features, F&& on_event,
                  ScoreOptions opts = {}) {
  StreamMemory<T> mem(p.config);
  score_stream(p, events, features, mem, std::forward<F>(on_event), opts);
}

/// Reconstruction error of every event, in order.
template <class T>
std::vector<T> score_errors(const ModelParams<T>& p, std::span<const Event> events, const FeatureCache& features,
                            ScoreOptions opts = {}) {
  std::vector<T> out;
  out.reserve(events.size());
  score_stream(p, events, features, [&](const ScoredEvent<T>& s) { out.push_back(s.re); }, opts);
  return out;
}

// ---------------------------------------------------------------------------
// Training

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double learning_rate = 5e-4;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean RE over each epoch
  std::size_t steps = 0;
  double seconds = 0;
};

/// Mean RE over the whole stream with the recorded graph spanning every batch (no
/// truncation). Intended for small streams; used to check gradients.
template <class T>
nn::Tensor<T> stream_loss(const ModelParams<T>& p, std::span<const Event> events, const FeatureCache& features,
                          std::size_t batch_size = 1) {
  StreamMemory<T> mem(p.config);
  std::vector<nn::Tensor<T>> terms;
  const T w = T(1) / static_cast<T>(std::max<std::size_t>(1, events.size()));
  const std::size_t bs = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < events.size(); start += bs) {
    auto batch = events.subspan(start, std::min(bs, events.size() - start));
    auto out = forward_batch(p, mem, features, batch);
    terms.push_back(nn::cross_entropy_sum(out.logits, relation_labels(batch), w));
  }
  return nn::sum_scalars(terms);
}

/// Gradient descent on mean RE. Memory is reset at the start of every epoch, and the
/// recorded history is cut after every batch (the GRU still receives gradient through
/// the previous batch's updates, which are applied inside the current step).
template <class T>
TrainReport train(ModelParams<T>& p, std::span<const Event> events, const FeatureCache& features,
                  const TrainConfig& cfg) {
  TrainReport report;
  if (events.empty() || cfg.epochs == 0) return report;
  auto t0 = std::chrono::steady_clock::now();
  auto params = p.tensors();
  typename nn::Adam<T>::Options ao;
  ao.lr = static_cast<T>(cfg.learning_rate);
  nn::Adam<T> opt(params, ao);
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  StreamMemory<T> mem(p.config);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    mem.reset();
    double total = 0;
    for (std::size_t start = 0; start < events.size(); start += bs) {
      auto batch = events.subspan(start, std::min(bs, events.size() - start));
      opt.zero_grad();
      auto out = forward_batch(p, mem, features, batch);
      auto loss = nn::cross_entropy_sum(out.logits, relation_labels(batch), T(1) / static_cast<T>(batch.size()));
      const double l = static_cast<double>(loss.value()(0, 0));
      if (!std::isfinite(l)) throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
      total += l * static_cast<double>(batch.size());
      loss.backward();
      nn::clip_grad_norm(opt.params(), static_cast<T>(cfg.clip_norm));
      opt.step();
      mem.states.detach();
      ++report.steps;
    }
    report.epoch_loss.push_back(total / static_cast<double>(events.size()));
    if (!p.all_finite()) throw DivergenceError("parameters became non-finite at epoch " + std::to_string(epoch));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Continues training from `p` on additional (e.g. analyst-confirmed benign) events.
template <class T>
TrainReport retrain(ModelParams<T>& p, std::span<const Event> events, const FeatureCache& features,
                    const TrainConfig& cfg) {
  return train(p, events, features, cfg);
}

}  // namespace provwatch::tgn
