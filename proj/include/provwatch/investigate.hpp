#pragma once

// Investigation of flagged queues: high-RE subgraph, edge merging, Louvain
// communities, candidate summary graphs and their DOT rendering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "provwatch/detect.hpp"
#include "provwatch/ingest.hpp"
#include "provwatch/types.hpp"

namespace provwatch::investigate {

using detect::ScoredRecord;
using detect::TimeWindow;
using detect::WindowQueue;

// ---------------------------------------------------------------------------
// Reduction

struct MergedEdge {
  NodeId src = 0;
  NodeId dst = 0;
  Relation rel = Relation::Read;
  std::size_t count = 0;
  Timestamp first_ts = 0;
  Timestamp last_ts = 0;
  double max_re = 0;
  double total_re = 0;
};

struct ReducedGraph {
  std::vector<NodeId> nodes;  // sorted
  std::vector<MergedEdge> edges;  // sorted by (src, dst, rel)
};

/// Merges events sharing (src, dst, relation) into one edge.
inline ReducedGraph reduce_graph(std::span<const ScoredRecord> events) {
  std::map<std::tuple<NodeId, NodeId, std::uint8_t>, MergedEdge> merged;
  ReducedGraph g;
  for (const auto& r : events) {
    const auto key = std::make_tuple(r.ev.src, r.ev.dst, static_cast<std::uint8_t>(r.ev.rel));
    auto [it, inserted] = merged.try_emplace(key);
    MergedEdge& e = it->second;
    if (inserted) {
      e.src = r.ev.src;
      e.dst = r.ev.dst;
      e.rel = r.ev.rel;
      e.first_ts = e.last_ts = r.ev.ts;
      e.max_re = r.re;
    }
    ++e.count;
    e.first_ts = std::min(e.first_ts, r.ev.ts);
    e.last_ts = std::max(e.last_ts, r.ev.ts);
    e.max_re = std::max(e.max_re, static_cast<double>(r.re));
    e.total_re += r.re;
    g.nodes.push_back(r.ev.src);
    g.nodes.push_back(r.ev.dst);
  }
  std::sort(g.nodes.begin(), g.nodes.end());
  g.nodes.erase(std::unique(g.nodes.begin(), g.nodes.end()), g.nodes.end());
  g.edges.reserve(merged.size());
  for (auto& [k, e] : merged) g.edges.push_back(e);
  return g;
}

// ---------------------------------------------------------------------------
// G_q

/// Undirected weighted graph over local indices 0..n-1. Self-loops are not stored.
struct UGraph {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;

  explicit UGraph(std::size_t nodes = 0) : n(nodes), adj(nodes) {}

  /// Adds weight to {u, v}, merging with an existing entry.
  void add(std::size_t u, std::size_t v, double w) {
    if (u == v) return;
    auto bump = [&](std::size_t a, std::size_t b) {
      for (auto& [x, y] : adj[a])
        if (x == b) {
          y += w;
          return;
        }
      adj[a].emplace_back(b, w);
    };
    bump(u, v);
    bump(v, u);
  }

  double degree(std::size_t u) const {
    double d = 0;
    for (const auto& [v, w] : adj[u]) d += w;
    return d;
  }

  /// Total edge weight m (each undirected edge once).
  double total_weight() const {
    double s = 0;
    for (std::size_t u = 0; u < n; ++u) s += degree(u);
    return s / 2;
  }
};

struct WeightedGraph {
  std::vector<NodeId> nodes;            // sorted; local index = position
  std::vector<ScoredRecord> events;     // retained events, chronological
  UGraph graph;

  std::size_t local(NodeId v) const {
    return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), v) - nodes.begin());
  }
};

class EmptyGq : public PipelineError {
 public:
  explicit EmptyGq(std::size_t queue) : PipelineError("queue " + std::to_string(queue) + " has no edge above its window threshold") {}
};

/// Events of the given records above σ_T. Weights are summed REs per unordered pair.
inline WeightedGraph build_weighted_graph(std::vector<ScoredRecord> retained) {
  WeightedGraph g;
  g.events = std::move(retained);
  for (const auto& r : g.events) {
    g.nodes.push_back(r.ev.src);
    g.nodes.push_back(r.ev.dst);
  }
  std::sort(g.nodes.begin(), g.nodes.end());
  g.nodes.erase(std::unique(g.nodes.begin(), g.nodes.end()), g.nodes.end());
  g.graph = UGraph(g.nodes.size());
  for (const auto& r : g.events) g.graph.add(g.local(r.ev.src), g.local(r.ev.dst), r.re);
  return g;
}

/// Retains every event above its own window's σ_T, over all windows of the queue.
inline WeightedGraph build_gq(const WindowQueue& q, std::span<const TimeWindow> windows) {
  std::vector<ScoredRecord> kept;
  std::vector<std::size_t> members = q.windows;
  std::sort(members.begin(), members.end());
  for (std::size_t idx : members) {
    const TimeWindow& w = windows[idx];
    if (!w.sigma) continue;
    for (const auto& r : w.events)
      if (static_cast<double>(r.re) > *w.sigma) kept.push_back(r);
  }
  if (kept.empty()) throw EmptyGq(q.id);
  return build_weighted_graph(std::move(kept));
}

// ---------------------------------------------------------------------------
// Modularity and Louvain

struct Partition {
  std::vector<std::size_t> community;  // per local node, ids 0..k-1 in order of first node
  double modularity = 0;

  std::size_t count() const {
    return community.empty() ? 0 : *std::max_element(community.begin(), community.end()) + 1;
  }
};

/// Σ_c [Σ_in/2m − (Σ_tot/2m)²] with Σ_in counting both orientations of internal edges.
inline double modularity(const UGraph& g, const std::vector<std::size_t>& community) {
  const double m2 = 2 * g.total_weight();
  if (m2 <= 0) return 0;
  std::unordered_map<std::size_t, double> in, tot;
  for (std::size_t u = 0; u < g.n; ++u) {
    for (const auto& [v, w] : g.adj[u]) {
      tot[community[u]] += w;
      if (community[u] == community[v]) in[community[u]] += w;
    }
  }
  double q = 0;
  for (const auto& [c, t] : tot) {
    auto it = in.find(c);
    const double sin = it == in.end() ? 0 : it->second;
    q += sin / m2 - (t / m2) * (t / m2);
  }
  return q;
}

/// Renumbers communities by first appearance in node order.
inline std::vector<std::size_t> canonical_labels(const std::vector<std::size_t>& community) {
  std::unordered_map<std::size_t, std::size_t> remap;
  std::vector<std::size_t> out(community.size());
  for (std::size_t i = 0; i < community.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(community[i], remap.size());
    out[i] = it->second;
  }
  return out;
}

namespace detail {

inline constexpr double kGainEps = 1e-12;

inline UGraph aggregate(const UGraph& g, const std::vector<std::size_t>& comm, std::size_t k,
                        std::vector<double>& self_loops, const std::vector<double>& prev_loops) {
  UGraph h(k);
  self_loops.assign(k, 0.0);
  for (std::size_t u = 0; u < g.n; ++u) {
    self_loops[comm[u]] += prev_loops[u];
    for (const auto& [v, w] : g.adj[u]) {
      if (comm[u] == comm[v])
        self_loops[comm[u]] += w;  // both orientations: counted as internal weight
      else if (u < v)
        h.add(comm[u], comm[v], w);
    }
  }
  return h;
}

/// Local-move phase on a graph whose nodes may carry internal weight (after
/// aggregation). Nodes are visited in `order` until none moves; among equally good
/// targets the lowest community id wins. Returns whether any node moved.
inline bool local_moves_weighted(const UGraph& g, const std::vector<double>& loops, double m2,
                                 std::vector<std::size_t>& comm, const std::vector<std::size_t>& order) {
  std::vector<double> k(g.n), tot(g.n, 0.0);
  for (std::size_t u = 0; u < g.n; ++u) {
    k[u] = g.degree(u) + loops[u];
    tot[comm[u]] += k[u];
  }
  std::vector<double> link(g.n, 0.0);
  std::vector<std::size_t> touched;
  bool moved_any = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::size_t u : order) {
      const std::size_t own = comm[u];
      touched.clear();
      for (const auto& [v, w] : g.adj[u]) {
        if (link[comm[v]] == 0.0) touched.push_back(comm[v]);
        link[comm[v]] += w;
      }
      tot[own] -= k[u];
      // gain of joining c, up to a constant factor: k_u,in(c) − tot(c)·k_u / 2m
      auto gain = [&](std::size_t c) { return link[c] - tot[c] * k[u] / m2; };
      double best_gain = gain(own);
      std::size_t best = own;
      std::sort(touched.begin(), touched.end());
      for (std::size_t c : touched) {
        if (c == own) continue;
        const double gc = gain(c);
        if (gc > best_gain + kGainEps) {
          best_gain = gc;
          best = c;
        }
      }
      tot[best] += k[u];
      comm[u] = best;
      for (std::size_t c : touched) link[c] = 0.0;
      if (best != own) {
        moved = true;
        moved_any = true;
      }
    }
  }
  return moved_any;
}

/// Local-move phase on a plain graph starting from `comm`.
inline bool local_moves(const UGraph& g, std::vector<std::size_t>& comm, const std::vector<std::size_t>& order) {
  const double m2 = 2 * g.total_weight();
  if (m2 <= 0) return false;
  return local_moves_weighted(g, std::vector<double>(g.n, 0.0), m2, comm, order);
}

inline std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace detail

/// Louvain community detection: local moves, aggregation, repeat until modularity no
/// longer increases, then single-node moves on the original graph until none helps.
inline Partition louvain(const UGraph& g, std::uint64_t seed = 0) {
  Partition p;
  p.community.resize(g.n);
  std::iota(p.community.begin(), p.community.end(), 0);
  const double m2 = 2 * g.total_weight();
  if (g.n == 0) return p;
  if (m2 <= 0) {
    p.community = canonical_labels(p.community);
    return p;
  }
  std::mt19937_64 rng(seed);

  UGraph level = g;
  std::vector<double> loops(g.n, 0.0);
  std::vector<std::size_t> node_to_level(g.n);
  std::iota(node_to_level.begin(), node_to_level.end(), 0);
  double best_q = modularity(g, p.community);
  while (true) {
    std::vector<std::size_t> comm(level.n);
    std::iota(comm.begin(), comm.end(), 0);
    bool moved = detail::local_moves_weighted(level, loops, m2, comm, detail::shuffled(level.n, rng));
    if (!moved) break;
    auto labels = canonical_labels(comm);
    const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::size_t> candidate(g.n);
    for (std::size_t u = 0; u < g.n; ++u) candidate[u] = labels[node_to_level[u]];
    const double q = modularity(g, candidate);
    if (q <= best_q + detail::kGainEps) break;
    best_q = q;
    p.community = candidate;
    node_to_level = candidate;
    std::vector<double> next_loops;
    level = detail::aggregate(level, labels, k, next_loops, loops);
    loops = std::move(next_loops);
    if (k == 1) break;
  }
  // refinement on the original graph; makes the result single-move optimal
  auto refined = p.community;
  detail::local_moves(g, refined, detail::shuffled(g.n, rng));
  const double rq = modularity(g, refined);
  if (rq > best_q - detail::kGainEps) p.community = refined;
  p.community = canonical_labels(p.community);
  p.modularity = modularity(g, p.community);
  return p;
}

/// Best modularity reachable by moving one node to another (possibly new) community,
/// minus the current modularity. Non-positive means single-move locally optimal.
inline double best_single_move_gain(const UGraph& g, const std::vector<std::size_t>& community) {
  const double base = modularity(g, community);
  double best = -std::numeric_limits<double>::infinity();
  const std::size_t fresh = community.empty() ? 0 : *std::max_element(community.begin(), community.end()) + 1;
  for (std::size_t u = 0; u < g.n; ++u) {
    for (std::size_t c = 0; c <= fresh; ++c) {
      if (c == community[u]) continue;
      auto trial = community;
      trial[u] = c;
      best = std::max(best, modularity(g, trial) - base);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Summaries

struct SummaryGraph {
  std::size_t rank = 0;       // 1-based, by descending total RE
  std::size_t community = 0;
  std::vector<NodeId> nodes;  // sorted by entity id
  std::vector<MergedEdge> edges;
  double total_re = 0;
};

/// One summary per community of at least `min_size` nodes, ranked by total internal RE.
inline std::vector<SummaryGraph> summarize(const WeightedGraph& g, const Partition& part, const EntityCatalog& catalog,
                                           std::size_t min_size = 2) {
  const std::size_t k = part.count();
  std::vector<SummaryGraph> all(k);
  for (std::size_t c = 0; c < k; ++c) all[c].community = c;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) all[part.community[i]].nodes.push_back(g.nodes[i]);
  std::vector<std::vector<ScoredRecord>> internal(k);
  for (const auto& r : g.events) {
    const std::size_t cu = part.community[g.local(r.ev.src)];
    if (cu == part.community[g.local(r.ev.dst)]) internal[cu].push_back(r);
  }
  std::vector<SummaryGraph> out;
  for (std::size_t c = 0; c < k; ++c) {
    SummaryGraph& s = all[c];
    if (s.nodes.size() < min_size) continue;
    s.edges = reduce_graph(internal[c]).edges;
    for (const auto& r : internal[c]) s.total_re += r.re;
    std::sort(s.nodes.begin(), s.nodes.end(),
              [&](NodeId a, NodeId b) { return catalog[a].id < catalog[b].id; });
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SummaryGraph& a, const SummaryGraph& b) { return a.total_re > b.total_re; });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
  return out;
}

// ---------------------------------------------------------------------------
// DOT

struct DotGraph {
  using Attrs = std::vector<std::pair<std::string, std::string>>;
  struct Node {
    std::string id;
    Attrs attrs;
  };
  struct Edge {
    std::string src;
    std::string dst;
    Attrs attrs;
  };
  std::vector<Node> nodes;
  std::vector<Edge> edges;
};

inline std::string dot_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

inline std::string emit_dot(const DotGraph& g) {
  if (g.nodes.empty() && g.edges.empty()) return "digraph {}\n";
  std::ostringstream os;
  auto attrs = [&](const DotGraph::Attrs& a) {
    if (a.empty()) return;
    os << " [";
    for (std::size_t i = 0; i < a.size(); ++i) os << (i ? ", " : "") << a[i].first << "=" << dot_quote(a[i].second);
    os << "]";
  };
  os << "digraph {\n";
  for (const auto& n : g.nodes) {
    os << "  " << dot_quote(n.id);
    attrs(n.attrs);
    os << ";\n";
  }
  for (const auto& e : g.edges) {
    os << "  " << dot_quote(e.src) << " -> " << dot_quote(e.dst);
    attrs(e.attrs);
    os << ";\n";
  }
  os << "}\n";
  return os.str();
}

inline std::string_view dot_shape(EntityKind k) {
  switch (k) {
    case EntityKind::Process: return "box";
    case EntityKind::File: return "ellipse";
    case EntityKind::Socket: return "diamond";
  }
  return "ellipse";
}

inline DotGraph to_dot_graph(const SummaryGraph& sg, const EntityCatalog& catalog) {
  DotGraph d;
  for (NodeId v : sg.nodes) {
    const EntityNode& n = catalog[v];
    d.nodes.push_back({n.id, {{"label", n.attribute}, {"shape", std::string(dot_shape(n.kind))}}});
  }
  std::vector<const MergedEdge*> edges;
  for (const auto& e : sg.edges) edges.push_back(&e);
  std::sort(edges.begin(), edges.end(), [&](const MergedEdge* a, const MergedEdge* b) {
    return std::make_tuple(catalog[a->src].id, catalog[a->dst].id, relation_index(a->rel)) <
           std::make_tuple(catalog[b->src].id, catalog[b->dst].id, relation_index(b->rel));
  });
  for (const MergedEdge* e : edges) {
    std::ostringstream tip;
    tip.precision(4);
    tip << "count=" << e->count << " max_re=" << e->max_re;
    d.edges.push_back({catalog[e->src].id, catalog[e->dst].id,
                       {{"label", std::string(relation_abbrev(e->rel))}, {"tooltip", tip.str()}}});
  }
  return d;
}

inline std::string emit_dot(const SummaryGraph& sg, const EntityCatalog& catalog) {
  return emit_dot(to_dot_graph(sg, catalog));
}

class DotParseError : public PipelineError {
 public:
  using PipelineError::PipelineError;
};

namespace detail {

class DotLexer {
 public:
  explicit DotLexer(std::string_view s) : s_(s) {}

  void skip_ws() {
    while (pos_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else if (s_.substr(pos_, 2) == "//" || s_[pos_] == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (s_.substr(pos_, 2) == "/*") {
        auto end = s_.find("*/", pos_ + 2);
        pos_ = end == std::string_view::npos ? s_.size() : end + 2;
      } else {
        break;
      }
    }
  }

  bool eat(std::string_view tok) {
    skip_ws();
    if (s_.substr(pos_, tok.size()) == tok) {
      pos_ += tok.size();
      return true;
    }
    return false;
  }

  void expect(std::string_view tok) {
    if (!eat(tok)) fail("expected '" + std::string(tok) + "'");
  }

  bool at_end() {
    skip_ws();
    return pos_ >= s_.size();
  }

  std::string ident() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '"') {
      std::string out;
      ++pos_;
      while (pos_ < s_.size() && s_[pos_] != '"') {
        char c = s_[pos_++];
        if (c == '\\' && pos_ < s_.size()) {
          char n = s_[pos_++];
          if (n == 'n')
            out += '\n';
          else if (n == '"' || n == '\\')
            out += n;
          else {
            out += '\\';
            out += n;
          }
        } else {
          out += c;
        }
      }
      if (pos_ >= s_.size()) fail("unterminated string");
      ++pos_;
      return out;
    }
    std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '.' ||
            static_cast<unsigned char>(s_[pos_]) >= 0x80))
      ++pos_;
    if (start == pos_) fail("expected identifier");
    return std::string(s_.substr(start, pos_ - start));
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DotParseError("DOT parse error at offset " + std::to_string(pos_) + ": " + what);
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses the DOT subset written by emit_dot: one digraph of node and edge statements
/// with optional attribute lists.
inline DotGraph parse_dot(std::string_view text) {
  detail::DotLexer lx(text);
  DotGraph g;
  lx.eat("strict");
  lx.expect("digraph");
  if (!lx.eat("{")) {
    lx.ident();
    lx.expect("{");
  }
  auto attr_list = [&] {
    DotGraph::Attrs a;
    if (!lx.eat("[")) return a;
    while (!lx.eat("]")) {
      std::string k = lx.ident();
      lx.expect("=");
      a.emplace_back(std::move(k), lx.ident());
      if (!lx.eat(",")) lx.eat(";");
    }
    return a;
  };
  while (!lx.eat("}")) {
    if (lx.at_end()) lx.fail("missing '}'");
    std::string first = lx.ident();
    if (lx.eat("->")) {
      std::string second = lx.ident();
      g.edges.push_back({std::move(first), std::move(second), attr_list()});
    } else {
      g.nodes.push_back({std::move(first), attr_list()});
    }
    lx.eat(";");
  }
  if (!lx.at_end()) lx.fail("trailing input");
  return g;
}

// ---------------------------------------------------------------------------
// Per-queue investigation

struct Investigation {
  std::size_t queue_id = 0;
  std::size_t queue_edges = 0;  // every event in the queue's windows
  std::size_t gq_edges = 0;     // events above σ_T
  std::size_t gq_nodes = 0;
  Partition partition;
  std::vector<SummaryGraph> summaries;

  std::size_t summary_edges() const {
    std::size_t n = 0;
    for (const auto& s : summaries) n += s.edges.size();
    return n;
  }
};

struct InvestigateConfig {
  std::uint64_t seed = 0;
  std::size_t min_community = 2;
};

inline Investigation investigate_queue(const WindowQueue& q, std::span<const TimeWindow> windows,
                                       const EntityCatalog& catalog, const InvestigateConfig& cfg = {}) {
  Investigation inv;
  inv.queue_id = q.id;
  for (std::size_t idx : q.windows) inv.queue_edges += windows[idx].events.size();
  WeightedGraph g = build_gq(q, windows);
  inv.gq_edges = g.events.size();
  inv.gq_nodes = g.nodes.size();
  inv.partition = louvain(g.graph, cfg.seed);
  inv.summaries = summarize(g, inv.partition, catalog, cfg.min_community);
  return inv;
}

inline std::string summary_file_name(std::size_t queue_id, std::size_t rank) {
  return std::to_string(queue_id) + "_" + std::to_string(rank) + ".dot";
}

inline nlohmann::json manifest_json(const Investigation& inv, const EntityCatalog& catalog) {
  nlohmann::json comms = nlohmann::json::array();
  for (const auto& s : inv.summaries) {
    nlohmann::json ids = nlohmann::json::array();
    for (NodeId v : s.nodes) ids.push_back(catalog[v].id);
    comms.push_back({{"rank", s.rank},
                     {"nodes", s.nodes.size()},
                     {"edges", s.edges.size()},
                     {"total_re", s.total_re},
                     {"entities", std::move(ids)},
                     {"file", summary_file_name(inv.queue_id, s.rank)}});
  }
  return {{"v", 1},
          {"queue_id", inv.queue_id},
          {"queue_edges", inv.queue_edges},
          {"gq_edges", inv.gq_edges},
          {"gq_nodes", inv.gq_nodes},
          {"modularity", inv.partition.modularity},
          {"communities", std::move(comms)}};
}

}  // namespace provwatch::investigate
