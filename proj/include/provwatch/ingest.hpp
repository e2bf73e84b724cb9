#pragma once

// Audit-event ingestion: JSON-lines parsing, the entity catalog, allow-list
// noise reduction and a chronological event reader.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <limits>
#include <istream>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "provwatch/types.hpp"

namespace provwatch {

inline constexpr std::string_view kUnknownAttribute = "<unknown>";

struct EntityNode {
  std::string id;
  EntityKind kind = EntityKind::File;
  std::string attribute;
};

/// One provenance edge. Endpoints are indices into the EntityCatalog that produced it.
struct Event {
  Timestamp ts = 0;
  NodeId src = 0;
  NodeId dst = 0;
  Relation rel = Relation::Read;

  friend bool operator==(const Event&, const Event&) = default;
};

class ParseError : public std::runtime_error {
 public:
  enum class Code { MalformedJson, UnknownRelation, KindMismatch, AttributeConflict, NonMonotonicTs };

  ParseError(Code code, std::string message, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message),
        code_(code),
        line_(line),
        detail_(std::move(message)) {}

  Code code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& detail() const noexcept { return detail_; }

  ParseError at_line(std::size_t line) const { return ParseError(code_, detail_, line); }

 private:
  Code code_;
  std::size_t line_;
  std::string detail_;
};

inline std::string_view to_string(ParseError::Code c) {
  switch (c) {
    case ParseError::Code::MalformedJson: return "MalformedJson";
    case ParseError::Code::UnknownRelation: return "UnknownRelation";
    case ParseError::Code::KindMismatch: return "KindMismatch";
    case ParseError::Code::AttributeConflict: return "AttributeConflict";
    case ParseError::Code::NonMonotonicTs: return "NonMonotonicTs";
  }
  return "?";
}

/// Interns entities by their opaque id. Ids map to dense NodeIds in first-seen order.
class EntityCatalog {
 public:
  std::size_t size() const noexcept { return nodes_.size(); }
  const EntityNode& operator[](NodeId id) const { return nodes_[id]; }
  const std::vector<EntityNode>& nodes() const noexcept { return nodes_; }

  std::optional<NodeId> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Checks that (id, kind, attribute) agrees with any existing entry without inserting.
  void check(const EntityNode& node) const {
    auto it = index_.find(node.id);
    if (it == index_.end()) return;
    const EntityNode& known = nodes_[it->second];
    if (known.kind != node.kind)
      throw ParseError(ParseError::Code::KindMismatch,
                       "entity '" + node.id + "' changed kind from " + std::string(to_string(known.kind)) +
                           " to " + std::string(to_string(node.kind)));
    if (known.attribute != node.attribute)
      throw ParseError(ParseError::Code::AttributeConflict, "entity '" + node.id + "' changed attribute");
  }

  NodeId intern(EntityNode node) {
    check(node);
    auto [it, inserted] = index_.try_emplace(node.id, static_cast<NodeId>(nodes_.size()));
    if (inserted) nodes_.push_back(std::move(node));
    return it->second;
  }

 private:
  std::vector<EntityNode> nodes_;
  std::unordered_map<std::string, NodeId> index_;
};

inline std::string normalize_attribute(std::string attr) {
  if (attr.empty()) return std::string(kUnknownAttribute);
  return attr;
}

namespace detail {

inline EntityNode parse_entity(const nlohmann::json& j, const char* which) {
  if (!j.is_object())
    throw ParseError(ParseError::Code::MalformedJson, std::string("'") + which + "' is not an object");
  auto id = j.find("id");
  auto kind = j.find("kind");
  if (id == j.end() || !id->is_string() || id->get_ref<const std::string&>().empty())
    throw ParseError(ParseError::Code::MalformedJson, std::string("'") + which + ".id' missing");
  if (kind == j.end() || !kind->is_string())
    throw ParseError(ParseError::Code::MalformedJson, std::string("'") + which + ".kind' missing");
  auto parsed_kind = parse_kind(kind->get_ref<const std::string&>());
  if (!parsed_kind)
    throw ParseError(ParseError::Code::KindMismatch,
                     "unknown entity kind '" + kind->get<std::string>() + "'");
  std::string attr;
  if (auto a = j.find("attr"); a != j.end()) {
    if (!a->is_string())
      throw ParseError(ParseError::Code::MalformedJson, std::string("'") + which + ".attr' is not a string");
    attr = a->get<std::string>();
  }
  return EntityNode{id->get<std::string>(), *parsed_kind, normalize_attribute(std::move(attr))};
}

}  // namespace detail

/// Parses one JSON-lines record, validates the subject/object pairing and interns both
/// endpoints. The catalog is left untouched when the record is rejected.
inline Event parse_event_line(std::string_view line, EntityCatalog& catalog) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    throw ParseError(ParseError::Code::MalformedJson, "not a JSON object");

  auto ts = j.find("ts");
  if (ts == j.end() || !ts->is_number_integer())
    throw ParseError(ParseError::Code::MalformedJson, "'ts' must be an integer");
  auto src_it = j.find("src");
  auto dst_it = j.find("dst");
  auto rel_it = j.find("rel");
  if (src_it == j.end() || dst_it == j.end())
    throw ParseError(ParseError::Code::MalformedJson, "'src' and 'dst' are required");
  if (rel_it == j.end() || !rel_it->is_string())
    throw ParseError(ParseError::Code::MalformedJson, "'rel' must be a string");

  auto rel = parse_relation(rel_it->get_ref<const std::string&>());
  if (!rel)
    throw ParseError(ParseError::Code::UnknownRelation, "unknown relation '" + rel_it->get<std::string>() + "'");

  EntityNode src = detail::parse_entity(*src_it, "src");
  EntityNode dst = detail::parse_entity(*dst_it, "dst");
  if (src.kind != EntityKind::Process)
    throw ParseError(ParseError::Code::KindMismatch, "subject '" + src.id + "' is not a Process");
  if (dst.kind != object_kind_of(*rel))
    throw ParseError(ParseError::Code::KindMismatch,
                     std::string(to_string(*rel)) + " cannot target a " + std::string(to_string(dst.kind)));
  catalog.check(src);
  catalog.check(dst);
  if (src.id == dst.id && src.attribute != dst.attribute)
    throw ParseError(ParseError::Code::AttributeConflict, "self-edge with two attributes for '" + src.id + "'");

  Event ev;
  ev.ts = ts->get<Timestamp>();
  ev.src = catalog.intern(std::move(src));
  ev.dst = catalog.intern(std::move(dst));
  ev.rel = *rel;
  return ev;
}

/// Serializes an event in the JSON-lines input format.
inline std::string format_event_line(const Event& ev, const EntityCatalog& catalog) {
  auto entity = [](const EntityNode& n) {
    nlohmann::ordered_json e;
    e["id"] = n.id;
    e["kind"] = std::string(to_string(n.kind));
    e["attr"] = n.attribute;
    return e;
  };
  nlohmann::ordered_json j;
  j["ts"] = ev.ts;
  j["src"] = entity(catalog[ev.src]);
  j["dst"] = entity(catalog[ev.dst]);
  j["rel"] = std::string(to_string(ev.rel));
  return j.dump();
}

/// Trusted attributes. Patterns ending in '/' match by prefix, everything else exactly.
class AllowList {
 public:
  AllowList() = default;

  void add(std::string pattern) {
    if (pattern.empty()) return;
    if (pattern.back() == '/')
      prefixes_.push_back(std::move(pattern));
    else
      exact_.insert(std::move(pattern));
  }

  bool empty() const noexcept { return exact_.empty() && prefixes_.empty(); }
  std::size_t size() const noexcept { return exact_.size() + prefixes_.size(); }

  bool matches(std::string_view attribute) const {
    if (exact_.count(std::string(attribute))) return true;
    return std::any_of(prefixes_.begin(), prefixes_.end(),
                       [&](const std::string& p) { return attribute.substr(0, p.size()) == p; });
  }

  /// One pattern per line; '#' starts a comment; surrounding whitespace is ignored.
  static AllowList parse(std::istream& in) {
    AllowList list;
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      auto last = line.find_last_not_of(" \t\r");
      list.add(line.substr(first, last - first + 1));
    }
    return list;
  }

  static AllowList load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PipelineError("cannot open allow-list '" + path + "'");
    return parse(in);
  }

 private:
  std::unordered_set<std::string> exact_;
  std::vector<std::string> prefixes_;
};

enum class AllowVerdict { Keep, Drop };

inline AllowVerdict apply_allowlist(const Event& ev, const AllowList& list, const EntityCatalog& catalog) {
  if (list.empty()) return AllowVerdict::Keep;
  if (list.matches(catalog[ev.src].attribute) || list.matches(catalog[ev.dst].attribute))
    return AllowVerdict::Drop;
  return AllowVerdict::Keep;
}

struct ReaderOptions {
  /// Events may arrive up to this far behind the newest timestamp seen; 0 means input
  /// must already be sorted.
  Timestamp reorder_horizon_ns = 0;
  /// Reject timestamps that go backwards (beyond the horizon). When false they are
  /// emitted as-is.
  bool strict_order = true;
  /// Count bad lines and continue instead of throwing.
  bool skip_errors = false;
};

struct ReaderStats {
  std::size_t lines = 0;
  std::size_t yielded = 0;
  std::size_t dropped = 0;
  std::size_t errors = 0;
};

/// Pull-based chronological reader. Ties in timestamp keep input order.
class EventReader {
 public:
  EventReader(std::istream& in, EntityCatalog& catalog, const AllowList& allow = {}, ReaderOptions opts = {})
      : in_(in), catalog_(catalog), allow_(allow), opts_(opts) {}

  std::optional<Event> next() {
    while (true) {
      if (!buffer_.empty() && (eof_ || ready(buffer_.top()))) return release();
      if (eof_) return std::nullopt;
      std::string line;
      if (!std::getline(in_, line)) {
        eof_ = true;
        continue;
      }
      ++stats_.lines;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      Event ev;
      try {
        ev = parse_event_line(line, catalog_);
        if (opts_.strict_order && have_released_ && ev.ts < last_released_)
          throw ParseError(ParseError::Code::NonMonotonicTs,
                           "timestamp " + std::to_string(ev.ts) + " precedes " + std::to_string(last_released_));
      } catch (const ParseError& e) {
        ++stats_.errors;
        if (opts_.skip_errors) continue;
        throw e.at_line(stats_.lines);
      }
      if (apply_allowlist(ev, allow_, catalog_) == AllowVerdict::Drop) {
        ++stats_.dropped;
        continue;
      }
      newest_ = std::max(newest_, ev.ts);
      buffer_.push(Pending{ev, seq_++});
    }
  }

  const ReaderStats& stats() const noexcept { return stats_; }

 private:
  struct Pending {
    Event ev;
    std::size_t seq;
  };
  struct Later {
    bool operator()(const Pending& a, const Pending& b) const {
      return a.ev.ts != b.ev.ts ? a.ev.ts > b.ev.ts : a.seq > b.seq;
    }
  };

  bool ready(const Pending& p) const { return p.ev.ts <= newest_ - opts_.reorder_horizon_ns; }

  Event release() {
    Event ev = buffer_.top().ev;
    buffer_.pop();
    last_released_ = ev.ts;
    have_released_ = true;
    ++stats_.yielded;
    return ev;
  }

  std::istream& in_;
  EntityCatalog& catalog_;
  const AllowList& allow_;
  ReaderOptions opts_;
  ReaderStats stats_;
  std::priority_queue<Pending, std::vector<Pending>, Later> buffer_;
  Timestamp newest_ = std::numeric_limits<Timestamp>::min();
  Timestamp last_released_ = 0;
  bool have_released_ = false;
  std::size_t seq_ = 0;
  bool eof_ = false;
};

/// An in-memory event log with the catalog its node ids refer to.
struct EventLog {
  EntityCatalog catalog;
  std::vector<Event> events;
  ReaderStats stats;
};

inline EventLog read_event_log(std::istream& in, const AllowList& allow = {}, ReaderOptions opts = {}) {
  EventLog log;
  EventReader reader(in, log.catalog, allow, opts);
  while (auto ev = reader.next()) log.events.push_back(*ev);
  log.stats = reader.stats();
  return log;
}

inline EventLog load_event_log(const std::string& path, const AllowList& allow = {}, ReaderOptions opts = {}) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open event log '" + path + "'");
  return read_event_log(in, allow, opts);
}

}  // namespace provwatch
