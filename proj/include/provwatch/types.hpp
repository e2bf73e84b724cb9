#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace provwatch {

/// Nanoseconds since the epoch.
using Timestamp = std::int64_t;

/// Dense index of an entity inside an EntityCatalog.
using NodeId = std::uint32_t;

enum class EntityKind : std::uint8_t { Process, File, Socket };

/// The nine interaction types, in the fixed order used for one-hot encoding.
enum class Relation : std::uint8_t {
  Start,
  Close,
  Clone,
  Read,
  Write,
  Open,
  Exec,
  Send,
  Receive,
};

inline constexpr std::size_t kNumRelations = 9;

inline constexpr std::array<Relation, kNumRelations> kAllRelations = {
    Relation::Start, Relation::Close, Relation::Clone, Relation::Read,   Relation::Write,
    Relation::Open,  Relation::Exec,  Relation::Send,  Relation::Receive,
};

inline constexpr std::size_t relation_index(Relation r) { return static_cast<std::size_t>(r); }

inline constexpr std::string_view to_string(EntityKind k) {
  switch (k) {
    case EntityKind::Process: return "Process";
    case EntityKind::File: return "File";
    case EntityKind::Socket: return "Socket";
  }
  return "?";
}

inline constexpr std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::Start: return "Start";
    case Relation::Close: return "Close";
    case Relation::Clone: return "Clone";
    case Relation::Read: return "Read";
    case Relation::Write: return "Write";
    case Relation::Open: return "Open";
    case Relation::Exec: return "Exec";
    case Relation::Send: return "Send";
    case Relation::Receive: return "Receive";
  }
  return "?";
}

inline std::optional<EntityKind> parse_kind(std::string_view s) {
  if (s == "Process") return EntityKind::Process;
  if (s == "File") return EntityKind::File;
  if (s == "Socket") return EntityKind::Socket;
  return std::nullopt;
}

inline std::optional<Relation> parse_relation(std::string_view s) {
  for (Relation r : kAllRelations)
    if (to_string(r) == s) return r;
  return std::nullopt;
}

/// Object kind a relation is allowed to target. The subject is always a process.
inline constexpr EntityKind object_kind_of(Relation r) {
  switch (r) {
    case Relation::Start:
    case Relation::Close:
    case Relation::Clone: return EntityKind::Process;
    case Relation::Read:
    case Relation::Write:
    case Relation::Open:
    case Relation::Exec: return EntityKind::File;
    case Relation::Send:
    case Relation::Receive: return EntityKind::Socket;
  }
  return EntityKind::File;
}

/// Short edge labels used when rendering summary graphs.
inline constexpr std::string_view relation_abbrev(Relation r) {
  switch (r) {
    case Relation::Start: return "Start";
    case Relation::Close: return "Close";
    case Relation::Clone: return "C";
    case Relation::Read: return "R";
    case Relation::Write: return "W";
    case Relation::Open: return "O";
    case Relation::Exec: return "E";
    case Relation::Send: return "S";
    case Relation::Receive: return "Rc";
  }
  return "?";
}

inline std::optional<Relation> parse_relation_abbrev(std::string_view s) {
  for (Relation r : kAllRelations)
    if (relation_abbrev(r) == s) return r;
  return std::nullopt;
}

/// Raised by pipeline stages for unrecoverable conditions (bad files, inconsistent state).
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace provwatch
