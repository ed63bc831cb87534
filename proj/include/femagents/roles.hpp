#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace femagents {

enum class RoleKind { Engineer, Executor, Planner, Expert };

std::string_view role_kind_name(RoleKind kind);

// A named conversational participant: system-prompt text plus capability
// flags. The Executor is the only role that runs code and never generates it.
struct AgentRole {
  std::string name;
  std::string abbreviation;
  std::string profile;
  RoleKind kind = RoleKind::Engineer;
  bool generates_code = false;
};

class RoleNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Built-in registry. Seven roles covering the six built-in profile texts
// (Expert1 and Expert2 share one profile).
const std::vector<AgentRole>& builtin_roles();

// Abbreviation lookup, case-insensitive and ignoring spaces, so "Exp 1",
// "exp1" and "Exp1" all resolve. Returns nullptr when unknown.
const AgentRole* find_role(std::string_view abbreviation);

// Same lookup, throwing RoleNotFound on a miss.
const AgentRole& lookup_role(std::string_view abbreviation);

// Compact label used in combination strings and reports ("Exp 1" -> "Exp1").
std::string compact_abbreviation(std::string_view abbreviation);

}  // namespace femagents
