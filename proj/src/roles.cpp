#include "femagents/roles.hpp"

#include <algorithm>
#include <cctype>

namespace femagents {
namespace {

constexpr const char* kEngineerProfile =
    "Engineer. You follow the query to generate codes. You write Python code to solve "
    "tasks. Wrap the code in a code block that specifies the script type. The user can't "
    "modify your code. So do not suggest incomplete code which requires others to modify. "
    "Don't use a code block if it's not intended to be executed by the executor.\n"
    "Don't include multiple code blocks in one response. Do not ask others to copy and "
    "paste the result.\n"
    "If the result indicates there is an error, fix the error and output the code again. "
    "Suggest the full code instead of partial code or code changes. If the error can't be "
    "fixed or if the task is not solved even after the code is executed successfully, "
    "analyse the problem, revisit your assumption, collect additional info you need, and "
    "think of a different approach to try.\n"
    "Regenerate the code whenever an expert agent makes suggestions (Ni & Buehler, 2024).";

constexpr const char* kExecutorProfile =
    "Executor. Save and execute the code written by the engineer and report and save the "
    "result (Ni & Buehler, 2024).";

constexpr const char* kPlannerProfile =
    "Planner, you make a plan based on the query, and clearly state which software you "
    "are asking the Engineer agent to use for the Python code, then ask the engineer to "
    "generate the code followed by the specific software format, Do not generate codes by "
    "yourself, do not respond to the message from Executor, do not give any suggestions "
    "for improving the code for Engineer.";

constexpr const char* kExpert12Profile =
    "Expert1 & 2, you are an FEniCS expert, you make sure Engineer strictly program based "
    "on the given software format, you discover the potential error and provide "
    "suggestions to Engineer. Do not generate any code.";

constexpr const char* kExxpert2Profile =
    "Exxpert2, you always think differently from Expert1, discuss with Expert1 to "
    "generate a common solution based on the query and code. Do not generate any code.";

constexpr const char* kExpertWithPlannerProfile =
    "Expert, you are an Expert based on the given software that given by the Planner, you "
    "make sure Engineer strictly program based on the given software framework, you "
    "discover the potential error and provide suggestions to engineer whether the code is "
    "successfully running or not, do not generate code by yourself.";

std::string normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

std::string_view role_kind_name(RoleKind kind) {
  switch (kind) {
    case RoleKind::Engineer: return "Engineer";
    case RoleKind::Executor: return "Executor";
    case RoleKind::Planner: return "Planner";
    case RoleKind::Expert: return "Expert";
  }
  return "?";
}

const std::vector<AgentRole>& builtin_roles() {
  static const std::vector<AgentRole> roles = {
      {"Engineer", "Eng", kEngineerProfile, RoleKind::Engineer, true},
      {"Executor", "Exe", kExecutorProfile, RoleKind::Executor, false},
      {"Planner", "Plan", kPlannerProfile, RoleKind::Planner, false},
      {"Expert1", "Exp 1", kExpert12Profile, RoleKind::Expert, false},
      {"Expert2", "Exp 2", kExpert12Profile, RoleKind::Expert, false},
      {"Exxpert2", "Exxp 2", kExxpert2Profile, RoleKind::Expert, false},
      {"Expert", "Exp", kExpertWithPlannerProfile, RoleKind::Expert, false},
  };
  return roles;
}

const AgentRole* find_role(std::string_view abbreviation) {
  const std::string key = normalize(abbreviation);
  for (const AgentRole& role : builtin_roles()) {
    if (normalize(role.abbreviation) == key) return &role;
  }
  return nullptr;
}

const AgentRole& lookup_role(std::string_view abbreviation) {
  const AgentRole* role = find_role(abbreviation);
  if (!role) throw RoleNotFound("unknown agent abbreviation: " + std::string(abbreviation));
  return *role;
}

std::string compact_abbreviation(std::string_view abbreviation) {
  std::string out;
  for (char c : abbreviation)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

}  // namespace femagents
