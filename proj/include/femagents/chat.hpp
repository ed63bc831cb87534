#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "femagents/roles.hpp"
#include "femagents/sandbox.hpp"

namespace femagents {

class Backend;

enum class MessageKind { prompt, agent, executor_feedback };

std::string_view message_kind_name(MessageKind kind);
MessageKind message_kind_from_name(std::string_view name);

struct ChatMessage {
  int index = 0;  // 0-based turn number, contiguous within a transcript
  std::string sender;
  std::string content;
  int step = 1;  // 1..4 query-step tag, non-decreasing
  MessageKind kind = MessageKind::agent;

  bool operator==(const ChatMessage&) const = default;
};

struct TranscriptMetadata {
  std::string combination;
  std::string backend_id;
  std::string model_id;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
};

// Ordered conversation record; the unit of replay and persistence.
struct Transcript {
  std::vector<ChatMessage> messages;
  TranscriptMetadata metadata;

  void append(std::string sender, std::string content, int step, MessageKind kind);
};

// Canonical serialization of the message list. Deterministic (stable field
// order, metadata excluded), so field-equal transcripts hash equal.
std::string canonical_transcript(const Transcript& t);
std::uint64_t transcript_hash(const Transcript& t);

// Line-delimited persistence: one JSON record per message with fields
// index, step, sender, kind, content.
void write_transcript_jsonl(const Transcript& t, const std::filesystem::path& path);
Transcript read_transcript_jsonl(const std::filesystem::path& path);

enum class VerdictValue { approve, revise, none };

std::string_view verdict_name(VerdictValue v);

struct VerdictConfig {
  std::vector<std::string> revise_keywords = {"error",   "issue",  "incorrect",
                                              "missing", "suggest", "should"};
  std::vector<std::string> approve_phrases = {"looks good", "correct", "well-structured"};
};

// Control footer `[[VERDICT: approve|revise]]` wins over the keyword
// heuristic; with no footer, any revise keyword forces revise, otherwise an
// approve phrase yields approve.
VerdictValue detect_verdict(std::string_view message, const VerdictConfig& config = {});

enum class StepDoneReason {
  not_done,
  success_path,
  turn_limit,
  error_limit,
  backend_error,
};

std::string_view step_done_name(StepDoneReason reason);

enum class ExecutorStatus { none, failed, succeeded };

struct SessionConfig {
  int max_turns = 30;   // per step
  int max_errors = 6;   // consecutive executor failures per step
  bool footer_protocol = true;
  std::string model = "gpt-3.5-turbo";
  double temperature = 1.0;
  VerdictConfig verdicts;
};

struct SessionState {
  std::vector<AgentRole> roles;
  Transcript transcript;
  int current_step = 1;
  int latest_code_version = 0;
  ExecutorStatus executor_status = ExecutorStatus::none;
  // Verdict per expert name on the latest code version; absence means the
  // expert has not reviewed this version yet.
  std::map<std::string, VerdictValue> expert_verdicts;
  int turn_count = 0;   // agent messages this step
  int error_count = 0;  // consecutive executor failures this step
  SessionConfig config;

  const AgentRole* role_of_kind(RoleKind kind) const;
  const AgentRole* role_named(std::string_view name) const;
  bool has_kind(RoleKind kind) const { return role_of_kind(kind) != nullptr; }
  const ChatMessage* last_message_of_step() const;
};

struct SpeakerDecision {
  std::string speaker;  // empty when the step is done
  StepDoneReason done = StepDoneReason::not_done;
};

// Deterministic speaker selection; a pure function of the session state.
SpeakerDecision next_speaker(const SessionState& state);

struct SandboxSetup {
  std::filesystem::path workspace;
  std::string interpreter_cmd = "python3";
  ExecLimits limits;
};

struct StepTrace {
  int step = 1;
  StepDoneReason reason = StepDoneReason::not_done;
  int executor_attempts = 0;
  int messages_appended = 0;
  bool environment_error = false;   // interpreter unavailable during the step
  bool executor_succeeded = false;  // latest code version ran cleanly
  bool last_execution_ok = false;   // most recent execution this step exited 0
  bool expert_approved = false;     // some expert approved the final code version
  std::vector<std::pair<std::string, std::uintmax_t>> produced_files;
};

// Posts the prompt as "User" and drives next_speaker until the step is done.
// Executor turns run code through the sandbox; all other speakers go through
// the backend. Backend failures terminate the step, they do not throw.
StepTrace run_step(SessionState& state, const std::string& step_prompt, Backend& backend,
                   const SandboxSetup* sandbox);

}  // namespace femagents
