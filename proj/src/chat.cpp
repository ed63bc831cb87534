#include "femagents/chat.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "femagents/backend.hpp"
#include "femagents/hash.hpp"
#include "json.hpp"

namespace femagents {
namespace {

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool contains_code(std::string_view text) { return !extract_code_blocks(text).empty(); }

// First expert (session role order) without a verdict on the latest code
// version.
const AgentRole* first_open_expert(const SessionState& state) {
  for (const AgentRole& role : state.roles) {
    if (role.kind != RoleKind::Expert) continue;
    if (!state.expert_verdicts.count(role.name)) return &role;
  }
  return nullptr;
}

SpeakerDecision pick(const AgentRole* role) {
  if (!role) return {"", StepDoneReason::not_done};
  return {role->name, StepDoneReason::not_done};
}

SpeakerDecision done(StepDoneReason reason) { return {"", reason}; }

}  // namespace

std::string_view message_kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::prompt: return "prompt";
    case MessageKind::agent: return "agent";
    case MessageKind::executor_feedback: return "executor_feedback";
  }
  return "?";
}

MessageKind message_kind_from_name(std::string_view name) {
  if (name == "prompt") return MessageKind::prompt;
  if (name == "agent") return MessageKind::agent;
  if (name == "executor_feedback") return MessageKind::executor_feedback;
  throw std::runtime_error("unknown message kind: " + std::string(name));
}

std::string_view verdict_name(VerdictValue v) {
  switch (v) {
    case VerdictValue::approve: return "approve";
    case VerdictValue::revise: return "revise";
    case VerdictValue::none: return "none";
  }
  return "?";
}

std::string_view step_done_name(StepDoneReason reason) {
  switch (reason) {
    case StepDoneReason::not_done: return "not_done";
    case StepDoneReason::success_path: return "success_path";
    case StepDoneReason::turn_limit: return "turn_limit";
    case StepDoneReason::error_limit: return "error_limit";
    case StepDoneReason::backend_error: return "backend_error";
  }
  return "?";
}

void Transcript::append(std::string sender, std::string content, int step, MessageKind kind) {
  ChatMessage msg;
  msg.index = static_cast<int>(messages.size());
  msg.sender = std::move(sender);
  msg.content = std::move(content);
  msg.step = step;
  msg.kind = kind;
  messages.push_back(std::move(msg));
}

std::string canonical_transcript(const Transcript& t) {
  std::string out;
  for (const ChatMessage& m : t.messages) {
    out += std::to_string(m.index);
    out += '\x1f';
    out += std::to_string(m.step);
    out += '\x1f';
    out += m.sender;
    out += '\x1f';
    out += message_kind_name(m.kind);
    out += '\x1f';
    out += m.content;
    out += '\x1e';
  }
  return out;
}

std::uint64_t transcript_hash(const Transcript& t) { return fnv1a64(canonical_transcript(t)); }

void write_transcript_jsonl(const Transcript& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write transcript: " + path.string());
  for (const ChatMessage& m : t.messages) {
    nlohmann::ordered_json rec;
    rec["index"] = m.index;
    rec["step"] = m.step;
    rec["sender"] = m.sender;
    rec["kind"] = message_kind_name(m.kind);
    rec["content"] = m.content;
    out << rec.dump() << '\n';
  }
}

Transcript read_transcript_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read transcript: " + path.string());
  Transcript t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line);
    ChatMessage m;
    m.index = rec.at("index").get<int>();
    m.step = rec.at("step").get<int>();
    m.sender = rec.at("sender").get<std::string>();
    m.kind = message_kind_from_name(rec.at("kind").get<std::string>());
    m.content = rec.at("content").get<std::string>();
    if (m.index != static_cast<int>(t.messages.size()))
      throw std::runtime_error("transcript indices not contiguous at " + std::to_string(m.index));
    t.messages.push_back(std::move(m));
  }
  return t;
}

VerdictValue detect_verdict(std::string_view message, const VerdictConfig& config) {
  const std::string text{message};
  auto approve_pos = text.find("[[VERDICT: approve]]");
  auto revise_pos = text.find("[[VERDICT: revise]]");
  if (approve_pos != std::string::npos || revise_pos != std::string::npos) {
    if (revise_pos == std::string::npos) return VerdictValue::approve;
    if (approve_pos == std::string::npos) return VerdictValue::revise;
    return approve_pos < revise_pos ? VerdictValue::approve : VerdictValue::revise;
  }
  const std::string lower = to_lower(text);
  for (const std::string& kw : config.revise_keywords)
    if (lower.find(to_lower(kw)) != std::string::npos) return VerdictValue::revise;
  for (const std::string& phrase : config.approve_phrases)
    if (lower.find(to_lower(phrase)) != std::string::npos) return VerdictValue::approve;
  return VerdictValue::none;
}

const AgentRole* SessionState::role_of_kind(RoleKind kind) const {
  for (const AgentRole& role : roles)
    if (role.kind == kind) return &role;
  return nullptr;
}

const AgentRole* SessionState::role_named(std::string_view name) const {
  for (const AgentRole& role : roles)
    if (role.name == name) return &role;
  return nullptr;
}

const ChatMessage* SessionState::last_message_of_step() const {
  for (auto it = transcript.messages.rbegin(); it != transcript.messages.rend(); ++it)
    if (it->step == current_step) return &*it;
  return nullptr;
}

SpeakerDecision next_speaker(const SessionState& state) {
  if (state.roles.empty()) throw std::runtime_error("session has no roles");
  if (state.turn_count >= state.config.max_turns) return done(StepDoneReason::turn_limit);
  if (state.error_count >= state.config.max_errors) return done(StepDoneReason::error_limit);

  const AgentRole* engineer = state.role_of_kind(RoleKind::Engineer);
  const AgentRole* executor = state.role_of_kind(RoleKind::Executor);
  const AgentRole* planner = state.role_of_kind(RoleKind::Planner);
  const ChatMessage* last = state.last_message_of_step();

  // Step start: Planner opens if present, else Engineer.
  if (!last || last->kind == MessageKind::prompt)
    return pick(planner ? planner : engineer);

  if (last->kind == MessageKind::executor_feedback) {
    if (state.executor_status == ExecutorStatus::failed) return pick(engineer);
    if (const AgentRole* expert = first_open_expert(state)) return pick(expert);
    return done(StepDoneReason::success_path);
  }

  const AgentRole* sender = state.role_named(last->sender);
  if (!sender) return pick(engineer ? engineer : &state.roles.front());

  switch (sender->kind) {
    case RoleKind::Planner:
      return pick(engineer);
    case RoleKind::Engineer: {
      if (contains_code(last->content)) {
        if (executor) return pick(executor);
        if (const AgentRole* expert = first_open_expert(state)) return pick(expert);
        return pick(engineer);  // nobody to review or run; keep iterating
      }
      if (const AgentRole* expert = first_open_expert(state)) return pick(expert);
      return pick(engineer);
    }
    case RoleKind::Expert: {
      auto it = state.expert_verdicts.find(sender->name);
      VerdictValue v = it == state.expert_verdicts.end() ? VerdictValue::none : it->second;
      if (v == VerdictValue::revise) return pick(engineer);
      if (const AgentRole* expert = first_open_expert(state)) return pick(expert);
      if (state.executor_status == ExecutorStatus::succeeded || !executor)
        return done(StepDoneReason::success_path);
      return pick(engineer);
    }
    case RoleKind::Executor:
      // Executor messages always carry the executor_feedback kind.
      return pick(engineer);
  }
  return pick(engineer);
}

namespace {

// Latest code-bearing message from a code-generating role, across steps: a
// later step revises the code produced in earlier ones.
const ChatMessage* latest_code_message(const SessionState& state) {
  for (auto it = state.transcript.messages.rbegin(); it != state.transcript.messages.rend();
       ++it) {
    if (it->kind != MessageKind::agent) continue;
    const AgentRole* sender = state.role_named(it->sender);
    if (!sender || !sender->generates_code) continue;
    if (contains_code(it->content)) return &*it;
  }
  return nullptr;
}

}  // namespace

StepTrace run_step(SessionState& state, const std::string& step_prompt, Backend& backend,
                   const SandboxSetup* sandbox) {
  StepTrace trace;
  trace.step = state.current_step;
  state.turn_count = 0;
  state.error_count = 0;
  // A new prompt opens a fresh review round: prior verdicts and execution
  // status belong to the previous step's code discussion.
  state.expert_verdicts.clear();
  state.executor_status = ExecutorStatus::none;

  state.transcript.append("User", step_prompt, state.current_step, MessageKind::prompt);
  ++trace.messages_appended;

  BackendConfig backend_config;
  backend_config.model = state.config.model;
  backend_config.temperature = state.config.temperature;
  backend_config.footer_protocol = state.config.footer_protocol;

  for (;;) {
    SpeakerDecision decision = next_speaker(state);
    if (decision.done != StepDoneReason::not_done) {
      trace.reason = decision.done;
      break;
    }
    const AgentRole* role = state.role_named(decision.speaker);
    if (!role) throw std::runtime_error("speaker not in session: " + decision.speaker);

    if (role->kind == RoleKind::Executor) {
      const ChatMessage* code_msg = latest_code_message(state);
      std::vector<CodeBlock> blocks =
          code_msg ? extract_code_blocks(code_msg->content, code_msg->index)
                   : std::vector<CodeBlock>{};
      ExecutionResult result;
      ExecLimits limits = sandbox ? sandbox->limits : ExecLimits{};
      if (!sandbox) {
        result.exit_code = 1;
        result.output = "no sandbox configured for this session\n";
      } else {
        std::string stem = "step" + std::to_string(state.current_step) + "_v" +
                           std::to_string(state.latest_code_version);
        try {
          result = execute_blocks(blocks, sandbox->workspace, limits,
                                  sandbox->interpreter_cmd, stem);
        } catch (const SandboxEnvironmentError& e) {
          trace.environment_error = true;
          result.exit_code = 1;
          result.output = std::string(e.what()) + "\n";
        }
      }
      state.transcript.append(role->name, format_feedback(result, limits), state.current_step,
                              MessageKind::executor_feedback);
      ++trace.messages_appended;
      ++trace.executor_attempts;
      ++state.turn_count;
      for (auto& pf : result.produced_files) trace.produced_files.push_back(pf);
      trace.last_execution_ok = result.exit_code == 0;
      if (result.exit_code == 0) {
        state.executor_status = ExecutorStatus::succeeded;
        state.error_count = 0;
      } else {
        state.executor_status = ExecutorStatus::failed;
        ++state.error_count;
      }
      continue;
    }

    ChatRequest request = build_request(state, *role, backend_config);
    request.step = state.current_step;
    ChatResponse response;
    try {
      response = backend.complete(request);
    } catch (const BackendError&) {
      trace.reason = StepDoneReason::backend_error;
      break;
    }
    state.transcript.append(role->name, response.text, state.current_step, MessageKind::agent);
    ++trace.messages_appended;
    ++state.turn_count;

    if (role->generates_code && contains_code(response.text)) {
      ++state.latest_code_version;
      state.executor_status = ExecutorStatus::none;
      state.expert_verdicts.clear();
    }
    if (role->kind == RoleKind::Expert)
      state.expert_verdicts[role->name] =
          detect_verdict(response.text, state.config.verdicts);
  }

  trace.executor_succeeded = state.executor_status == ExecutorStatus::succeeded;
  for (const auto& [name, verdict] : state.expert_verdicts)
    if (verdict == VerdictValue::approve) trace.expert_approved = true;
  return trace;
}

}  // namespace femagents
