#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "femagents/chat.hpp"
#include "femagents/config.hpp"
#include "femagents/roles.hpp"

namespace femagents {

struct ChatTurn {
  std::string speaker_label;
  std::string text;
  bool self = false;  // authored by the requesting agent
};

struct ChatRequest {
  std::string model;
  std::string system;  // agent profile verbatim as prefix
  std::vector<ChatTurn> turns;
  double temperature = 1.0;
  int max_tokens = 0;  // 0 = provider default
  // Routing metadata for offline backends; excluded from the fingerprint.
  std::string agent_name;
  int step = 1;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  Usage usage;
  double latency_s = 0.0;
};

class BackendError : public std::runtime_error {
 public:
  enum class Kind { backend_error, replay_mismatch };
  BackendError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string id() const = 0;
};

struct BackendConfig {
  std::string model = "gpt-3.5-turbo";
  double temperature = 1.0;
  bool footer_protocol = true;
};

// Sentence appended to Expert system prompts when the footer protocol is on.
extern const char* kVerdictFooterSuffix;

// System prompt = agent profile (+ verdict suffix for experts); turns = the
// full transcript in order, the agent's own prior messages marked self.
ChatRequest build_request(const SessionState& state, const AgentRole& agent,
                          const BackendConfig& config);

// Hash of (system, turns, model, temperature); timestamps and routing
// metadata excluded so record/replay is stable.
std::uint64_t request_fingerprint(const ChatRequest& request);

// Deterministic per-agent response queues.
class ScriptedBackend : public Backend {
 public:
  ScriptedBackend() = default;
  void push(const std::string& agent_name, std::string response);
  static ScriptedBackend from_json_file(const std::filesystem::path& path);

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return "scripted"; }

 private:
  std::map<std::string, std::deque<std::string>> queues_;
};

struct StochasticScript {
  double step_success_prob = 0.8;
  double planner_fenics_prob = 1.0;
  bool emit_artifacts = true;  // successful code writes the expected image
};

// Seeded stochastic program standing in for a live model: each step is drawn
// success or failure once; the Engineer then emits working or no code, and
// experts approve or ask for revision accordingly. Same seed, same emissions.
class StochasticBackend : public Backend {
 public:
  StochasticBackend(std::uint64_t seed, StochasticScript script);

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return "stochastic"; }

 private:
  bool step_success(int step);
  std::mt19937_64 rng_;
  StochasticScript script_;
  std::map<int, bool> step_draws_;
  std::map<int, bool> planner_draws_;
};

// Replays recorded responses by request fingerprint from a directory of
// `<fingerprint>.json` files.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(std::filesystem::path store_dir);
  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return "replay"; }

 private:
  std::filesystem::path store_;
};

// Passes through to an inner backend and records (fingerprint -> response).
class RecordBackend : public Backend {
 public:
  RecordBackend(std::unique_ptr<Backend> inner, std::filesystem::path store_dir);
  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return "record(" + inner_->id() + ")"; }

 private:
  std::unique_ptr<Backend> inner_;
  std::filesystem::path store_;
};

struct RetryPolicy {
  double base_delay_s = 1.0;
  double factor = 2.0;
  int max_attempts = 5;
};

// OpenAI-compatible chat completions over HTTP. Retries 429/5xx and
// connection errors with exponential backoff, then raises backend_error.
class HttpBackend : public Backend {
 public:
  HttpBackend(std::string base_url, std::string api_key, RetryPolicy retry = {});
  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return "http:" + base_url_; }

 private:
  std::string base_url_;
  std::string api_key_;
  RetryPolicy retry_;
};

// Builds a backend from config keys (backend.kind, backend.base_url, ...).
// `seed` seeds stochastic backends; the API key comes from FEMAGENTS_API_KEY.
std::unique_ptr<Backend> make_backend(const Config& config, std::uint64_t seed);

}  // namespace femagents
