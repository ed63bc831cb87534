#include "femagents/backend.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "femagents/hash.hpp"
#include "httplib.h"
#include "json.hpp"

namespace femagents {
namespace fs = std::filesystem;

const char* kVerdictFooterSuffix =
    "\nEnd every review with a final line containing exactly [[VERDICT: approve]] if the "
    "latest code needs no changes, or [[VERDICT: revise]] if it does.";

ChatRequest build_request(const SessionState& state, const AgentRole& agent,
                          const BackendConfig& config) {
  ChatRequest request;
  request.model = config.model;
  request.temperature = config.temperature;
  request.agent_name = agent.name;
  request.system = agent.profile;
  if (agent.kind == RoleKind::Expert && config.footer_protocol)
    request.system += kVerdictFooterSuffix;
  for (const ChatMessage& msg : state.transcript.messages) {
    ChatTurn turn;
    turn.speaker_label = msg.sender;
    turn.text = msg.content;
    turn.self = msg.sender == agent.name;
    request.turns.push_back(std::move(turn));
  }
  return request;
}

std::uint64_t request_fingerprint(const ChatRequest& request) {
  char temp[64];
  std::snprintf(temp, sizeof temp, "%.17g", request.temperature);
  std::uint64_t h = fnv1a64(request.system);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(request.model, h);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(temp, h);
  for (const ChatTurn& turn : request.turns) {
    h = fnv1a64("\x1e", h);
    h = fnv1a64(turn.speaker_label, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(turn.text, h);
    h = fnv1a64(turn.self ? "\x1fself" : "\x1fother", h);
  }
  return h;
}

void ScriptedBackend::push(const std::string& agent_name, std::string response) {
  queues_[agent_name].push_back(std::move(response));
}

ScriptedBackend ScriptedBackend::from_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw BackendError(BackendError::Kind::backend_error,
                              "cannot open fixture: " + path.string());
  auto doc = nlohmann::json::parse(in);
  ScriptedBackend backend;
  for (auto& [name, queue] : doc.at("queues").items())
    for (auto& text : queue) backend.push(name, text.get<std::string>());
  return backend;
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  auto it = queues_.find(request.agent_name);
  if (it == queues_.end() || it->second.empty())
    throw BackendError(BackendError::Kind::backend_error,
                       "scripted queue exhausted for agent: " + request.agent_name);
  ChatResponse response;
  response.text = std::move(it->second.front());
  it->second.pop_front();
  return response;
}

StochasticBackend::StochasticBackend(std::uint64_t seed, StochasticScript script)
    : rng_(seed), script_(script) {}

bool StochasticBackend::step_success(int step) {
  auto it = step_draws_.find(step);
  if (it != step_draws_.end()) return it->second;
  bool ok = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < script_.step_success_prob;
  step_draws_[step] = ok;
  return ok;
}

ChatResponse StochasticBackend::complete(const ChatRequest& request) {
  const AgentRole* role = find_role("Eng");  // fallback
  for (const AgentRole& r : builtin_roles())
    if (r.name == request.agent_name) role = &r;

  ChatResponse response;
  switch (role->kind) {
    case RoleKind::Planner: {
      auto it = planner_draws_.find(request.step);
      bool fenics;
      if (it != planner_draws_.end()) {
        fenics = it->second;
      } else {
        fenics = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) <
                 script_.planner_fenics_prob;
        planner_draws_[request.step] = fenics;
      }
      response.text = fenics
                          ? "I will use FEniCS for the Python code. Please generate the code "
                            "in FEniCS format."
                          : "I will use the Finite Element Analysis software Abaqus to "
                            "generate the Python code.";
      break;
    }
    case RoleKind::Engineer: {
      if (step_success(request.step)) {
        std::string artifact = std::to_string(request.step) + ".png";
        response.text = "Here is the code.\n```python\n";
        if (script_.emit_artifacts)
          response.text += "with open(\"" + artifact +
                           "\", \"wb\") as f:\n    f.write(b\"synthetic-image-bytes\" * 16)\n";
        response.text += "print(\"ok\")\n```\n";
      } else {
        response.text = "I am unable to produce a working script for this step yet.";
      }
      break;
    }
    case RoleKind::Expert: {
      response.text = step_success(request.step)
                          ? "The code looks good.\n[[VERDICT: approve]]"
                          : "There is an issue with the current approach.\n[[VERDICT: revise]]";
      break;
    }
    case RoleKind::Executor:
      response.text = "";  // executor turns never reach the backend
      break;
  }
  return response;
}

ReplayBackend::ReplayBackend(fs::path store_dir) : store_(std::move(store_dir)) {}

ChatResponse ReplayBackend::complete(const ChatRequest& request) {
  fs::path file = store_ / (hex64(request_fingerprint(request)) + ".json");
  std::ifstream in(file);
  if (!in)
    throw BackendError(BackendError::Kind::replay_mismatch,
                       "no recorded response for fingerprint " +
                           hex64(request_fingerprint(request)));
  auto doc = nlohmann::json::parse(in);
  ChatResponse response;
  response.text = doc.at("text").get<std::string>();
  if (doc.contains("usage")) {
    response.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
    response.usage.completion_tokens = doc["usage"].value("completion_tokens", 0);
  }
  return response;
}

RecordBackend::RecordBackend(std::unique_ptr<Backend> inner, fs::path store_dir)
    : inner_(std::move(inner)), store_(std::move(store_dir)) {
  fs::create_directories(store_);
}

ChatResponse RecordBackend::complete(const ChatRequest& request) {
  ChatResponse response = inner_->complete(request);
  nlohmann::ordered_json doc;
  doc["text"] = response.text;
  doc["usage"] = {{"prompt_tokens", response.usage.prompt_tokens},
                  {"completion_tokens", response.usage.completion_tokens}};
  fs::path file = store_ / (hex64(request_fingerprint(request)) + ".json");
  std::ofstream out(file, std::ios::binary);
  if (!out)
    throw BackendError(BackendError::Kind::backend_error,
                       "cannot write replay store file: " + file.string());
  out << doc.dump(2) << '\n';
  return response;
}

HttpBackend::HttpBackend(std::string base_url, std::string api_key, RetryPolicy retry)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)), retry_(retry) {}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
  // Split "scheme://host[:port][/prefix]" into client target and path prefix.
  std::string host = base_url_;
  std::string prefix;
  auto scheme_end = base_url_.find("://");
  auto path_start =
      base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start != std::string::npos) {
    host = base_url_.substr(0, path_start);
    prefix = base_url_.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  }

  nlohmann::ordered_json body;
  body["model"] = request.model;
  auto& messages = body["messages"] = nlohmann::json::array();
  messages.push_back({{"role", "system"}, {"content", request.system}});
  for (const ChatTurn& turn : request.turns) {
    if (turn.self)
      messages.push_back({{"role", "assistant"}, {"content", turn.text}});
    else
      messages.push_back(
          {{"role", "user"}, {"content", turn.speaker_label + ": " + turn.text}});
  }
  body["temperature"] = request.temperature;
  if (request.max_tokens > 0) body["max_tokens"] = request.max_tokens;
  const std::string payload = body.dump();

  httplib::Client client(host);
  client.set_read_timeout(120, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error = "no attempt made";
  double delay = retry_.base_delay_s;
  for (int attempt = 0; attempt < retry_.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
      delay *= retry_.factor;
    }
    auto start = std::chrono::steady_clock::now();
    auto res = client.Post(prefix + "/v1/chat/completions", headers, payload,
                           "application/json");
    if (!res) {
      last_error = "connection error";
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendError(BackendError::Kind::backend_error,
                         "HTTP " + std::to_string(res->status) + ": " + res->body);
    auto doc = nlohmann::json::parse(res->body);
    ChatResponse response;
    response.text =
        doc.at("choices").at(0).at("message").at("content").get<std::string>();
    if (doc.contains("usage")) {
      response.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
      response.usage.completion_tokens = doc["usage"].value("completion_tokens", 0);
    }
    response.latency_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return response;
  }
  throw BackendError(BackendError::Kind::backend_error,
                     "chat completion failed after " + std::to_string(retry_.max_attempts) +
                         " attempts: " + last_error);
}

std::unique_ptr<Backend> make_backend(const Config& config, std::uint64_t seed) {
  const std::string kind = config.get_string("backend.kind", "scripted");
  if (kind == "scripted") {
    if (config.has("backend.fixture"))
      return std::make_unique<ScriptedBackend>(
          ScriptedBackend::from_json_file(config.get_string("backend.fixture")));
    StochasticScript script;
    script.step_success_prob = config.get_double("backend.success_prob", 0.8);
    script.planner_fenics_prob = config.get_double("backend.planner_fenics_prob", 1.0);
    script.emit_artifacts = config.get_bool("backend.emit_artifacts", true);
    return std::make_unique<StochasticBackend>(seed, script);
  }
  if (kind == "replay") return std::make_unique<ReplayBackend>(config.get_string("backend.store"));
  if (kind == "record") {
    Config inner_config = config;
    inner_config.set("backend.kind", config.get_string("backend.inner", "http"));
    return std::make_unique<RecordBackend>(make_backend(inner_config, seed),
                                           config.get_string("backend.store"));
  }
  if (kind == "http") {
    const char* key = std::getenv("FEMAGENTS_API_KEY");
    RetryPolicy retry;
    retry.base_delay_s = config.get_double("backend.retry_base_s", retry.base_delay_s);
    return std::make_unique<HttpBackend>(
        config.get_string("backend.base_url", "https://api.openai.com"), key ? key : "",
        retry);
  }
  throw ConfigError("unknown backend.kind: " + kind);
}

}  // namespace femagents
