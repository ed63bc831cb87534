#include <atomic>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "femagents/backend.hpp"
#include "femagents/hash.hpp"
#include "httplib.h"
#include "json.hpp"
#include "temp_dir.hpp"

using namespace femagents;

namespace {

SessionState tiny_session() {
  SessionState state;
  state.roles = {lookup_role("Eng"), lookup_role("Exp1")};
  state.transcript.append("User", "solve the plate", 1, MessageKind::prompt);
  state.transcript.append("Engineer", "```python\nprint(1)\n```", 1, MessageKind::agent);
  return state;
}

}  // namespace

TEST_SUITE("backend") {

TEST_CASE("build_request carries the profile, transcript and self marks") {
  SessionState state = tiny_session();
  BackendConfig config;
  ChatRequest request = build_request(state, state.roles[0], config);
  CHECK(request.system == state.roles[0].profile);
  REQUIRE(request.turns.size() == 2);
  CHECK(request.turns[0].speaker_label == "User");
  CHECK_FALSE(request.turns[0].self);
  CHECK(request.turns[1].speaker_label == "Engineer");
  CHECK(request.turns[1].self);
  CHECK(request.agent_name == "Engineer");
}

TEST_CASE("experts get the verdict footer suffix only under the protocol") {
  SessionState state = tiny_session();
  BackendConfig config;
  ChatRequest with = build_request(state, state.roles[1], config);
  CHECK(with.system.find("[[VERDICT: approve]]") != std::string::npos);

  config.footer_protocol = false;
  ChatRequest without = build_request(state, state.roles[1], config);
  CHECK(without.system == state.roles[1].profile);

  // Non-expert roles never get the suffix.
  config.footer_protocol = true;
  ChatRequest engineer = build_request(state, state.roles[0], config);
  CHECK(engineer.system.find("[[VERDICT") == std::string::npos);
}

TEST_CASE("fingerprints ignore routing metadata but see the content") {
  SessionState state = tiny_session();
  BackendConfig config;
  ChatRequest request = build_request(state, state.roles[0], config);
  std::uint64_t base = request_fingerprint(request);

  ChatRequest renamed = request;
  renamed.agent_name = "someone else";
  renamed.step = 4;
  CHECK(request_fingerprint(renamed) == base);

  ChatRequest warmer = request;
  warmer.temperature = 0.5;
  CHECK(request_fingerprint(warmer) != base);

  ChatRequest other_model = request;
  other_model.model = "gpt-4";
  CHECK(request_fingerprint(other_model) != base);

  ChatRequest edited = request;
  edited.turns[1].text += "!";
  CHECK(request_fingerprint(edited) != base);

  ChatRequest flipped = request;
  flipped.turns[1].self = false;
  CHECK(request_fingerprint(flipped) != base);
}

TEST_CASE("scripted backend pops per-agent queues in order") {
  ScriptedBackend backend;
  backend.push("Engineer", "first");
  backend.push("Engineer", "second");
  backend.push("Expert1", "review");
  ChatRequest request;
  request.agent_name = "Engineer";
  CHECK(backend.complete(request).text == "first");
  CHECK(backend.complete(request).text == "second");
  try {
    backend.complete(request);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::backend_error);
  }
  request.agent_name = "Expert1";
  CHECK(backend.complete(request).text == "review");
}

TEST_CASE("scripted backend loads fixture files") {
  femagents::testing::TempDir dir;
  auto path = dir.path / "fixture.json";
  {
    std::ofstream out(path);
    out << R"({"queues": {"Engineer": ["alpha", "beta"], "Planner": ["plan"]}})";
  }
  ScriptedBackend backend = ScriptedBackend::from_json_file(path);
  ChatRequest request;
  request.agent_name = "Planner";
  CHECK(backend.complete(request).text == "plan");
  request.agent_name = "Engineer";
  CHECK(backend.complete(request).text == "alpha");
  CHECK(backend.complete(request).text == "beta");
  CHECK_THROWS_AS(ScriptedBackend::from_json_file(dir.path / "nope.json"), BackendError);
}

TEST_CASE("stochastic backend is deterministic per seed") {
  auto transcript_of = [](std::uint64_t seed) {
    StochasticBackend backend(seed, {});
    std::string all;
    for (int step = 1; step <= 4; ++step) {
      for (const char* agent : {"Planner", "Engineer", "Expert1"}) {
        ChatRequest request;
        request.agent_name = agent;
        request.step = step;
        all += backend.complete(request).text;
        all += '\x1e';
      }
    }
    return all;
  };
  CHECK(transcript_of(42) == transcript_of(42));
  CHECK(transcript_of(42) != transcript_of(43));
}

TEST_CASE("stochastic extremes always or never emit code") {
  StochasticScript always;
  always.step_success_prob = 1.0;
  StochasticBackend lucky(1, always);
  StochasticScript never;
  never.step_success_prob = 0.0;
  StochasticBackend unlucky(1, never);
  for (int step = 1; step <= 4; ++step) {
    ChatRequest request;
    request.agent_name = "Engineer";
    request.step = step;
    CHECK(lucky.complete(request).text.find("```python") != std::string::npos);
    CHECK(unlucky.complete(request).text.find("```") == std::string::npos);
    request.agent_name = "Expert1";
    CHECK(lucky.complete(request).text.find("[[VERDICT: approve]]") != std::string::npos);
    CHECK(unlucky.complete(request).text.find("[[VERDICT: revise]]") != std::string::npos);
  }
}

TEST_CASE("record then replay serves identical responses; misses are typed") {
  femagents::testing::TempDir dir;
  SessionState state = tiny_session();
  BackendConfig config;
  ChatRequest request = build_request(state, state.roles[0], config);

  {
    auto inner = std::make_unique<ScriptedBackend>();
    inner->push("Engineer", "recorded answer");
    RecordBackend recorder(std::move(inner), dir.path);
    CHECK(recorder.complete(request).text == "recorded answer");
  }

  ReplayBackend replayer(dir.path);
  CHECK(replayer.complete(request).text == "recorded answer");

  ChatRequest unseen = request;
  unseen.turns[0].text = "a different prompt";
  try {
    replayer.complete(unseen);
    FAIL("expected replay mismatch");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::replay_mismatch);
  }
}

TEST_CASE("http backend speaks the chat completions protocol and retries") {
  httplib::Server server;
  std::atomic<int> hits{0};
  nlohmann::json seen_body;
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req,
                                          httplib::Response& res) {
    int hit = ++hits;
    if (hit == 1) {  // first attempt gets a retryable failure
      res.status = 500;
      res.set_content("busy", "text/plain");
      return;
    }
    seen_body = nlohmann::json::parse(req.body);
    seen_auth = req.get_header_value("Authorization");
    nlohmann::json reply = {
        {"choices", {{{"message", {{"role", "assistant"}, {"content", "from server"}}}}}},
        {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}},
    };
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RetryPolicy retry;
  retry.base_delay_s = 0.01;
  HttpBackend backend("http://127.0.0.1:" + std::to_string(port), "test-key", retry);

  SessionState state = tiny_session();
  BackendConfig config;
  ChatRequest request = build_request(state, state.roles[1], config);
  request.model = "gpt-3.5-turbo";
  ChatResponse response = backend.complete(request);

  CHECK(response.text == "from server");
  CHECK(response.usage.prompt_tokens == 12);
  CHECK(response.usage.completion_tokens == 3);
  CHECK(hits == 2);
  CHECK(seen_auth == "Bearer test-key");
  CHECK(seen_body.at("model") == "gpt-3.5-turbo");
  // system + prompt-as-user + engineer-as-user (the expert is the caller).
  REQUIRE(seen_body.at("messages").size() == 3);
  CHECK(seen_body["messages"][0]["role"] == "system");
  CHECK(seen_body["messages"][1]["role"] == "user");
  CHECK(seen_body["messages"][1]["content"] == "User: solve the plate");
  CHECK(seen_body["messages"][2]["role"] == "user");

  server.stop();
  server_thread.join();
}

TEST_CASE("http backend raises a typed error on a non-retryable status") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.status = 404;
    res.set_content("no such model", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RetryPolicy retry;
  retry.base_delay_s = 0.01;
  HttpBackend backend("http://127.0.0.1:" + std::to_string(port), "", retry);
  ChatRequest request;
  request.model = "gpt-3.5-turbo";
  CHECK_THROWS_AS(backend.complete(request), BackendError);

  server.stop();
  server_thread.join();
}

TEST_CASE("make_backend dispatches on backend.kind") {
  Config scripted = Config::from_string("backend.kind = scripted\n");
  CHECK(make_backend(scripted, 1)->id() == "stochastic");

  Config fixture = Config::from_string(
      "backend.kind = scripted\nbackend.fixture = " FEMAGENTS_FIXTURE_DIR
      "/conversation8.json\n");
  CHECK(make_backend(fixture, 1)->id() == "scripted");

  femagents::testing::TempDir dir;
  Config replay =
      Config::from_string("backend.kind = replay\nbackend.store = " + dir.path.string() + "\n");
  CHECK(make_backend(replay, 1)->id() == "replay");

  Config bogus = Config::from_string("backend.kind = teapot\n");
  CHECK_THROWS_AS(make_backend(bogus, 1), ConfigError);
}

}  // TEST_SUITE
