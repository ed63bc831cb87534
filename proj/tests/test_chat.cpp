#include <fstream>

#include "doctest.h"
#include "femagents/backend.hpp"
#include "femagents/chat.hpp"
#include "femagents/hash.hpp"
#include "temp_dir.hpp"

using namespace femagents;

namespace {

SessionState make_state(std::initializer_list<const char*> abbreviations) {
  SessionState state;
  for (const char* abbrev : abbreviations) state.roles.push_back(lookup_role(abbrev));
  return state;
}

}  // namespace

TEST_SUITE("chat") {

TEST_CASE("append assigns contiguous indices") {
  Transcript t;
  t.append("User", "prompt", 1, MessageKind::prompt);
  t.append("Engineer", "reply", 1, MessageKind::agent);
  REQUIRE(t.messages.size() == 2);
  CHECK(t.messages[0].index == 0);
  CHECK(t.messages[1].index == 1);
}

TEST_CASE("empty transcript hashes to the FNV-1a offset basis") {
  CHECK(transcript_hash(Transcript{}) == 14695981039346656037ULL);
}

TEST_CASE("transcript hash covers messages but not metadata") {
  Transcript a;
  a.append("User", "hello", 1, MessageKind::prompt);
  Transcript b = a;
  b.metadata.combination = "Eng+Exe";
  b.metadata.started_at = "2024-01-01T00:00:00Z";
  CHECK(transcript_hash(a) == transcript_hash(b));

  Transcript c = a;
  c.messages[0].content = "hello!";
  CHECK(transcript_hash(a) != transcript_hash(c));
}

TEST_CASE("jsonl persistence round trips") {
  femagents::testing::TempDir dir;
  Transcript t;
  t.append("User", "line one\nline two", 1, MessageKind::prompt);
  t.append("Engineer", "```python\nprint(1)\n```", 1, MessageKind::agent);
  t.append("Executor", "exitcode: 0 (execution succeeded)\nCode output:\n", 1,
           MessageKind::executor_feedback);
  auto path = dir.path / "transcript.jsonl";
  write_transcript_jsonl(t, path);
  Transcript back = read_transcript_jsonl(path);
  CHECK(back.messages == t.messages);
  CHECK(transcript_hash(back) == transcript_hash(t));
}

TEST_CASE("non-contiguous indices are rejected on read") {
  femagents::testing::TempDir dir;
  auto path = dir.path / "broken.jsonl";
  {
    std::ofstream out(path);
    out << R"({"index":0,"step":1,"sender":"User","kind":"prompt","content":"a"})" << "\n";
    out << R"({"index":2,"step":1,"sender":"Engineer","kind":"agent","content":"b"})" << "\n";
  }
  CHECK_THROWS(read_transcript_jsonl(path));
}

TEST_CASE("verdict footers win over keywords") {
  CHECK(detect_verdict("There is an error here.\n[[VERDICT: approve]]") ==
        VerdictValue::approve);
  CHECK(detect_verdict("Looks good overall.\n[[VERDICT: revise]]") == VerdictValue::revise);
  CHECK(detect_verdict("[[VERDICT: approve]] then [[VERDICT: revise]]") ==
        VerdictValue::approve);
  CHECK(detect_verdict("[[VERDICT: revise]] then [[VERDICT: approve]]") ==
        VerdictValue::revise);
}

TEST_CASE("keyword heuristic matches review phrasing from real transcripts") {
  CHECK(detect_verdict("The code looks mostly correct, but there are a few potential errors "
                       "and suggestions for improvement") == VerdictValue::revise);
  CHECK(detect_verdict("The code looks good now.") == VerdictValue::approve);
  CHECK(detect_verdict("The code you provided seems well-structured and follows the FEniCS "
                       "format.") == VerdictValue::approve);
  CHECK(detect_verdict("Thank you! If there are any more tasks or questions in the future, "
                       "I'll be here to help. Have a great day!") == VerdictValue::none);
  CHECK(detect_verdict("THE CODE LOOKS GOOD") == VerdictValue::approve);
  CHECK(detect_verdict("you SHOULD add boundary conditions") == VerdictValue::revise);
}

TEST_CASE("step start goes to the planner when present, else the engineer") {
  auto with_planner = make_state({"Plan", "Eng", "Exe", "Exp"});
  with_planner.transcript.append("User", "step prompt", 1, MessageKind::prompt);
  CHECK(next_speaker(with_planner).speaker == "Planner");

  auto without_planner = make_state({"Eng", "Exe"});
  without_planner.transcript.append("User", "step prompt", 1, MessageKind::prompt);
  CHECK(next_speaker(without_planner).speaker == "Engineer");
}

TEST_CASE("failed executor feedback routes back to the engineer") {
  auto state = make_state({"Eng", "Exe"});
  state.transcript.append("User", "step prompt", 1, MessageKind::prompt);
  state.transcript.append("Engineer", "```python\nbad()\n```", 1, MessageKind::agent);
  state.transcript.append("Executor", "exitcode: 1 (execution failed)\nCode output:\n", 1,
                          MessageKind::executor_feedback);
  state.executor_status = ExecutorStatus::failed;
  state.error_count = 1;
  CHECK(next_speaker(state).speaker == "Engineer");
}

TEST_CASE("engineer code goes to the executor, then experts, then done") {
  auto state = make_state({"Eng", "Exe", "Exp1", "Exp2"});
  state.transcript.append("User", "step prompt", 1, MessageKind::prompt);
  state.transcript.append("Engineer", "```python\nprint(1)\n```", 1, MessageKind::agent);
  CHECK(next_speaker(state).speaker == "Executor");

  state.transcript.append("Executor", "exitcode: 0 (execution succeeded)\nCode output:\n", 1,
                          MessageKind::executor_feedback);
  state.executor_status = ExecutorStatus::succeeded;
  CHECK(next_speaker(state).speaker == "Expert1");

  state.transcript.append("Expert1", "The code looks good.", 1, MessageKind::agent);
  state.expert_verdicts["Expert1"] = VerdictValue::approve;
  CHECK(next_speaker(state).speaker == "Expert2");

  state.transcript.append("Expert2", "The code looks good.", 1, MessageKind::agent);
  state.expert_verdicts["Expert2"] = VerdictValue::approve;
  CHECK(next_speaker(state).done == StepDoneReason::success_path);
}

TEST_CASE("a revise verdict routes back to the engineer") {
  auto state = make_state({"Eng", "Exp1"});
  state.transcript.append("User", "step prompt", 1, MessageKind::prompt);
  state.transcript.append("Engineer", "```python\nx\n```", 1, MessageKind::agent);
  CHECK(next_speaker(state).speaker == "Expert1");
  state.transcript.append("Expert1", "There is an error.", 1, MessageKind::agent);
  state.expert_verdicts["Expert1"] = VerdictValue::revise;
  CHECK(next_speaker(state).speaker == "Engineer");
}

TEST_CASE("turn and error limits terminate a step") {
  auto state = make_state({"Eng", "Exe"});
  state.transcript.append("User", "step prompt", 1, MessageKind::prompt);
  state.turn_count = state.config.max_turns;
  CHECK(next_speaker(state).done == StepDoneReason::turn_limit);

  state.turn_count = 0;
  state.error_count = state.config.max_errors;
  CHECK(next_speaker(state).done == StepDoneReason::error_limit);
}

TEST_CASE("run_step drives a full success path with a real sandbox") {
  femagents::testing::TempDir dir;
  auto state = make_state({"Eng", "Exe", "Exp1"});
  ScriptedBackend backend;
  backend.push("Engineer",
               "Here you go.\n```python\nwith open(\"1.png\", \"wb\") as f:\n"
               "    f.write(b\"png\")\nprint(\"ok\")\n```\n");
  backend.push("Expert1", "The code looks good.\n[[VERDICT: approve]]");

  SandboxSetup sandbox;
  sandbox.workspace = dir.path;
  StepTrace trace = run_step(state, "solve the plate problem", backend, &sandbox);

  CHECK(trace.reason == StepDoneReason::success_path);
  CHECK(trace.executor_attempts == 1);
  CHECK(trace.executor_succeeded);
  CHECK(trace.last_execution_ok);
  CHECK(trace.expert_approved);
  REQUIRE(trace.produced_files.size() == 1);
  CHECK(trace.produced_files[0].first == "1.png");
  // User prompt, Engineer, Executor feedback, Expert1.
  CHECK(state.transcript.messages.size() == 4);
  CHECK(state.transcript.messages[2].kind == MessageKind::executor_feedback);
  CHECK(state.transcript.messages[2].content.rfind("exitcode: 0 (execution succeeded)", 0) ==
        0);
}

TEST_CASE("run_step hits the turn limit when the engineer never produces code") {
  auto state = make_state({"Eng"});
  state.config.max_turns = 5;
  ScriptedBackend backend;
  for (int i = 0; i < 5; ++i) backend.push("Engineer", "I cannot write this yet.");
  StepTrace trace = run_step(state, "step prompt", backend, nullptr);
  CHECK(trace.reason == StepDoneReason::turn_limit);
  CHECK(trace.executor_attempts == 0);
}

TEST_CASE("an exhausted backend terminates the step as backend_error") {
  auto state = make_state({"Eng", "Exp1"});
  ScriptedBackend backend;  // empty queues
  StepTrace trace = run_step(state, "step prompt", backend, nullptr);
  CHECK(trace.reason == StepDoneReason::backend_error);
}

TEST_CASE("a new step clears verdicts and executor status") {
  auto state = make_state({"Eng", "Exp1"});
  ScriptedBackend backend;
  backend.push("Engineer", "```python\nx = 1\n```");
  backend.push("Expert1", "The code looks good.");
  backend.push("Engineer", "No code this time.");
  backend.push("Expert1", "The code looks good.");

  state.current_step = 1;
  StepTrace first = run_step(state, "step one", backend, nullptr);
  CHECK(first.reason == StepDoneReason::success_path);
  REQUIRE(state.expert_verdicts.count("Expert1"));

  // Without the reset, Expert1's stale verdict would starve step 2 of its
  // reviewer and loop the engineer into the turn limit.
  state.current_step = 2;
  StepTrace second = run_step(state, "step two", backend, nullptr);
  CHECK(second.reason == StepDoneReason::success_path);
  CHECK(state.transcript.messages.back().sender == "Expert1");
}

TEST_CASE("a missing interpreter becomes synthetic failure feedback") {
  femagents::testing::TempDir dir;
  auto state = make_state({"Eng", "Exe"});
  state.config.max_errors = 1;
  ScriptedBackend backend;
  backend.push("Engineer", "```python\nprint(1)\n```");

  SandboxSetup sandbox;
  sandbox.workspace = dir.path;
  sandbox.interpreter_cmd = "definitely-not-an-interpreter-7f3a";
  StepTrace trace = run_step(state, "step prompt", backend, &sandbox);
  CHECK(trace.environment_error);
  CHECK(trace.reason == StepDoneReason::error_limit);
  CHECK(state.transcript.messages.back().kind == MessageKind::executor_feedback);
  CHECK(state.transcript.messages.back().content.rfind("exitcode: 1 (execution failed)", 0) ==
        0);
}

}  // TEST_SUITE
