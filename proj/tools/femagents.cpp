#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "femagents/backend.hpp"
#include "femagents/chat.hpp"
#include "femagents/config.hpp"
#include "femagents/fem.hpp"
#include "femagents/harness.hpp"
#include "femagents/hash.hpp"
#include "femagents/report.hpp"

namespace fs = std::filesystem;
using namespace femagents;

namespace {

std::vector<std::string> split_csv(const std::string& list) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(list);
  while (std::getline(in, item, ',')) {
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_trial(const TrialRecord& record) {
  std::printf("combination: %s\n", record.combination.c_str());
  std::printf("planner_software: %s\n",
              std::string(planner_software_name(record.planner_software)).c_str());
  for (const StepOutcome& outcome : record.steps) {
    std::printf("step %d (%s): l0=%s l1=%s", outcome.step,
                std::string(scenario_name(scenario_for_step(outcome.step))).c_str(),
                outcome.l0_executed ? "yes" : "no", outcome.l1_artifact ? "yes" : "no");
    if (outcome.l2_verified)
      std::printf(" l2=%s", *outcome.l2_verified ? "yes" : "no");
    std::printf(" termination=%s attempts=%d",
                std::string(step_done_name(outcome.termination)).c_str(),
                outcome.executor_attempts);
    if (!outcome.failure_reason.empty())
      std::printf(" reason=%s", outcome.failure_reason.c_str());
    std::printf("\n");
  }
}

// Walks a recorded transcript and checks that the deterministic speaker
// policy reproduces every recorded speaker in order.
int replay_transcript(const fs::path& path) {
  Transcript recorded = read_transcript_jsonl(path);

  SessionState state;
  for (const ChatMessage& msg : recorded.messages) {
    if (msg.sender == "User") continue;
    if (!state.role_named(msg.sender)) {
      const AgentRole* role = nullptr;
      for (const AgentRole& builtin : builtin_roles())
        if (builtin.name == msg.sender) role = &builtin;
      if (!role) {
        std::fprintf(stderr, "unknown sender in transcript: %s\n", msg.sender.c_str());
        return 2;
      }
      state.roles.push_back(*role);
    }
  }

  int mismatches = 0;
  for (const ChatMessage& msg : recorded.messages) {
    state.current_step = msg.step;
    if (msg.kind != MessageKind::prompt) {
      SpeakerDecision decision = next_speaker(state);
      if (decision.done != StepDoneReason::not_done || decision.speaker != msg.sender) {
        ++mismatches;
        std::printf("turn %d: policy picks %s, transcript has %s\n", msg.index,
                    decision.done != StepDoneReason::not_done
                        ? ("step_done(" + std::string(step_done_name(decision.done)) + ")")
                              .c_str()
                        : decision.speaker.c_str(),
                    msg.sender.c_str());
      }
    }
    // Advance state exactly as run_step would.
    state.transcript.messages.push_back(msg);
    if (msg.kind == MessageKind::prompt) {
      state.turn_count = 0;
      state.error_count = 0;
      state.expert_verdicts.clear();
      state.executor_status = ExecutorStatus::none;
      continue;
    }
    ++state.turn_count;
    const AgentRole* role = state.role_named(msg.sender);
    if (msg.kind == MessageKind::executor_feedback) {
      bool ok = msg.content.rfind("exitcode: 0", 0) == 0;
      state.executor_status = ok ? ExecutorStatus::succeeded : ExecutorStatus::failed;
      if (ok)
        state.error_count = 0;
      else
        ++state.error_count;
      continue;
    }
    if (role && role->generates_code && !extract_code_blocks(msg.content).empty()) {
      ++state.latest_code_version;
      state.executor_status = ExecutorStatus::none;
      state.expert_verdicts.clear();
    }
    if (role && role->kind == RoleKind::Expert)
      state.expert_verdicts[role->name] = detect_verdict(msg.content);
  }

  std::printf("messages: %zu\n", recorded.messages.size());
  std::printf("transcript_hash: %s\n", hex64(transcript_hash(recorded)).c_str());
  std::printf("speaker policy: %s\n",
              mismatches == 0 ? "consistent" : (std::to_string(mismatches) + " mismatches").c_str());
  return mismatches == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Role-based agent group chat benchmark for FEM code generation"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "Run a single four-step conversation");
  std::string run_combo = "Eng,Exe,Exp1";
  std::string run_query = "q1";
  std::string run_out = "run_out";
  std::string run_config_path;
  run_cmd->add_option("--combo", run_combo, "Comma-separated role abbreviations");
  run_cmd->add_option("--query", run_query, "q1 or q2_planner");
  run_cmd->add_option("--out", run_out, "Output directory")->required();
  run_cmd->add_option("--config", run_config_path, "Config file");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Run the full combination matrix");
  std::string bench_config_path;
  std::string bench_out;
  bench_cmd->add_option("--config", bench_config_path, "Config file");
  bench_cmd->add_option("--out", bench_out, "Output directory")->required();

  // oracle
  auto* oracle_cmd = app.add_subcommand("oracle", "Reference FEM solver");
  auto* solve_cmd = oracle_cmd->add_subcommand("solve", "Solve a query step");
  int solve_step_number = 1;
  int solve_n = 50;
  std::string solve_out = "field.txt";
  std::string solve_quantity = "displacement";
  std::string solve_formulation = "plane_strain";
  bool solve_shear_y_only = false;
  solve_cmd->add_option("--step", solve_step_number, "Query step 1..4")->required();
  solve_cmd->add_option("--n", solve_n, "Cells per side");
  solve_cmd->add_option("--out", solve_out, "Output field file");
  solve_cmd->add_option("--quantity", solve_quantity, "displacement or stress");
  solve_cmd->add_option("--formulation", solve_formulation, "plane_strain or plane_stress");
  solve_cmd->add_flag("--shear-y-only", solve_shear_y_only,
                      "Constrain only uy on the right edge for shear steps");
  auto* compare_cmd = oracle_cmd->add_subcommand("compare", "Compare two field files");
  std::string compare_a, compare_b;
  int compare_probe = 21;
  compare_cmd->add_option("a", compare_a, "First field file")->required();
  compare_cmd->add_option("b", compare_b, "Reference field file")->required();
  compare_cmd->add_option("--probe", compare_probe, "Probe grid points per side");
  oracle_cmd->require_subcommand(1);

  // report
  auto* report_cmd = app.add_subcommand("report", "Aggregate persisted trials");
  std::string report_in;
  std::string report_filter;
  std::string report_level = "L1";
  report_cmd->add_option("--in", report_in, "Directory containing trials.jsonl")->required();
  report_cmd->add_option("--filter", report_filter, "Planner software filter (fenics|abaqus|other)");
  report_cmd->add_option("--level", report_level, "Classification level (L0|L1|L2)");

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "Check a recorded transcript");
  std::string replay_path;
  replay_cmd->add_option("--transcript", replay_path, "transcript.jsonl file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) {
      Config config = run_config_path.empty() ? Config{} : Config::from_file(run_config_path);
      config.set("query", run_query);
      config.set("combinations", run_combo);
      ExperimentConfig exp = experiment_from_config(config);
      auto combo = split_csv(run_combo);
      auto backend =
          make_backend(exp.backend, trial_seed(exp.seed, combination_label(combo), 0));
      TrialRecord record = run_trial(combo, exp, run_out, *backend, 0);
      print_trial(record);
      return 0;
    }
    if (*bench_cmd) {
      Config config =
          bench_config_path.empty() ? Config{} : Config::from_file(bench_config_path);
      ExperimentConfig exp = experiment_from_config(config);
      auto records = run_matrix(exp, bench_out);
      std::printf("ran %zu trials; results in %s\n", records.size(), bench_out.c_str());
      return 0;
    }
    if (*solve_cmd) {
      fem::Material mat;
      if (solve_formulation == "plane_stress")
        mat.formulation = fem::Formulation::plane_stress;
      else if (solve_formulation != "plane_strain")
        throw ConfigError("formulation must be plane_strain or plane_stress");
      fem::StepOptions opts;
      opts.shear_y_only = solve_shear_y_only;
      fem::StepSolution solution = fem::solve_step(solve_step_number, solve_n, mat, opts);
      if (solve_quantity == "stress") {
        if (!solution.stress)
          throw ConfigError("stress output is only produced by step 4");
        fem::write_field(fem::stress_as_field(solution.mesh, *solution.stress), solve_out);
      } else if (solve_quantity == "displacement") {
        fem::write_field(fem::displacement_as_field(solution.mesh, solution.displacement),
                         solve_out);
      } else {
        throw ConfigError("quantity must be displacement or stress");
      }
      std::printf("wrote %s (%d nodes, %d triangles)\n", solve_out.c_str(),
                  solution.mesh.node_count(), solution.mesh.triangle_count());
      return 0;
    }
    if (*compare_cmd) {
      double error = fem::compare_fields(fem::read_field(compare_a),
                                         fem::read_field(compare_b), compare_probe);
      std::printf("relative_l2_error: %.9g\n", error);
      return 0;
    }
    if (*report_cmd) {
      auto records = read_trials_jsonl(fs::path(report_in) / "trials.jsonl");
      std::optional<PlannerSoftware> filter;
      if (!report_filter.empty()) filter = planner_software_from_name(report_filter);
      auto summaries =
          aggregate(records, classification_level_from_name(report_level), filter);
      emit_report(summaries, report_in, report_filter.empty() ? "all" : report_filter);
      std::printf("wrote %s/results.csv (%zu rows)\n", report_in.c_str(), summaries.size());
      return 0;
    }
    if (*replay_cmd) return replay_transcript(replay_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
