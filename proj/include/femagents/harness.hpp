#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "femagents/backend.hpp"
#include "femagents/chat.hpp"
#include "femagents/config.hpp"
#include "femagents/fem.hpp"
#include "femagents/roles.hpp"

namespace femagents {

enum class Scenario { Displacement, ShearDisplacement, Hole, Stress, Complex };

std::string_view scenario_name(Scenario s);
Scenario scenario_for_step(int step);

enum class ClassificationLevel { L0, L1, L2 };

ClassificationLevel classification_level_from_name(std::string_view name);

enum class PlannerSoftware { fenics, abaqus, other, none };

std::string_view planner_software_name(PlannerSoftware s);
PlannerSoftware planner_software_from_name(std::string_view name);

// Layered per-step classification: code executed / expected artifact
// produced / field matches the oracle.
struct StepOutcome {
  int step = 1;
  bool l0_executed = false;
  bool l1_artifact = false;
  std::optional<bool> l2_verified;
  StepDoneReason termination = StepDoneReason::not_done;
  int executor_attempts = 0;
  std::string failure_reason;
};

struct TrialRecord {
  std::string combination;
  int trial_index = 0;
  std::string transcript_path;
  std::array<StepOutcome, 4> steps;
  PlannerSoftware planner_software = PlannerSoftware::none;
  double wall_time_s = 0.0;
  Usage tokens;
  bool environment_error = false;  // interpreter unavailable in some step
};

struct ExperimentConfig {
  std::vector<std::vector<std::string>> combinations;  // role abbreviations
  int n_runs = 40;
  std::string query = "q1";  // q1 | q2_planner
  ClassificationLevel level = ClassificationLevel::L1;
  double oracle_tolerance = 0.05;  // relative L2
  int oracle_n = 50;
  fem::Material material;
  std::uint64_t seed = 0;
  int parallelism = 1;
  bool abort_on_failure = false;
  SessionConfig session;
  std::string interpreter_cmd = "python3";
  ExecLimits limits;
  Config backend;  // backend.* keys, consumed by make_backend
};

// The twelve experiment rows; six role-pair studies, six overlap studies.
std::vector<std::vector<std::string>> default_combinations();

ExperimentConfig experiment_from_config(const Config& config);

// "Eng+Exe+Exp1" style label from abbreviation lists.
std::string combination_label(const std::vector<std::string>& abbreviations);

// The four step prompts for the configured query; at level L2 each step also
// asks for a raw field dump in the field file format.
std::vector<std::string> query_prompts(const ExperimentConfig& config);

// Per-trial seed, stable under reordering and parallel execution.
std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& combination,
                         int trial_index);

// Runs one four-step session in a fresh trial directory and classifies each
// step; never throws on backend or execution failures, they become data.
TrialRecord run_trial(const std::vector<std::string>& combo, const ExperimentConfig& config,
                      const std::filesystem::path& trial_dir, Backend& backend,
                      int trial_index);

// Scans Planner-authored messages for a named FEM tool; first match wins.
PlannerSoftware detect_software(const Transcript& transcript,
                                const std::vector<AgentRole>& roles);

struct RateSummary {
  std::string combination;
  std::string scenario;
  int n = 0;
  int successes = 0;
  double rate = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
  std::string software_filter = "all";
};

// Wilson score interval, clamped to [0, 1].
std::pair<double, double> wilson_interval(int successes, int n, double z = 1.96);

RateSummary rate_summary(int successes, int n, double z = 1.96);

// Groups by combination x scenario (steps map to Displacement,
// ShearDisplacement, Hole, Stress; Complex = step 3 and step 4 both
// succeeding). The optional filter keeps only trials whose Planner picked the
// given software.
std::vector<RateSummary> aggregate(const std::vector<TrialRecord>& records,
                                   ClassificationLevel level,
                                   std::optional<PlannerSoftware> software_filter = {});

bool step_success(const StepOutcome& outcome, ClassificationLevel level);

void write_trials_jsonl(const std::vector<TrialRecord>& records,
                        const std::filesystem::path& path);
std::vector<TrialRecord> read_trials_jsonl(const std::filesystem::path& path);

// Full matrix run: combinations x n_runs trials, up to `parallelism` at once,
// results merged by (combination, trial index). Persists per-trial outputs,
// trials.jsonl, results.csv and figures under out_dir.
std::vector<TrialRecord> run_matrix(const ExperimentConfig& config,
                                    const std::filesystem::path& out_dir);

}  // namespace femagents
