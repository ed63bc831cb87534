#include "femagents/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "femagents/hash.hpp"
#include "femagents/report.hpp"
#include "json.hpp"

namespace femagents {
namespace fs = std::filesystem;

namespace {

const char* kQuery1Step1 =
    "A 2D plate occupies 1m-by-1m domain.\n"
    "It is assumed as linear elastic and has Young's modulus of 1GPa and Poisson ration "
    "of 0.3.\n"
    "There is a 0.1m displacement applied on the right edge.\n"
    "The left edge is fixed.\n"
    "The top and bottom edges are free to move.\n"
    "Check your formula online if you need to.\n"
    "Define your variables.\n"
    "Solve for the displacement using FEniCS with a mesh of 50x50, and plot the "
    "displacement result in a PNG file named 1.png";

const char* kQuery2Step1 =
    "A 2D plate occupies 1m-by-1m domain.\n"
    "It is assumed as linear elastic and has Young's modulus of 1GPa and Poisson ration "
    "of 0.3.\n"
    "There is a 0.1m displacement applied on the right edge.\n"
    "The left edge is fixed.\n"
    "Solve for the displacement by finite element software code with a mesh of 50x50, and "
    "plot the displacement result in a PNG file named 1.png.";

const char* kQueryStep2 =
    "Let's change the boundary condition on the right edge to a shear case.\n"
    "The displacement along y direction is 0.1m on the right edge.\n"
    "Define your variables.\n"
    "Please refine the mesh to 50-by-50 elements, solve the problem again and save result "
    "into another png file.";

const char* kQueryStep3 =
    "Let's add a circular hole of radius 0.2m in the middle of the original square "
    "domain.\n"
    "Define your variables.\n"
    "Please solve the shear problem and plot results.";

const char* kQueryStep4 =
    "Let's also calculate the stress component sigma_xy and save it into another png "
    "file.";

std::string field_dump_suffix(int step) {
  return "\nAlso save the raw solution field to a text file named field_step" +
         std::to_string(step) +
         ".txt: first line `femagents-field v1`, second line `<node_count> "
         "<component_count>`, then one `x y value...` row per node.";
}

bool is_image_file(const std::string& relpath) {
  auto dot = relpath.rfind('.');
  if (dot == std::string::npos) return false;
  std::string ext = relpath.substr(dot);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".svg";
}

// Reference solutions are pure functions of (step, n, formulation); cache
// them so L2 classification does not re-solve per trial.
const fem::StepSolution& oracle_solution(int step, int n, const fem::Material& mat) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>, fem::StepSolution> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto key = std::make_tuple(step, n, static_cast<int>(mat.formulation));
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, fem::solve_step(step, n, mat)).first;
  return it->second;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Displacement: return "Displacement";
    case Scenario::ShearDisplacement: return "ShearDisplacement";
    case Scenario::Hole: return "Hole";
    case Scenario::Stress: return "Stress";
    case Scenario::Complex: return "Complex";
  }
  return "?";
}

Scenario scenario_for_step(int step) {
  switch (step) {
    case 1: return Scenario::Displacement;
    case 2: return Scenario::ShearDisplacement;
    case 3: return Scenario::Hole;
    case 4: return Scenario::Stress;
    default: throw std::runtime_error("step must be in 1..4");
  }
}

ClassificationLevel classification_level_from_name(std::string_view name) {
  if (name == "L0" || name == "l0") return ClassificationLevel::L0;
  if (name == "L1" || name == "l1") return ClassificationLevel::L1;
  if (name == "L2" || name == "l2") return ClassificationLevel::L2;
  throw ConfigError("unknown classification level: " + std::string(name));
}

std::string_view planner_software_name(PlannerSoftware s) {
  switch (s) {
    case PlannerSoftware::fenics: return "fenics";
    case PlannerSoftware::abaqus: return "abaqus";
    case PlannerSoftware::other: return "other";
    case PlannerSoftware::none: return "none";
  }
  return "?";
}

PlannerSoftware planner_software_from_name(std::string_view name) {
  if (name == "fenics") return PlannerSoftware::fenics;
  if (name == "abaqus") return PlannerSoftware::abaqus;
  if (name == "other") return PlannerSoftware::other;
  if (name == "none") return PlannerSoftware::none;
  throw ConfigError("unknown planner software: " + std::string(name));
}

std::vector<std::vector<std::string>> default_combinations() {
  return {
      {"Eng", "Exp1"},
      {"Eng", "Exe"},
      {"Eng", "Exe", "Exp1"},
      {"Plan", "Eng", "Exe"},
      {"Plan", "Eng", "Exp"},
      {"Plan", "Eng", "Exe", "Exp"},
      {"Eng", "Exp1"},
      {"Eng", "Exp1", "Exp2"},
      {"Eng", "Exp1", "Exxp2"},
      {"Eng", "Exe", "Exp1"},
      {"Eng", "Exe", "Exp1", "Exp2"},
      {"Eng", "Exe", "Exp1", "Exxp2"},
  };
}

std::string combination_label(const std::vector<std::string>& abbreviations) {
  std::string label;
  for (const std::string& abbrev : abbreviations) {
    if (!label.empty()) label += '+';
    label += compact_abbreviation(lookup_role(abbrev).abbreviation);
  }
  return label;
}

ExperimentConfig experiment_from_config(const Config& config) {
  ExperimentConfig exp;
  if (config.has("combinations")) {
    exp.combinations.clear();
    std::istringstream in(config.get_string("combinations"));
    std::string group;
    while (std::getline(in, group, ';')) {
      std::vector<std::string> combo;
      std::istringstream gin(group);
      std::string abbrev;
      while (std::getline(gin, abbrev, ',')) {
        while (!abbrev.empty() && abbrev.front() == ' ') abbrev.erase(abbrev.begin());
        while (!abbrev.empty() && abbrev.back() == ' ') abbrev.pop_back();
        if (!abbrev.empty()) combo.push_back(abbrev);
      }
      if (!combo.empty()) exp.combinations.push_back(std::move(combo));
    }
  } else {
    exp.combinations = default_combinations();
  }
  for (const auto& combo : exp.combinations)
    for (const std::string& abbrev : combo) lookup_role(abbrev);  // throws if unknown

  exp.n_runs = config.get_int("n_runs", 40);
  if (exp.n_runs < 1) throw ConfigError("n_runs must be positive");
  exp.query = config.get_string("query", "q1");
  if (exp.query != "q1" && exp.query != "q2_planner")
    throw ConfigError("query must be q1 or q2_planner");
  if (exp.query == "q2_planner") {
    auto has_planner = [](const std::vector<std::string>& combo) {
      for (const std::string& abbrev : combo)
        if (lookup_role(abbrev).kind == RoleKind::Planner) return true;
      return false;
    };
    if (config.has("combinations")) {
      for (const auto& combo : exp.combinations)
        if (!has_planner(combo))
          throw ConfigError("q2_planner requires a Planner in every combination");
    } else {
      // The default matrix mixes planner and planner-less rows; the planner
      // query only addresses the former.
      std::erase_if(exp.combinations,
                    [&](const std::vector<std::string>& combo) { return !has_planner(combo); });
    }
  }
  exp.level = classification_level_from_name(config.get_string("level", "L1"));
  exp.oracle_tolerance = config.get_double("oracle_tolerance", 0.05);
  exp.oracle_n = config.get_int("oracle_n", 50);
  exp.seed = config.get_uint64("seed", 0);
  exp.parallelism = config.get_int("parallelism", 1);
  if (exp.parallelism < 1) throw ConfigError("parallelism must be positive");
  exp.abort_on_failure = config.get_bool("abort_on_failure", false);

  exp.session.max_turns = config.get_int("session.max_turns", 30);
  exp.session.max_errors = config.get_int("session.max_errors", 6);
  exp.session.footer_protocol = config.get_bool("session.footer_protocol", true);
  exp.session.model = config.get_string("backend.model", "gpt-3.5-turbo");
  exp.session.temperature = config.get_double("backend.temperature", 1.0);

  exp.interpreter_cmd = config.get_string("sandbox.interpreter_cmd", "python3");
  exp.limits.wall_timeout_s = config.get_double("sandbox.timeout_s", 120.0);
  exp.limits.output_cap =
      static_cast<std::size_t>(config.get_int("sandbox.output_cap", 2000));

  std::string formulation = config.get_string("formulation", "plane_strain");
  if (formulation == "plane_strain")
    exp.material.formulation = fem::Formulation::plane_strain;
  else if (formulation == "plane_stress")
    exp.material.formulation = fem::Formulation::plane_stress;
  else
    throw ConfigError("formulation must be plane_strain or plane_stress");

  exp.backend = config;
  return exp;
}

std::vector<std::string> query_prompts(const ExperimentConfig& config) {
  std::vector<std::string> prompts = {
      config.query == "q2_planner" ? kQuery2Step1 : kQuery1Step1,
      kQueryStep2,
      kQueryStep3,
      kQueryStep4,
  };
  if (config.level == ClassificationLevel::L2)
    for (int step = 1; step <= 4; ++step)
      prompts[static_cast<std::size_t>(step - 1)] += field_dump_suffix(step);
  return prompts;
}

std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& combination,
                         int trial_index) {
  std::uint64_t h = fnv1a64(std::to_string(base_seed));
  h = fnv1a64("\x1f", h);
  h = fnv1a64(combination, h);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(std::to_string(trial_index), h);
  return h;
}

PlannerSoftware detect_software(const Transcript& transcript,
                                const std::vector<AgentRole>& roles) {
  std::vector<std::string> planner_names;
  for (const AgentRole& role : roles)
    if (role.kind == RoleKind::Planner) planner_names.push_back(role.name);
  if (planner_names.empty()) return PlannerSoftware::none;

  static const std::vector<std::pair<std::string, PlannerSoftware>> kTools = {
      {"fenics", PlannerSoftware::fenics},   {"abaqus", PlannerSoftware::abaqus},
      {"ansys", PlannerSoftware::other},     {"comsol", PlannerSoftware::other},
      {"nastran", PlannerSoftware::other},   {"calculix", PlannerSoftware::other},
      {"openfoam", PlannerSoftware::other},
  };

  bool planner_spoke = false;
  for (const ChatMessage& msg : transcript.messages) {
    if (msg.kind != MessageKind::agent) continue;
    if (std::find(planner_names.begin(), planner_names.end(), msg.sender) ==
        planner_names.end())
      continue;
    planner_spoke = true;
    std::string text = lower(msg.content);
    std::size_t best_pos = std::string::npos;
    PlannerSoftware best = PlannerSoftware::other;
    for (const auto& [keyword, software] : kTools) {
      auto pos = text.find(keyword);
      if (pos != std::string::npos && pos < best_pos) {
        best_pos = pos;
        best = software;
      }
    }
    if (best_pos != std::string::npos) return best;
  }
  // A Planner exists; with no recognizable tool mention the trial is still
  // distinguishable from planner-less runs.
  (void)planner_spoke;
  return PlannerSoftware::other;
}

std::pair<double, double> wilson_interval(int successes, int n, double z) {
  if (n < 1) throw std::invalid_argument("wilson_interval: n must be >= 1");
  if (successes < 0 || successes > n)
    throw std::invalid_argument("wilson_interval: successes out of range");
  double p = static_cast<double>(successes) / n;
  double z2 = z * z;
  double denom = 1.0 + z2 / n;
  double center = (p + z2 / (2.0 * n)) / denom;
  double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  double lo = std::max(0.0, center - half);
  double hi = std::min(1.0, center + half);
  return {lo, hi};
}

RateSummary rate_summary(int successes, int n, double z) {
  RateSummary summary;
  summary.n = n;
  summary.successes = successes;
  auto [lo, hi] = wilson_interval(successes, n, z);
  summary.rate = static_cast<double>(successes) / n;
  summary.wilson_lo = lo;
  summary.wilson_hi = hi;
  return summary;
}

bool step_success(const StepOutcome& outcome, ClassificationLevel level) {
  switch (level) {
    case ClassificationLevel::L0: return outcome.l0_executed;
    case ClassificationLevel::L1: return outcome.l1_artifact;
    case ClassificationLevel::L2: return outcome.l2_verified.value_or(false);
  }
  return false;
}

std::vector<RateSummary> aggregate(const std::vector<TrialRecord>& records,
                                   ClassificationLevel level,
                                   std::optional<PlannerSoftware> software_filter) {
  std::vector<std::string> combo_order;
  std::map<std::string, std::array<std::pair<int, int>, 5>> counts;  // (successes, n)
  for (const TrialRecord& record : records) {
    if (software_filter && record.planner_software != *software_filter) continue;
    if (!counts.count(record.combination)) {
      combo_order.push_back(record.combination);
      counts[record.combination] = {};
    }
    auto& slots = counts[record.combination];
    for (int step = 1; step <= 4; ++step) {
      auto& [successes, n] = slots[static_cast<std::size_t>(step - 1)];
      ++n;
      if (step_success(record.steps[static_cast<std::size_t>(step - 1)], level)) ++successes;
    }
    auto& [complex_successes, complex_n] = slots[4];
    ++complex_n;
    if (step_success(record.steps[2], level) && step_success(record.steps[3], level))
      ++complex_successes;
  }

  const std::string filter_label =
      software_filter ? std::string(planner_software_name(*software_filter)) : "all";
  std::vector<RateSummary> summaries;
  const Scenario scenarios[5] = {Scenario::Displacement, Scenario::ShearDisplacement,
                                 Scenario::Hole, Scenario::Stress, Scenario::Complex};
  for (const std::string& combo : combo_order) {
    for (int s = 0; s < 5; ++s) {
      auto [successes, n] = counts[combo][static_cast<std::size_t>(s)];
      RateSummary summary;
      if (n > 0) summary = rate_summary(successes, n);
      summary.combination = combo;
      summary.scenario = scenario_name(scenarios[s]);
      summary.software_filter = filter_label;
      summaries.push_back(std::move(summary));
    }
  }
  return summaries;
}

TrialRecord run_trial(const std::vector<std::string>& combo, const ExperimentConfig& config,
                      const fs::path& trial_dir, Backend& backend, int trial_index) {
  const auto start = std::chrono::steady_clock::now();
  TrialRecord record;
  record.combination = combination_label(combo);
  record.trial_index = trial_index;

  fs::create_directories(trial_dir);
  fs::path workspace = trial_dir / "workspace";
  fs::create_directories(workspace);

  SessionState state;
  for (const std::string& abbrev : combo) state.roles.push_back(lookup_role(abbrev));
  state.config = config.session;
  state.transcript.metadata.combination = record.combination;
  state.transcript.metadata.backend_id = backend.id();
  state.transcript.metadata.model_id = config.session.model;

  SandboxSetup sandbox;
  sandbox.workspace = workspace;
  sandbox.interpreter_cmd = config.interpreter_cmd;
  sandbox.limits = config.limits;
  const bool has_executor = state.has_kind(RoleKind::Executor);

  std::vector<std::string> prompts = query_prompts(config);
  bool aborted = false;
  for (int step = 1; step <= 4; ++step) {
    StepOutcome& outcome = record.steps[static_cast<std::size_t>(step - 1)];
    outcome.step = step;
    if (aborted) {
      outcome.failure_reason = "skipped";
      continue;
    }
    state.current_step = step;
    StepTrace trace = run_step(state, prompts[static_cast<std::size_t>(step - 1)], backend,
                               has_executor ? &sandbox : nullptr);
    record.environment_error = record.environment_error || trace.environment_error;

    outcome.termination = trace.reason;
    outcome.executor_attempts = trace.executor_attempts;
    outcome.l0_executed = has_executor
                              ? (trace.executor_attempts > 0 && trace.last_execution_ok)
                              : (trace.reason == StepDoneReason::success_path &&
                                 trace.expert_approved);
    if (!outcome.l0_executed) {
      outcome.failure_reason = trace.reason == StepDoneReason::success_path
                                   ? "not_executed"
                                   : std::string(step_done_name(trace.reason));
    }

    bool artifact_ok = false;
    if (step == 1) {
      std::error_code ec;
      auto size = fs::file_size(workspace / "1.png", ec);
      artifact_ok = !ec && size > 0;
    } else {
      for (const auto& [relpath, size] : trace.produced_files)
        if (is_image_file(relpath) && size > 0) artifact_ok = true;
    }
    outcome.l1_artifact = outcome.l0_executed && artifact_ok;
    if (outcome.l0_executed && !outcome.l1_artifact) outcome.failure_reason = "artifact_missing";

    if (config.level == ClassificationLevel::L2) {
      bool verified = false;
      if (outcome.l1_artifact) {
        fs::path field_path = workspace / ("field_step" + std::to_string(step) + ".txt");
        if (!fs::exists(field_path)) {
          outcome.failure_reason = "field_missing";
        } else {
          try {
            fem::FieldData produced = fem::read_field(field_path);
            const fem::StepSolution& reference =
                oracle_solution(step, config.oracle_n, config.material);
            fem::FieldData expected =
                step == 4 ? fem::stress_as_field(reference.mesh, *reference.stress)
                          : fem::displacement_as_field(reference.mesh, reference.displacement);
            double error = fem::compare_fields(produced, expected);
            verified = error <= config.oracle_tolerance;
            if (!verified) outcome.failure_reason = "oracle_mismatch";
          } catch (const std::exception&) {
            outcome.failure_reason = "field_unreadable";
          }
        }
      }
      outcome.l2_verified = verified;
    }

    if (config.abort_on_failure && !step_success(outcome, config.level)) aborted = true;
  }

  record.planner_software = detect_software(state.transcript, state.roles);

  fs::path transcript_path = trial_dir / "transcript.jsonl";
  write_transcript_jsonl(state.transcript, transcript_path);
  record.transcript_path = transcript_path.string();
  record.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

void write_trials_jsonl(const std::vector<TrialRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trials file: " + path.string());
  for (const TrialRecord& record : records) {
    nlohmann::ordered_json rec;
    rec["combination"] = record.combination;
    rec["trial_index"] = record.trial_index;
    rec["transcript"] = record.transcript_path;
    rec["planner_software"] = planner_software_name(record.planner_software);
    rec["environment_error"] = record.environment_error;
    rec["wall_time_s"] = record.wall_time_s;
    rec["tokens"] = {{"prompt", record.tokens.prompt_tokens},
                     {"completion", record.tokens.completion_tokens}};
    auto& steps = rec["steps"] = nlohmann::ordered_json::array();
    for (const StepOutcome& outcome : record.steps) {
      nlohmann::ordered_json step;
      step["step"] = outcome.step;
      step["scenario"] = scenario_name(scenario_for_step(outcome.step));
      step["l0_executed"] = outcome.l0_executed;
      step["l1_artifact"] = outcome.l1_artifact;
      if (outcome.l2_verified)
        step["l2_verified"] = *outcome.l2_verified;
      else
        step["l2_verified"] = nullptr;
      step["termination"] = step_done_name(outcome.termination);
      step["executor_attempts"] = outcome.executor_attempts;
      step["failure_reason"] = outcome.failure_reason;
      steps.push_back(std::move(step));
    }
    out << rec.dump() << '\n';
  }
}

std::vector<TrialRecord> read_trials_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read trials file: " + path.string());
  std::vector<TrialRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line);
    TrialRecord record;
    record.combination = rec.at("combination").get<std::string>();
    record.trial_index = rec.at("trial_index").get<int>();
    record.transcript_path = rec.at("transcript").get<std::string>();
    record.planner_software =
        planner_software_from_name(rec.at("planner_software").get<std::string>());
    record.environment_error = rec.value("environment_error", false);
    record.wall_time_s = rec.value("wall_time_s", 0.0);
    int i = 0;
    for (const auto& step : rec.at("steps")) {
      StepOutcome& outcome = record.steps[static_cast<std::size_t>(i++)];
      outcome.step = step.at("step").get<int>();
      outcome.l0_executed = step.at("l0_executed").get<bool>();
      outcome.l1_artifact = step.at("l1_artifact").get<bool>();
      if (!step.at("l2_verified").is_null())
        outcome.l2_verified = step.at("l2_verified").get<bool>();
      outcome.executor_attempts = step.at("executor_attempts").get<int>();
      outcome.failure_reason = step.at("failure_reason").get<std::string>();
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<TrialRecord> run_matrix(const ExperimentConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);

  struct Task {
    std::size_t slot;
    std::size_t combo_index;
    int trial_index;
  };
  std::vector<Task> tasks;
  for (std::size_t ci = 0; ci < config.combinations.size(); ++ci)
    for (int ti = 0; ti < config.n_runs; ++ti)
      tasks.push_back({tasks.size(), ci, ti});

  std::vector<TrialRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::vector<std::string> errors;

  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      const auto& combo = config.combinations[task.combo_index];
      const std::string label = combination_label(combo);
      char dirname[128];
      std::snprintf(dirname, sizeof dirname, "combo%02zu_%s", task.combo_index,
                    label.c_str());
      char trialname[32];
      std::snprintf(trialname, sizeof trialname, "trial_%03d", task.trial_index);
      fs::path trial_dir = out_dir / dirname / trialname;
      try {
        auto backend =
            make_backend(config.backend, trial_seed(config.seed, label, task.trial_index));
        records[task.slot] = run_trial(combo, config, trial_dir, *backend, task.trial_index);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        errors.push_back(std::string(dirname) + "/" + trialname + ": " + e.what());
      }
    }
  };

  int threads = std::min<int>(config.parallelism, static_cast<int>(tasks.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& thread : pool) thread.join();
  }
  if (!errors.empty())
    throw std::runtime_error("matrix run failed: " + errors.front() + " (and " +
                             std::to_string(errors.size() - 1) + " more)");

  write_trials_jsonl(records, out_dir / "trials.jsonl");
  std::vector<RateSummary> summaries = aggregate(records, config.level);
  emit_report(summaries, out_dir);
  return records;
}

}  // namespace femagents
