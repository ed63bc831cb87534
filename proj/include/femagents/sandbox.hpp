#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace femagents {

// One fenced code block lifted from a chat message. The body excludes the
// fence lines themselves.
struct CodeBlock {
  std::string language_tag;
  std::string body;
  int source_message_index = -1;
};

// Scans for triple-backtick fences. An unclosed trailing fence is treated as
// closed at end of text; inline single-backtick spans are ignored.
std::vector<CodeBlock> extract_code_blocks(std::string_view text, int source_message_index = -1);

// Renders a block back into fenced form (inverse of extraction for bodies
// without backtick runs).
std::string render_code_block(const CodeBlock& block);

struct ExecLimits {
  double wall_timeout_s = 120.0;
  std::size_t output_cap = 2000;  // characters kept for chat feedback
};

struct ExecutionResult {
  int exit_code = 0;
  std::string output;  // merged stdout + stderr
  double duration_s = 0.0;
  bool timed_out = false;
  // Files newly created under the workspace (post-minus-pre inventory),
  // relative path and byte size.
  std::vector<std::pair<std::string, std::uintmax_t>> produced_files;
};

// Interpreter binary cannot be found at all. Distinct from a code failure so
// the harness can mark the trial as software-unavailable.
class SandboxEnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SandboxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes each block to `{file_stem}_b{i}` in the workspace and runs them
// sequentially with the workspace as working directory, stopping at the first
// nonzero exit. The result reflects the last block run.
ExecutionResult execute_blocks(const std::vector<CodeBlock>& blocks,
                               const std::filesystem::path& workspace,
                               const ExecLimits& limits,
                               const std::string& interpreter_cmd = "python3",
                               const std::string& file_stem = "snippet");

// `exitcode: {code} ({status})` followed by the captured output, capped at
// limits.output_cap characters with a truncation marker.
std::string format_feedback(const ExecutionResult& result, const ExecLimits& limits);

}  // namespace femagents
