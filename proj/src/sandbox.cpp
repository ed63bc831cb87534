#include "femagents/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace femagents {
namespace fs = std::filesystem;

namespace {

bool is_fence_line(std::string_view line, std::string_view& tag) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (line.size() - i < 3 || line.compare(i, 3, "```") != 0) return false;
  tag = line.substr(i + 3);
  while (!tag.empty() && std::isspace(static_cast<unsigned char>(tag.back())))
    tag.remove_suffix(1);
  return true;
}

std::vector<std::string> split_command(const std::string& cmd) {
  std::vector<std::string> argv;
  std::istringstream in(cmd);
  std::string word;
  while (in >> word) argv.push_back(word);
  return argv;
}

bool binary_exists(const std::string& name) {
  if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0;
  const char* path = std::getenv("PATH");
  if (!path) return false;
  std::istringstream in(path);
  std::string dir;
  while (std::getline(in, dir, ':')) {
    if (dir.empty()) continue;
    if (::access((dir + "/" + name).c_str(), X_OK) == 0) return true;
  }
  return false;
}

std::set<std::string> workspace_inventory(const fs::path& workspace) {
  std::set<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(workspace)) {
    if (entry.is_regular_file())
      files.insert(fs::relative(entry.path(), workspace).generic_string());
  }
  return files;
}

// Runs one file through the interpreter with merged stdout/stderr and a wall
// clock deadline.
ExecutionResult run_one(const std::vector<std::string>& argv_base, const fs::path& workspace,
                        const fs::path& file, const ExecLimits& limits) {
  ExecutionResult result;
  int pipefd[2];
  if (::pipe(pipefd) != 0) throw SandboxError("pipe() failed");

  const auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(pipefd[0]);
    ::close(pipefd[1]);
    throw SandboxError("fork() failed");
  }
  if (pid == 0) {
    ::close(pipefd[0]);
    ::dup2(pipefd[1], STDOUT_FILENO);
    ::dup2(pipefd[1], STDERR_FILENO);
    ::close(pipefd[1]);
    if (::chdir(workspace.c_str()) != 0) _exit(126);
    std::vector<char*> argv;
    for (const auto& a : argv_base) argv.push_back(const_cast<char*>(a.c_str()));
    std::string fname = file.filename().string();
    argv.push_back(const_cast<char*>(fname.c_str()));
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    _exit(127);
  }
  ::close(pipefd[1]);

  const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(limits.wall_timeout_s));
  std::array<char, 4096> buf;
  bool killed = false;
  for (;;) {
    auto now = std::chrono::steady_clock::now();
    int wait_ms = killed ? 1000
                         : static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                deadline - now)
                                                .count());
    if (!killed && wait_ms <= 0) {
      ::kill(pid, SIGKILL);
      killed = true;
      result.timed_out = true;
      continue;
    }
    struct pollfd pfd{pipefd[0], POLLIN, 0};
    int rc = ::poll(&pfd, 1, wait_ms < 0 ? 0 : wait_ms);
    if (rc > 0) {
      ssize_t n = ::read(pipefd[0], buf.data(), buf.size());
      if (n > 0) {
        result.output.append(buf.data(), static_cast<std::size_t>(n));
        continue;
      }
      break;  // EOF or error: child side closed
    }
    if (rc == 0 && killed) break;  // give up waiting for drained output
  }
  ::close(pipefd[0]);

  int status = 0;
  ::waitpid(pid, &status, 0);
  result.duration_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (WIFEXITED(status))
    result.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    result.exit_code = 128 + WTERMSIG(status);
  else
    result.exit_code = -1;
  if (result.timed_out && result.exit_code == 0) result.exit_code = 124;
  return result;
}

}  // namespace

std::vector<CodeBlock> extract_code_blocks(std::string_view text, int source_message_index) {
  std::vector<CodeBlock> blocks;
  std::istringstream in{std::string(text)};
  std::string line;
  bool in_block = false;
  CodeBlock current;
  std::string body;
  while (std::getline(in, line)) {
    std::string_view tag;
    if (is_fence_line(line, tag)) {
      if (!in_block) {
        in_block = true;
        current = CodeBlock{std::string(tag), "", source_message_index};
        body.clear();
      } else {
        current.body = body;
        blocks.push_back(current);
        in_block = false;
      }
      continue;
    }
    if (in_block) {
      body += line;
      body += '\n';
    }
  }
  if (in_block) {  // unclosed trailing fence: close at end of text
    current.body = body;
    blocks.push_back(current);
  }
  return blocks;
}

std::string render_code_block(const CodeBlock& block) {
  std::string out = "```" + block.language_tag + "\n" + block.body;
  if (!out.empty() && out.back() != '\n') out += '\n';
  out += "```\n";
  return out;
}

ExecutionResult execute_blocks(const std::vector<CodeBlock>& blocks, const fs::path& workspace,
                               const ExecLimits& limits, const std::string& interpreter_cmd,
                               const std::string& file_stem) {
  if (!fs::is_directory(workspace))
    throw SandboxError("workspace does not exist: " + workspace.string());
  std::vector<std::string> argv = split_command(interpreter_cmd);
  if (argv.empty()) throw SandboxError("empty interpreter command");
  if (!binary_exists(argv[0]))
    throw SandboxEnvironmentError("interpreter not found: " + argv[0]);

  const auto before = workspace_inventory(workspace);

  ExecutionResult result;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    fs::path file = workspace / (file_stem + "_b" + std::to_string(i));
    {
      std::ofstream out(file, std::ios::binary);
      if (!out) throw SandboxError("cannot write source file: " + file.string());
      out << blocks[i].body;
    }
    result = run_one(argv, workspace, file, limits);
    if (result.exit_code != 0) break;  // stop-on-failure
  }

  const auto after = workspace_inventory(workspace);
  for (const auto& rel : after) {
    if (before.count(rel)) continue;
    bool is_source = rel.rfind(file_stem + "_b", 0) == 0;
    if (is_source) continue;
    std::error_code ec;
    std::uintmax_t size = fs::file_size(workspace / rel, ec);
    result.produced_files.emplace_back(rel, ec ? 0 : size);
  }
  return result;
}

std::string format_feedback(const ExecutionResult& result, const ExecLimits& limits) {
  const char* status = result.exit_code == 0 ? "execution succeeded" : "execution failed";
  std::string out = "exitcode: " + std::to_string(result.exit_code) + " (" + status +
                    ")\nCode output:\n";
  if (result.output.size() > limits.output_cap) {
    out += result.output.substr(0, limits.output_cap);
    out += "\n[...truncated...]";
  } else {
    out += result.output;
  }
  return out;
}

}  // namespace femagents
