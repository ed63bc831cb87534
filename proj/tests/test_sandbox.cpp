#include <fstream>
#include <random>

#include "doctest.h"
#include "femagents/sandbox.hpp"
#include "temp_dir.hpp"

using namespace femagents;
namespace fs = std::filesystem;

TEST_SUITE("sandbox") {

TEST_CASE("extracts a single fenced block from an engineer message") {
  const std::string message =
      "Engineer (to chat_manager):\n\n"
      "```\n"
      "...\n"
      "# Create mesh\n"
      "mesh = UnitSquareMesh(50, 50)\n"
      "x, y = SpatialCoordinate(mesh)\n"
      "domain = Circle(Point(0.5, 0.5), 0.2)\n"
      "...\n"
      "```\n";
  auto blocks = extract_code_blocks(message, 3);
  REQUIRE(blocks.size() == 1);
  CHECK(blocks[0].language_tag.empty());
  CHECK(blocks[0].source_message_index == 3);
  CHECK(blocks[0].body.find("mesh = UnitSquareMesh(50, 50)") != std::string::npos);
}

TEST_CASE("keeps language tags and multiple blocks in order") {
  auto blocks = extract_code_blocks(
      "intro\n```python\nprint(1)\n```\nmiddle prose\n```sh\necho hi\n```\n");
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0].language_tag == "python");
  CHECK(blocks[0].body == "print(1)\n");
  CHECK(blocks[1].language_tag == "sh");
  CHECK(blocks[1].body == "echo hi\n");
}

TEST_CASE("an unclosed trailing fence is closed at end of text") {
  auto blocks = extract_code_blocks("text\n```python\nx = 1\ny = 2\n");
  REQUIRE(blocks.size() == 1);
  CHECK(blocks[0].body == "x = 1\ny = 2\n");
}

TEST_CASE("inline backticks and indented fences") {
  CHECK(extract_code_blocks("use the `Circle` function from `mshr`").empty());
  auto blocks = extract_code_blocks("  ```python\n  a = 1\n  ```\n");
  REQUIRE(blocks.size() == 1);
  CHECK(blocks[0].body == "  a = 1\n");
}

TEST_CASE("render is the inverse of extraction") {
  CodeBlock block{"python", "print('ok')\n", -1};
  std::string rendered = render_code_block(block);
  CHECK(rendered == "```python\nprint('ok')\n```\n");
  auto back = extract_code_blocks(rendered);
  REQUIRE(back.size() == 1);
  CHECK(back[0].language_tag == block.language_tag);
  CHECK(back[0].body == block.body);
}

TEST_CASE("property: extract(render(blocks)) round trips 1000 random cases") {
  std::mt19937 rng(20240811);
  const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-+=.,:;()[]{}#'\"!";
  auto rand_line = [&](std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::string line;
    std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) line.push_back(alphabet[pick(rng)]);
    return line;
  };
  const char* tags[] = {"", "python", "sh", "text"};

  for (int iteration = 0; iteration < 1000; ++iteration) {
    std::uniform_int_distribution<int> block_count(1, 4);
    std::uniform_int_distribution<int> line_count(0, 6);
    std::uniform_int_distribution<int> tag_pick(0, 3);
    int n_blocks = block_count(rng);
    std::vector<CodeBlock> expected;
    std::string message = rand_line(40) + "\n";
    for (int b = 0; b < n_blocks; ++b) {
      CodeBlock block;
      block.language_tag = tags[tag_pick(rng)];
      int lines = line_count(rng);
      for (int l = 0; l < lines; ++l) block.body += rand_line(60) + "\n";
      expected.push_back(block);
      message += render_code_block(block);
      message += rand_line(40) + "\n";
    }
    auto actual = extract_code_blocks(message);
    REQUIRE(actual.size() == expected.size());
    for (std::size_t i = 0; i < actual.size(); ++i) {
      CHECK(actual[i].language_tag == expected[i].language_tag);
      CHECK(actual[i].body == expected[i].body);
    }
  }
}

TEST_CASE("executes python blocks and captures merged output") {
  femagents::testing::TempDir dir;
  std::vector<CodeBlock> blocks = {
      {"python", "import sys\nprint(\"to stdout\")\nprint(\"to stderr\", file=sys.stderr)\n",
       0}};
  auto result = execute_blocks(blocks, dir.path, {}, "python3", "step1_v1");
  CHECK(result.exit_code == 0);
  CHECK_FALSE(result.timed_out);
  CHECK(result.output.find("to stdout") != std::string::npos);
  CHECK(result.output.find("to stderr") != std::string::npos);
  CHECK(fs::exists(dir.path / "step1_v1_b0"));
}

TEST_CASE("a NameError block exits nonzero with the traceback captured") {
  femagents::testing::TempDir dir;
  std::vector<CodeBlock> blocks = {{"python", "domain = Circle(Point(0.5, 0.5), 0.2)\n", 0}};
  auto result = execute_blocks(blocks, dir.path, {}, "python3", "snippet");
  CHECK(result.exit_code != 0);
  CHECK(result.output.find("NameError") != std::string::npos);
  CHECK(result.output.find("'Circle'") != std::string::npos);
}

TEST_CASE("produced files are the post-minus-pre inventory without sources") {
  femagents::testing::TempDir dir;
  {
    std::ofstream pre(dir.path / "already-there.txt");
    pre << "x";
  }
  std::vector<CodeBlock> blocks = {
      {"python", "with open(\"1.png\", \"wb\") as f:\n    f.write(b\"abc\")\n", 0}};
  auto result = execute_blocks(blocks, dir.path, {}, "python3", "run");
  REQUIRE(result.exit_code == 0);
  REQUIRE(result.produced_files.size() == 1);
  CHECK(result.produced_files[0].first == "1.png");
  CHECK(result.produced_files[0].second == 3);
}

TEST_CASE("stops at the first failing block") {
  femagents::testing::TempDir dir;
  std::vector<CodeBlock> blocks = {
      {"python", "raise SystemExit(3)\n", 0},
      {"python", "with open(\"late.txt\", \"w\") as f:\n    f.write(\"no\")\n", 0}};
  auto result = execute_blocks(blocks, dir.path, {}, "python3", "run");
  CHECK(result.exit_code == 3);
  CHECK_FALSE(fs::exists(dir.path / "late.txt"));
}

TEST_CASE("wall timeout kills the child") {
  femagents::testing::TempDir dir;
  ExecLimits limits;
  limits.wall_timeout_s = 0.5;
  std::vector<CodeBlock> blocks = {{"python", "import time\ntime.sleep(30)\n", 0}};
  auto result = execute_blocks(blocks, dir.path, limits, "python3", "run");
  CHECK(result.timed_out);
  CHECK(result.exit_code != 0);
  CHECK(result.duration_s < 10.0);
}

TEST_CASE("a missing interpreter is an environment error") {
  femagents::testing::TempDir dir;
  std::vector<CodeBlock> blocks = {{"python", "print(1)\n", 0}};
  CHECK_THROWS_AS(
      execute_blocks(blocks, dir.path, {}, "definitely-not-an-interpreter-7f3a", "run"),
      SandboxEnvironmentError);
}

TEST_CASE("feedback format matches the executor transcript style byte for byte") {
  ExecutionResult failing;
  failing.exit_code = 1;
  failing.output = "Traceback (most recent call last):\nNameError: name 'Circle' is not defined\n";
  std::string feedback = format_feedback(failing, {});
  CHECK(feedback.rfind("exitcode: 1 (execution failed)\nCode output:\n", 0) == 0);
  CHECK(feedback ==
        "exitcode: 1 (execution failed)\nCode output:\n"
        "Traceback (most recent call last):\nNameError: name 'Circle' is not defined\n");

  ExecutionResult passing;
  passing.exit_code = 0;
  passing.output = "ok\n";
  CHECK(format_feedback(passing, {}) == "exitcode: 0 (execution succeeded)\nCode output:\nok\n");
}

TEST_CASE("feedback output is capped with a truncation marker") {
  ExecutionResult result;
  result.exit_code = 0;
  result.output = std::string(5000, 'x');
  ExecLimits limits;
  limits.output_cap = 100;
  std::string feedback = format_feedback(result, limits);
  CHECK(feedback.size() < 200);
  CHECK(feedback.find("[...truncated...]") != std::string::npos);
}

}  // TEST_SUITE
