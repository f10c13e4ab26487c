#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sqgen/corpus.hpp"

namespace sqgen::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

// Parses argv (argv[0] is the program name) and runs one subcommand.
// Never throws; failures map to the exit codes above.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Prepared-example JSONL, one object per line.
std::string example_to_json(const PreparedExample& ex);
PreparedExample example_from_json(const std::string& line);
std::vector<PreparedExample> read_examples(const std::string& path);
void write_examples(const std::string& path, const std::vector<PreparedExample>& examples);

// `git describe --always --dirty` of the source tree, or "unknown".
std::string git_describe();

}  // namespace sqgen::cli
