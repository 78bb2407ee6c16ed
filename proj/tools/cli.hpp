#pragma once

#include <string>
#include <vector>

namespace s2sk::cli {

// Runs the command line. Returns 0 on success, 1 on a validation, I/O or
// numerical failure (one "error: category=... message=..." line on
// stderr), and 2 on a usage error.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args excludes the program name

}  // namespace s2sk::cli
