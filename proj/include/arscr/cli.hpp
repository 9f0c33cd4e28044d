#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace arscr {

/// Entry point of the `arscr` tool. Returns the process exit code; on failure
/// a single JSON line {"error": kind, "message": ..., "path": ...} goes to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace arscr
