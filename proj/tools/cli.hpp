#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace chatassist {

// Runs one chatassist subcommand. Reports go to `out`, machine-readable errors
// to `err`. Returns 0 on success, 2 on bad arguments, 1 on other failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace chatassist
