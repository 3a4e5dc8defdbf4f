#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bitsplit {

/// Runs the command-line interface; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bitsplit
