#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace krutrim::cli {

// Runs one subcommand. args excludes the program name. Returns the exit code;
// failures print a single "error: ..." line to err.
int dispatch(const std::vector<std::string>& args, std::istream& in = std::cin,
             std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace krutrim::cli
