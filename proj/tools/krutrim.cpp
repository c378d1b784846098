#include <string>
#include <vector>

#include "krutrim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return krutrim::cli::dispatch(args);
}
