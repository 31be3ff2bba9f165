#include <string>
#include <vector>

#include "rispa/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rispa::cli::run(args);
}
