#include <vector>
#include <string>

#include "mmworld/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mmw::run_cli(args);
}
