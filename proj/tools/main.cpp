#include <vector>

#include "empc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return empc::run_command(args);
}
