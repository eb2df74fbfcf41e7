#include <string>
#include <vector>

#include "fairdec/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fairdec::run_cli(args);
}
