#include <string>
#include <vector>

#include "mixupe/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mixupe::cli_main(args);
}
