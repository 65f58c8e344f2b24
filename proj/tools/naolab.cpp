#include <string>
#include <vector>

#include "nao/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return nao::cli::run_cli(std::move(args));
}
