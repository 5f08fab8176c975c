#include <string>
#include <vector>

#include "mdx/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mdx::cli::run(args);
}
