#include <string>
#include <vector>

#include "cra/cli.hpp"

int main(int argc, char** argv) {
  return cra::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
