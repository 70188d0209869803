#include "lmr/cli.hpp"

int main(int argc, char** argv) {
  return lmr::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
