#include "peerprof/cli.hpp"

int main(int argc, char** argv) {
  return peerprof::main_entry(std::vector<std::string>(argv, argv + argc));
}
