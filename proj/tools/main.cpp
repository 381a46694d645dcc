#include <string>
#include <vector>

#include "rclstr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rclstr::cli::cli_main(args);
}
