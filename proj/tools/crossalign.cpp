#include <iostream>

#include "crossalign/commands.hpp"

int main(int argc, char** argv) {
  crossalign::tune_allocator();
  return crossalign::run_cli(argc, argv, std::cout, std::cerr);
}
