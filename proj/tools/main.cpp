#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  qte::cli::tune_allocator();
  return qte::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
