// Regenerates the replay fixtures: make_fixtures <output dir>
#include <iostream>

#include "fixture_scripts.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <output dir>\n";
    return 2;
  }
  try {
    for (const auto& name : pda::fixtures::write_all(argv[1])) std::cout << "wrote " << name << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
