#include <iostream>

#include "schedopt/cli.hpp"

int main(int argc, char** argv) {
  return schedopt::dispatch({argv + 1, argv + argc}, std::cout, std::cerr);
}
