#include <iostream>

#include "marlsim/app.hpp"

int main(int argc, char** argv) { return marlsim::run_cli(argc, argv, std::cout, std::cerr); }
