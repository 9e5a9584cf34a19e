#include "depthprune/cli.hpp"

int main(int argc, char** argv) { return depthprune::run_cli(argc, argv); }
