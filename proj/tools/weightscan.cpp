#include "weightscan/cli.hpp"

int main(int argc, char** argv) { return weightscan::cli::run(argc, argv); }
