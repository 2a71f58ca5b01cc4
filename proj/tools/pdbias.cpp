#include "pdbias/cli.hpp"

int main(int argc, char** argv) { return pdbias::cli::run(argc, argv); }
