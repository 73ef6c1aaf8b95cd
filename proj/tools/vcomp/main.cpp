#include "cli.hpp"

int main(int argc, char** argv) { return vcomp::cli::run(argc, argv); }
