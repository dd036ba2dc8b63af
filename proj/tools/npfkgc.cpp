#include "npfkgc/cli.hpp"

int main(int argc, char** argv) { return npfkgc::cli::main(argc, argv); }
