#include "subspace_probe/cli.hpp"

int main(int argc, char** argv) { return subspace_probe::run_cli(argc, argv); }
