#include "nac/cli.hpp"

int main(int argc, char** argv) { return nac::run_cli(argc, argv); }
